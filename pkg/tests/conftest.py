from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixtures  # noqa: E402

from kgconflict import PipelineConfig, load_mock_script  # noqa: E402


@pytest.fixture
def replay_script_path(tmp_path) -> Path:
    return fixtures.write_script(
        tmp_path / "replay_script.jsonl", fixtures.replay_script_entries()
    )


@pytest.fixture
def replay_gateway(replay_script_path):
    return load_mock_script(replay_script_path)


@pytest.fixture
def replay_dataset_path(tmp_path) -> Path:
    record = fixtures.replay_dataset_record()
    path = tmp_path / "replay_dataset.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def replay_config(replay_script_path) -> PipelineConfig:
    return PipelineConfig(mock_script=str(replay_script_path))
