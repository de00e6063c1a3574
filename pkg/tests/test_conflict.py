"""Entropy metric, baselines, corrective filtering, and resolution."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fixtures

from kgconflict import (
    EmptySequence,
    EntropyReport,
    FallbackExhausted,
    ReasoningPath,
    ResolutionConfig,
    TokenCandidate,
    TokenLogprobs,
    TokenPosition,
    ValidationError,
    augmented_entropy,
    filter_corrective,
    load_mock_script,
    mean_token_entropy,
    parametric_baseline,
    resolve,
)

def _tokens(position_logprobs: list[list[float]]) -> TokenLogprobs:
    positions = []
    for i, lps in enumerate(position_logprobs):
        cands = tuple(
            TokenCandidate(token=f"t{i}c{j}", logprob=lp)
            for j, lp in enumerate(lps)
        )
        positions.append(TokenPosition(token=f"t{i}c0", candidates=cands))
    return TokenLogprobs(positions=tuple(positions))


def entropy_oracle_bits(position_logprobs: list[list[float]]) -> float:
    """Independent brute-force: plain exp + fsum renormalization, log2 sum."""
    per_position = []
    for lps in position_logprobs:
        masses = [math.exp(lp) for lp in lps]
        total = math.fsum(masses)
        probs = [m / total for m in masses]
        h = -math.fsum(p * math.log2(p) for p in probs if p > 0.0)
        per_position.append(h)
    return math.fsum(per_position) / len(per_position)


def _gw(tmp_path, entries):
    return load_mock_script(fixtures.write_script(tmp_path / "s.jsonl", entries))


# ---------------------------------------------------------------------------
# mean_token_entropy


def test_uniform_over_four_is_two_bits():
    lp = math.log(0.25)
    assert mean_token_entropy(_tokens([[lp, lp, lp, lp]])) == pytest.approx(
        2.0, abs=1e-12
    )


def test_deterministic_sequence_is_zero():
    tokens = _tokens([[0.0], [0.0], [0.0]])
    assert mean_token_entropy(tokens) == 0.0


def test_entropy_matches_oracle_on_random_distributions():
    rng = np.random.default_rng(123)
    for _ in range(200):
        length = int(rng.integers(1, 50))
        positions = []
        for _ in range(length):
            k = int(rng.integers(1, 11))
            weights = rng.random(k) + 1e-3
            probs = weights / weights.sum()
            positions.append([math.log(p) for p in probs])
        tokens = _tokens(positions)
        assert mean_token_entropy(tokens) == pytest.approx(
            entropy_oracle_bits(positions), abs=1e-9
        )


def test_entropy_renormalizes_partial_mass():
    # Two candidates at raw mass 0.25 each renormalize to a uniform pair.
    lp = math.log(0.25)
    assert mean_token_entropy(_tokens([[lp, lp]])) == pytest.approx(1.0, abs=1e-12)


def test_entropy_empty_sequence_rejected():
    with pytest.raises(EmptySequence):
        mean_token_entropy(TokenLogprobs(positions=()))


def test_entropy_single_candidate_with_tiny_mass_is_zero():
    # Renormalization turns a lone candidate into certainty.
    assert mean_token_entropy(_tokens([[-700.0]])) == 0.0


def test_entropy_extreme_logprob_spread_is_finite():
    value = mean_token_entropy(_tokens([[-0.0001, -745.0]]))
    assert 0.0 <= value < 1e-8


@settings(max_examples=100, deadline=None)
@given(
    data=st.lists(
        st.lists(
            st.floats(min_value=0.01, max_value=1.0, allow_nan=False),
            min_size=1, max_size=10,
        ),
        min_size=1, max_size=20,
    ),
    seed=st.integers(min_value=0, max_value=2**20),
)
def test_entropy_permutation_and_repetition_invariance(data, seed):
    positions = []
    for weights in data:
        total = math.fsum(weights)
        positions.append([math.log(w / total) for w in weights])
    base = mean_token_entropy(_tokens(positions))
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(positions)))
    permuted = mean_token_entropy(_tokens([positions[i] for i in order]))
    assert permuted == pytest.approx(base, abs=1e-12)
    doubled = mean_token_entropy(_tokens(positions + positions))
    assert doubled == pytest.approx(base, abs=1e-12)
    max_k = max(len(w) for w in data)
    assert 0.0 <= base <= math.log2(max_k) + 1e-12


# ---------------------------------------------------------------------------
# Baselines via scripted backend


def test_parametric_baseline_uniform_pairs(tmp_path):
    tokens = [
        {"token": "an", "candidates": [["an", math.log(0.5)],
                                       ["x", math.log(0.5)]]},
        {"token": "swer", "candidates": [["swer", math.log(0.5)],
                                         ["y", math.log(0.5)]]},
    ]
    gw = _gw(tmp_path, [
        fixtures.gen_entry("Answer the question from your own knowledge",
                           "answer", tokens, regex=True),
    ])
    answer, h = parametric_baseline("q?", gw, ResolutionConfig())
    assert answer == "answer"
    assert h == pytest.approx(1.0, abs=1e-12)


def test_parametric_baseline_deterministic_answer_zero_entropy(tmp_path):
    gw = _gw(tmp_path, [
        fixtures.gen_entry("Answer the question from your own knowledge",
                           "fact", fixtures.one_token("fact"), regex=True),
    ])
    _, h = parametric_baseline("q?", gw, ResolutionConfig())
    assert h == 0.0


def test_replay_parametric_answer_differs_from_gold(replay_gateway):
    answer, h = parametric_baseline(
        fixtures.REPLAY_QUESTION, replay_gateway, ResolutionConfig()
    )
    assert "Sinaloa" not in answer
    assert h == pytest.approx(fixtures.H_PARAM_BITS, abs=1e-12)


def _rendered_path(context: str) -> ReasoningPath:
    from kgconflict.retrieval import PathEdge

    return ReasoningPath(
        nodes=("a", "b"),
        edges=(PathEdge(relation="r", triple_index=0, direction="forward"),),
        rendered_context=context,
    )


def test_augmented_entropy_same_distribution_gives_zero_delta(tmp_path):
    dist = fixtures.sharp_tokens(["same"], p=0.7)
    gw = _gw(tmp_path, [
        fixtures.gen_entry("Answer the question from your own knowledge",
                           "same", dist, regex=True),
        fixtures.gen_entry("Use the reference information below",
                           "same", dist, regex=True),
    ])
    cfg = ResolutionConfig()
    _, h_param = parametric_baseline("q?", gw, cfg)
    _, h_aug = augmented_entropy("q?", _rendered_path("ctx"), gw, cfg)
    assert h_aug - h_param == 0.0


def test_augmented_entropy_direction_of_change(tmp_path):
    flat = fixtures.uniform_tokens(["flat"])        # 2 bits
    sharp = fixtures.sharp_tokens(["calm"], p=0.99)  # ~0.08 bits
    base = fixtures.sharp_tokens(["base"], p=0.9)    # ~0.47 bits
    gw = _gw(tmp_path, [
        fixtures.gen_entry("conflicting evidence", "flat", flat, regex=True),
        fixtures.gen_entry("supporting evidence", "calm", sharp, regex=True),
        fixtures.gen_entry("Answer the question from your own knowledge",
                           "base", base, regex=True),
    ])
    cfg = ResolutionConfig()
    _, h_param = parametric_baseline("q?", gw, cfg)
    _, h_conflict = augmented_entropy(
        "q?", _rendered_path("conflicting evidence"), gw, cfg
    )
    _, h_support = augmented_entropy(
        "q?", _rendered_path("supporting evidence"), gw, cfg
    )
    assert h_param == pytest.approx(fixtures.two_way_entropy_bits(0.9), abs=1e-12)
    assert h_conflict == pytest.approx(2.0, abs=1e-12)
    assert h_support == pytest.approx(
        fixtures.two_way_entropy_bits(0.99), abs=1e-12
    )
    assert h_conflict > h_param
    assert h_support < h_param


def test_augmented_entropy_requires_rendered_context(tmp_path):
    gw = _gw(tmp_path, [])
    path = _rendered_path("x")
    path.rendered_context = None
    with pytest.raises(ValidationError):
        augmented_entropy("q?", path, gw, ResolutionConfig())


# ---------------------------------------------------------------------------
# filter_corrective


def test_filter_corrective_strict_threshold():
    paths = ["p0", "p1", "p2"]
    assert filter_corrective(paths, [1.2, 0.3, 2.5], tau=1.0) == ["p0", "p2"]


def test_filter_corrective_all_below_is_empty():
    assert filter_corrective(["a", "b"], [0.1, -0.5], tau=1.0) == []


def test_filter_corrective_boundary_is_strict():
    assert filter_corrective(["a"], [3.0], tau=3.0) == []


def test_filter_corrective_preserves_order():
    paths = list("abcdef")
    deltas = [5.0, 0.0, 4.0, 9.0, -1.0, 3.1]
    assert filter_corrective(paths, deltas, tau=3.0) == ["a", "c", "d", "f"]


def test_filter_monotonic_in_tau():
    rng = np.random.default_rng(5)
    for _ in range(50):
        paths = list(range(int(rng.integers(0, 12))))
        deltas = list(rng.normal(1.0, 2.0, len(paths)))
        smaller = set(filter_corrective(paths, deltas, tau=1.0))
        larger = set(filter_corrective(paths, deltas, tau=3.0))
        assert larger <= smaller


# ---------------------------------------------------------------------------
# resolve


def _resolution_entries(deltas_flat: list[bool]):
    """Parametric plus one augmented entry per context marker ctx<i>."""
    entries = []
    for i, flat in enumerate(deltas_flat):
        dist = (fixtures.uniform_tokens(["hot"]) if flat
                else fixtures.sharp_tokens(["cold"], p=0.95))
        text = "hot" if flat else "cold"
        entries.append(
            fixtures.gen_entry(f"ctx{i}\\b", text, dist, regex=True)
        )
    entries.append(
        fixtures.gen_entry("Use the reference information below", "raw",
                           fixtures.one_token("raw"), regex=True)
    )
    entries.append(
        fixtures.gen_entry("Answer the question from your own knowledge",
                           "base", fixtures.sharp_tokens(["base"], p=0.9),
                           regex=True)
    )
    return entries


def _paths(n):
    return [_rendered_path(f"ctx{i} content") for i in range(n)]


def test_resolve_selects_corrective_paths(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False, True, False]))
    outcome = resolve("q?", _paths(3), gw, ResolutionConfig(tau=1.0))
    assert outcome.fallback_used == "none"
    assert [p.rendered_context for p in outcome.corrective_paths] == [
        "ctx1 content"
    ]
    assert outcome.final_context == "ctx1 content"
    assert outcome.response == "hot"
    flags = [p.corrective for p in outcome.report.per_path]
    assert flags == [False, True, False]
    # Corrective flags reconstruct the corrective set exactly.
    assert outcome.report.corrective_indexes() == [1]


def test_resolve_concatenates_multiple_corrective_contexts(tmp_path):
    entries = _resolution_entries([True, False, True])
    # The concatenated two-context prompt needs its own entry; the ctx0
    # entry would match first, which is fine for response selection.
    gw = _gw(tmp_path, entries)
    outcome = resolve("q?", _paths(3), gw, ResolutionConfig(tau=1.0))
    assert outcome.final_context == "ctx0 content\n-----\nctx2 content"
    assert [p.rendered_context for p in outcome.corrective_paths] == [
        "ctx0 content", "ctx2 content"
    ]


def test_resolve_falls_back_to_top_delta(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False, False]))
    outcome = resolve("q?", _paths(2), gw,
                      ResolutionConfig(tau=5.0, fallback="top_delta"))
    assert outcome.fallback_used == "top_delta"
    assert outcome.corrective_paths == []
    # Equal deltas: the first maximal path wins deterministically.
    assert outcome.final_context == "ctx0 content"


def test_resolve_raw_context_fallback_when_no_paths(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([]))
    outcome = resolve("q?", [], gw, ResolutionConfig(tau=1.0),
                      raw_context="the raw retrieved text")
    assert outcome.fallback_used == "raw_context"
    assert outcome.response == "raw"
    assert outcome.report.per_path == []


def test_resolve_configured_raw_fallback_wins_over_paths(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False]))
    outcome = resolve("q?", _paths(1), gw,
                      ResolutionConfig(tau=5.0, fallback="raw_context"),
                      raw_context="the raw retrieved text")
    assert outcome.fallback_used == "raw_context"


def test_resolve_raw_fallback_cascades_to_top_delta_without_raw(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False]))
    outcome = resolve("q?", _paths(1), gw,
                      ResolutionConfig(tau=5.0, fallback="raw_context"))
    assert outcome.fallback_used == "top_delta"


def test_resolve_exhausted_without_paths_or_raw(tmp_path):
    gw = _gw(tmp_path, [])
    with pytest.raises(FallbackExhausted):
        resolve("q?", [], gw, ResolutionConfig())


def test_resolve_corrective_nonempty_implies_no_fallback(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([True]))
    outcome = resolve("q?", _paths(1), gw, ResolutionConfig(tau=1.0))
    assert outcome.corrective_paths and outcome.fallback_used == "none"


def test_resolve_deterministic_across_calls(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False, True]))
    cfg = ResolutionConfig(tau=1.0)
    first = resolve("q?", _paths(2), gw, cfg)
    second = resolve("q?", _paths(2), gw, cfg)
    assert first.response == second.response
    assert first.report == second.report
    assert first.final_context == second.final_context


def test_resolve_parallel_equals_serial(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([False, True, False, True]))
    cfg = ResolutionConfig(tau=1.0)
    serial = resolve("q?", _paths(4), gw, cfg, parallelism=1)
    parallel = resolve("q?", _paths(4), gw, cfg, parallelism=4)
    assert serial.report == parallel.report
    assert serial.response == parallel.response


def test_entropy_report_round_trips_via_dict(tmp_path):
    gw = _gw(tmp_path, _resolution_entries([True, False]))
    outcome = resolve("q?", _paths(2), gw, ResolutionConfig(tau=1.0))
    report = EntropyReport.from_dict(outcome.report.to_dict())
    assert report == outcome.report
    for entry in report.per_path:
        assert entry.delta_h == entry.h_aug - report.h_param
        assert entry.corrective == (entry.delta_h > report.tau)
