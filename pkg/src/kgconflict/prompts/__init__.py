"""Prompt templates shipped as package data.

Templates use ``{name}`` placeholders that are substituted by plain string
replacement (not str.format), so braces inside user content are inert.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

EXTRACT_TRIPLES = "extract_triples.txt"
KEY_ELEMENTS = "key_elements.txt"
ANSWER_PARAMETRIC = "answer_parametric.txt"
ANSWER_AUGMENTED = "answer_augmented.txt"

# Appended to the extraction prompt on the single repair retry.
REPAIR_NOTE = (
    "Your previous reply was not valid JSON of the required shape. "
    "Return ONLY the JSON array described above."
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (resources.files(__package__) / name).read_text(encoding="utf-8")


def render(name: str, **slots: str) -> str:
    text = load_template(name)
    for key, value in slots.items():
        text = text.replace("{" + key + "}", value)
    return text
