"""Tokenization, hashing and stopword helpers shared by the mock backend and rule modes."""

from __future__ import annotations

import re
import string
from functools import lru_cache
from importlib import resources

_SPLIT = re.compile(r"[\s" + re.escape(string.punctuation) + r"]+")

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def tokenize(text: str) -> list[str]:
    """Lowercased tokens split on whitespace and ASCII punctuation."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


def fnv1a_64(data: str | bytes) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    raw = resources.files("tabtextqa").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip() for line in raw.splitlines() if line.strip() and not line.startswith("#")
    )


def content_tokens(text: str) -> list[str]:
    stop = stopwords()
    return [tok for tok in tokenize(text) if tok not in stop]
