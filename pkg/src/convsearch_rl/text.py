"""Shared text normalization for retrieval, rewards and masking."""

from __future__ import annotations

import re
import string
import unicodedata

_ARTICLES = re.compile(r"\b(a|an|the)\b")

# ASCII punctuation plus every BMP code point in a P* category
_PUNCT = frozenset(string.punctuation) | frozenset(
    ch for ch in map(chr, range(0x10000))
    if unicodedata.category(ch).startswith("P")
)
_PUNCT_TABLE = {ord(ch): None for ch in _PUNCT}


def strip_punctuation(text: str) -> str:
    return text.translate(_PUNCT_TABLE)


def normalize_answer(text: str) -> list[str]:
    """Lowercase, drop punctuation and the articles a/an/the, split on whitespace.

    >>> normalize_answer("The Night Chicago Died!")
    ['night', 'chicago', 'died']
    """
    text = strip_punctuation(text.lower())
    text = _ARTICLES.sub(" ", text)
    return text.split()


def retrieval_tokens(text: str) -> list[str]:
    """Tokenizer used by the lexical index: lowercase and punctuation strip only."""
    return strip_punctuation(text.lower()).split()


def word_tokens(text: str) -> list[str]:
    return text.split()
