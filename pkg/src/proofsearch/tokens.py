"""Shared tokenizer for premise retrieval and hint mining.

Splits on non-alphanumeric/underscore boundaries, lowercases, and drops
single-character tokens.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+")


def tokenize(text: str) -> list[str]:
    """Return the token multiset of ``text`` as an ordered list."""
    return [t.lower() for t in _TOKEN_RE.findall(text) if len(t) > 1]
