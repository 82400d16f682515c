"""Shared text utilities.

The same tokenizer drives the note-length filter, bag-of-words / TF-IDF
features, and class-based keyword scoring, so every stage agrees on what a
"token" is.
"""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumerics, drop 1-char terms."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


def token_count(text: str) -> int:
    return len(tokenize(text))


def squash_ws(text: str) -> str:
    """Collapse whitespace and lowercase; used for substring containment checks."""
    return " ".join(text.lower().split())
