"""Deterministic seed fan-out: every stage draws from one root seed."""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *names: object) -> int:
    """Derive a child seed from a root seed and a path of stage names.

    Stable across runs, platforms and thread schedules (unlike ``hash()``).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode("utf-8"))
    for name in names:
        h.update(b"/")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")


def text_fingerprint(text: str) -> bytes:
    """Short stable digest of a text, used to key per-pair randomness."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
