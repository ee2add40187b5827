"""Deterministic named RNG streams.

Every random draw in the pipeline comes from a counter-based Philox stream
keyed by (root seed, name parts). Streams are independent of each other and
of execution order, so per-consumer simulation and per-tree forest fitting
can be parallelized without changing results.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["subseed", "stream"]


def subseed(root: int, *parts) -> int:
    """Derive a stable 64-bit sub-seed from a root seed and name parts."""
    text = ":".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(root: int, *parts) -> np.random.Generator:
    """A Philox generator keyed by (root, *parts)."""
    return np.random.Generator(np.random.Philox(key=subseed(root, *parts)))
