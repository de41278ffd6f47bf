"""Deterministic splittable random streams.

Every stochastic routine takes an explicit `numpy.random.Generator`.  Streams
are derived from a master seed plus a tuple of integer/string keys through
`SeedSequence` spawn keys, so any (seed, key-path) pair names one stream
independent of scheduling or call order.  String keys are hashed with
sha256 (never the salted builtin `hash`) to stay stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["key_to_int", "substream", "quantized_state_key"]


def key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream named by (seed, keys)."""
    spawn = tuple(key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))


def quantized_state_key(x: np.ndarray, tol: float = 1e-9) -> bytes:
    """Stable bytes key for a state vector quantized to `tol`.

    Used to memoize ergodic estimates and to derive per-query seeds, so a
    revisited state reproduces the identical estimate.
    """
    q = np.round(np.asarray(x, dtype=float) / tol).astype(np.int64)
    return hashlib.sha256(q.tobytes()).digest()
