"""Deterministic noise streams keyed by (record-id, source-id, sample-index).

Every estimator draw comes from a Philox generator whose key is a hash of
(root entropy, record-id, source-key). Estimates are therefore reproducible
for a fixed root, independent of batch composition, and invariant to the
order in which sources are listed: the stream follows the source id, not
its position. Sample index k maps to draw order within a stream.

Source keys >= 0 are source ids; the fused and hardwired proposals use the
reserved keys below.
"""

from __future__ import annotations

import numpy as np

FUSED_KEY = -1
HARDWIRED_KEY = -2

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _mix(*words: int) -> int:
    h = 0
    for w in words:
        h = _splitmix64(h ^ (int(w) & _MASK))
    return h


class StreamRNG:
    """Family of independent per-(record, source) normal streams."""

    __slots__ = ("root",)

    def __init__(self, *root: int):
        self.root = tuple(int(r) for r in root)

    def child(self, *extra: int) -> "StreamRNG":
        return StreamRNG(*(self.root + extra))

    def generator(self, record_id: int, source_key: int) -> np.random.Generator:
        key = _mix(*self.root, record_id + 3, source_key + 3)
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, record_id: int, source_key: int, shape) -> np.ndarray:
        """Standard-normal draws; flat position within the call is the sample index."""
        return self.generator(record_id, source_key).standard_normal(shape)

    def normal_batch(self, record_ids, source_key: int, shape) -> np.ndarray:
        """Stacked per-record draws, shape (len(record_ids), *shape)."""
        out = np.empty((len(record_ids),) + tuple(shape))
        for i, rid in enumerate(record_ids):
            out[i] = self.normal(rid, source_key, shape)
        return out
