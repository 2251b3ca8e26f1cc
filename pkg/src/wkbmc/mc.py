"""Deterministic Monte Carlo plumbing.

Random numbers come from counter-based Philox streams keyed on
(seed, stream, batch index), so every batch of every estimator draws
an independent, reproducible stream regardless of execution order.
Reductions accumulate per-batch partial sums and combine them in batch
order, which makes totals bit-identical no matter how the batches were
scheduled.
"""
from __future__ import annotations

import numpy as np

#: Number of samples processed per batch.  Fixed so that the sample ->
#: random number mapping never depends on memory pressure or equipment.
BATCH = 1 << 14

# Stream labels.  One logical purpose per stream, shared by every
# estimator so that common random numbers line up across estimators
# that use the same seed.
STREAM_XI = 0       # proxy draws (or the primary normals of a toy model)
STREAM_CONT = 1     # post-jump continuation increments (Bermudan)
STREAM_EULER = 2    # log-Euler evolution started at time zero

_MASK48 = (1 << 48) - 1
_MASK64 = (1 << 64) - 1


def rng_for(seed: int, batch_index: int, stream: int = STREAM_XI) -> np.random.Generator:
    """Generator for one (seed, stream, batch) cell of the random tableau."""
    if batch_index < 0:
        raise ValueError(f"batch_index must be non-negative, got {batch_index}")
    key = np.array(
        [np.uint64(seed & _MASK64),
         np.uint64(((stream & 0xFFFF) << 48) | (batch_index & _MASK48))],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def batch_slices(m: int, batch: int = BATCH) -> list[tuple[int, int, int]]:
    """Split ``m`` samples into fixed batches: list of (index, lo, hi)."""
    if m <= 0:
        raise ValueError(f"sample count must be positive, got {m}")
    out = []
    lo = 0
    bi = 0
    while lo < m:
        hi = min(lo + batch, m)
        out.append((bi, lo, hi))
        lo = hi
        bi += 1
    return out


class MomentAccumulator:
    """First and second moments accumulated batch by batch.

    Each batch contributes one partial (count, sum, sum of squares,
    max absolute value).  ``finalize`` combines the partials in batch
    order, so the result does not depend on which order the batches
    were computed in.
    """

    def __init__(self) -> None:
        self._parts: dict[int, tuple[float, float, float, float]] = {}

    def add(self, batch_index: int, values: np.ndarray) -> None:
        v = np.asarray(values, dtype=np.float64)
        self._parts[batch_index] = (
            float(v.size),
            float(np.sum(v)),
            float(np.sum(v * v)),
            float(np.max(np.abs(v))) if v.size else 0.0,
        )

    def finalize(self) -> tuple[float, float, int, float]:
        """Return (mean, standard error of the mean, count, max abs)."""
        if not self._parts:
            raise RuntimeError("no batches accumulated")
        rows = np.array([self._parts[bi] for bi in sorted(self._parts)])
        m = float(np.sum(rows[:, 0]))
        s1 = float(np.sum(rows[:, 1]))
        s2 = float(np.sum(rows[:, 2]))
        vmax = float(np.max(rows[:, 3]))
        mean = s1 / m
        var = max(s2 / m - mean * mean, 0.0)
        sd_mean = np.sqrt(var / m)
        return mean, float(sd_mean), int(m), vmax


__all__ = [
    "BATCH",
    "STREAM_XI",
    "STREAM_CONT",
    "STREAM_EULER",
    "rng_for",
    "batch_slices",
    "MomentAccumulator",
]
