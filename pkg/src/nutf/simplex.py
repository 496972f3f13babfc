"""Exact Euclidean projection onto the probability simplex.

The projection of v is ``max(v - theta, 0)`` for the unique water level
theta that makes the result sum to one. Sorting v descending and scanning
prefixes finds theta in O(d log d): take the largest j such that
``v_sorted[j] - (sum(v_sorted[:j+1]) - 1) / (j+1) > 0`` and set
``theta = (sum(v_sorted[:k]) - 1) / k`` for that prefix length k.
"""

from __future__ import annotations

import numpy as np

# A vector counts as already on the simplex when it is non-negative and its
# sum is within this multiple of d from one.
_FEAS_TOL = 1e-12


def _feasible(v: np.ndarray) -> bool:
    return bool(v.min() >= 0.0 and abs(v.sum() - 1.0) <= _FEAS_TOL * v.size)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Project a real vector onto {u : u >= 0, sum(u) = 1}.

    Returns the unique Euclidean-nearest point of the simplex. The input
    must be non-empty with all entries finite. Output entries are >= 0
    and sum to 1 up to roundoff (~1e-12 * d).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("entries must be finite")
    d = v.size
    if d == 1:
        return np.ones(1)
    # feasible points are fixed points; returning them unchanged makes the
    # projection exactly idempotent instead of drifting by roundoff
    if _feasible(v):
        return v.copy()
    s = np.sort(v)[::-1]
    prefix = np.cumsum(s)
    j = np.arange(1, d + 1)
    positive = s - (prefix - 1.0) / j > 0.0
    k = np.nonzero(positive)[0][-1]  # position 0 is always positive
    theta = (prefix[k] - 1.0) / (k + 1)
    return np.maximum(v - theta, 0.0)


def project_blocks(values: np.ndarray, block_ptr: np.ndarray) -> np.ndarray:
    """Project each contiguous block of ``values`` onto the simplex.

    Block b is ``values[block_ptr[b]:block_ptr[b+1]]``. Blocks are grouped
    by size so each group runs as one vectorized sort/cumsum pass; the
    arithmetic per block is identical to :func:`project_simplex`.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("entries must be finite")
    out = np.empty_like(values)
    sizes = np.diff(block_ptr)
    for d in np.unique(sizes):
        which = np.nonzero(sizes == d)[0]
        starts = block_ptr[which]
        if d == 1:
            out[starts] = 1.0
            continue
        gather = starts[:, None] + np.arange(d)[None, :]
        block = values[gather]
        feas = (block.min(axis=1) >= 0.0) & (
            np.abs(block.sum(axis=1) - 1.0) <= _FEAS_TOL * d
        )
        if feas.any():
            out[gather[feas]] = block[feas]
            if feas.all():
                continue
            gather = gather[~feas]
            block = block[~feas]
        s = -np.sort(-block, axis=1)
        prefix = np.cumsum(s, axis=1)
        j = np.arange(1, d + 1)[None, :]
        positive = s - (prefix - 1.0) / j > 0.0
        # last positive prefix per row; column 0 is always positive
        k = d - 1 - np.argmax(positive[:, ::-1], axis=1)
        theta = (prefix[np.arange(block.shape[0]), k] - 1.0) / (k + 1)
        out[gather] = np.maximum(block - theta[:, None], 0.0)
    return out
