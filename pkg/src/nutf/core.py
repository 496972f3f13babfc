"""Core data structures for negative-unlabeled tensor completion.

The observations form a 3-way array over (user, time slot, category).
Everything downstream works on its mode-1 unfolding: an N x (T*C) matrix
whose column index merges (slot, category) as ``j*C + k``. Only entries
inside the per-(user, slot) candidate sets are ever materialized; the
rest are zero by representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

_I64_MAX = np.iinfo(np.int64).max

# Chunk length for streaming per-entry inner products; bounds temp memory
# to ~chunk * rank * 8 bytes.
_ENTRY_CHUNK = 1 << 20


@dataclass(frozen=True)
class ProblemDims:
    """Problem sizes: N users, T time slots, C location categories."""

    n_users: int
    n_slots: int
    n_categories: int

    def __post_init__(self) -> None:
        for name in ("n_users", "n_slots", "n_categories"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_slots > _I64_MAX // self.n_categories:
            raise ValueError("n_slots * n_categories overflows 64-bit column indices")

    @property
    def n_cols(self) -> int:
        """Column count of the unfolded matrix, T*C."""
        return self.n_slots * self.n_categories


def col_index(j: int, k: int, dims: ProblemDims) -> int:
    """Unfolded column index of (slot j, category k): ``j*C + k``."""
    if not 0 <= j < dims.n_slots:
        raise ValueError(f"slot index {j} out of range [0, {dims.n_slots})")
    if not 0 <= k < dims.n_categories:
        raise ValueError(f"category index {k} out of range [0, {dims.n_categories})")
    return j * dims.n_categories + k


def col_to_slot_cat(col: int, dims: ProblemDims) -> tuple[int, int]:
    """Inverse of :func:`col_index`."""
    if not 0 <= col < dims.n_cols:
        raise ValueError(f"column index {col} out of range [0, {dims.n_cols})")
    return divmod(col, dims.n_categories)


class CandidateSets:
    """Per-(user, slot) sets of admissible category indices.

    Blocks are stored in block-CSR form, sorted by (user, slot), with the
    category indices of each block strictly increasing. A (user, slot)
    pair with no location update is simply absent, which means "no
    information", not "impossible everywhere".

    Attributes:
        block_users: int64 array, user index per block.
        block_slots: int64 array, slot index per block.
        block_ptr: int64 array of length n_blocks+1; block b owns
            ``cats[block_ptr[b]:block_ptr[b+1]]``.
        cats: int64 array of category indices, concatenated per block.
    """

    __slots__ = ("block_users", "block_slots", "block_ptr", "cats",
                 "_csr_cache", "_block_lookup")

    def __init__(self, block_users, block_slots, block_ptr, cats):
        self.block_users = np.ascontiguousarray(block_users, dtype=np.int64)
        self.block_slots = np.ascontiguousarray(block_slots, dtype=np.int64)
        self.block_ptr = np.ascontiguousarray(block_ptr, dtype=np.int64)
        self.cats = np.ascontiguousarray(cats, dtype=np.int64)
        self._csr_cache: tuple | None = None
        self._block_lookup: dict[tuple[int, int], int] | None = None
        self._check_structure()

    def _check_structure(self) -> None:
        nb = self.n_blocks
        if self.block_users.shape != (nb,) or self.block_slots.shape != (nb,):
            raise ValueError("block index arrays have inconsistent lengths")
        if self.block_ptr[0] != 0 or self.block_ptr[-1] != len(self.cats):
            raise ValueError("block_ptr does not cover the category array")
        sizes = np.diff(self.block_ptr)
        if nb and sizes.min() < 1:
            raise ValueError("empty candidate sets are not representable; drop the block")
        if nb:
            if self.block_users.min() < 0 or self.block_slots.min() < 0:
                raise ValueError("negative user or slot index")
            # strict (user, slot) ordering also rules out duplicate blocks
            du = np.diff(self.block_users)
            dj = np.diff(self.block_slots)
            if not np.all((du > 0) | ((du == 0) & (dj > 0))):
                raise ValueError("blocks must be strictly sorted by (user, slot)")
        if len(self.cats):
            if self.cats.min() < 0:
                raise ValueError("negative category index")
            inner = np.ones(len(self.cats), dtype=bool)
            inner[self.block_ptr[:-1]] = False
            if not np.all(np.diff(self.cats)[inner[1:]] > 0):
                raise ValueError("category indices within a block must be strictly increasing")

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_blocks(cls, blocks: Iterable[tuple[int, int, Sequence[int]]]) -> "CandidateSets":
        """Build from (user, slot, categories) triples, in any order."""
        triples = sorted(blocks, key=lambda b: (b[0], b[1]))
        users = np.fromiter((b[0] for b in triples), dtype=np.int64, count=len(triples))
        slots = np.fromiter((b[1] for b in triples), dtype=np.int64, count=len(triples))
        cat_arrays = [np.asarray(sorted(b[2]), dtype=np.int64) for b in triples]
        sizes = np.fromiter((len(c) for c in cat_arrays), dtype=np.int64, count=len(cat_arrays))
        ptr = np.zeros(len(triples) + 1, dtype=np.int64)
        np.cumsum(sizes, out=ptr[1:])
        cats = np.concatenate(cat_arrays) if cat_arrays else np.empty(0, dtype=np.int64)
        return cls(users, slots, ptr, cats)

    @classmethod
    def from_dict(cls, entries: Mapping[tuple[int, int], Sequence[int]]) -> "CandidateSets":
        return cls.from_blocks((i, j, cats) for (i, j), cats in entries.items())

    # -- basic accessors ------------------------------------------------

    @property
    def n_blocks(self) -> int:
        return len(self.block_users)

    @property
    def total_size(self) -> int:
        """Total number of candidate entries, |Omega|."""
        return len(self.cats)

    @property
    def block_sizes(self) -> np.ndarray:
        return np.diff(self.block_ptr)

    def items(self) -> Iterator[tuple[tuple[int, int], np.ndarray]]:
        """Yield ((user, slot), categories) per block, in storage order."""
        for b in range(self.n_blocks):
            yield (
                (int(self.block_users[b]), int(self.block_slots[b])),
                self.cats[self.block_ptr[b]:self.block_ptr[b + 1]],
            )

    def to_dict(self) -> dict[tuple[int, int], list[int]]:
        return {key: cats.tolist() for key, cats in self.items()}

    def block_id(self, i: int, j: int) -> int | None:
        """Index of block (i, j), or None when absent."""
        if self._block_lookup is None:
            self._block_lookup = {
                (int(u), int(s)): b
                for b, (u, s) in enumerate(zip(self.block_users, self.block_slots))
            }
        return self._block_lookup.get((i, j))

    def get(self, i: int, j: int) -> np.ndarray | None:
        b = self.block_id(i, j)
        if b is None:
            return None
        return self.cats[self.block_ptr[b]:self.block_ptr[b + 1]]

    def validate_dims(self, dims: ProblemDims) -> None:
        if self.n_blocks == 0:
            return
        if self.block_users.max() >= dims.n_users:
            raise ValueError("user index exceeds n_users")
        if self.block_slots.max() >= dims.n_slots:
            raise ValueError("slot index exceeds n_slots")
        if len(self.cats) and self.cats.max() >= dims.n_categories:
            raise ValueError("category index exceeds n_categories")

    # -- flattened views ------------------------------------------------

    def csr_structure(self, dims: ProblemDims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, unfolded column indices, row index per entry).

        Cached: the support is shared by every iterate of a solve, so the
        expensive expansion happens once.
        """
        key = (dims.n_users, dims.n_cols)
        if self._csr_cache is not None and self._csr_cache[0] == key:
            return self._csr_cache[1], self._csr_cache[2], self._csr_cache[3]
        self.validate_dims(dims)
        sizes = self.block_sizes
        entry_rows = np.repeat(self.block_users, sizes)
        entry_cols = np.repeat(self.block_slots * dims.n_categories, sizes) + self.cats
        counts = np.bincount(entry_rows, minlength=dims.n_users) if self.n_blocks else \
            np.zeros(dims.n_users, dtype=np.int64)
        indptr = np.zeros(dims.n_users + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self._csr_cache = (key, indptr, entry_cols, entry_rows)
        return indptr, entry_cols, entry_rows


@dataclass
class BlockSparseMatrix:
    """Unfolded N x (T*C) matrix, nonzero only on the candidate support.

    ``values`` holds one non-negative float per support entry, in the
    same order as ``support.cats``. Off-support entries are identically
    zero because they are never stored.
    """

    dims: ProblemDims
    support: CandidateSets
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.support.total_size,):
            raise ValueError(
                f"value count {self.values.shape} does not match support size "
                f"{self.support.total_size}"
            )
        self.support.validate_dims(self.dims)
        if len(self.values) and self.values.min() < 0.0:
            raise ValueError("negative entries violate the non-negativity constraint")

    def to_csr(self):
        """Zero-copy scipy CSR view over (dims, support, values)."""
        from scipy.sparse import csr_matrix

        indptr, indices, _ = self.support.csr_structure(self.dims)
        return csr_matrix(
            (self.values, indices, indptr),
            shape=(self.dims.n_users, self.dims.n_cols),
        )

    def block_values(self, i: int, j: int) -> np.ndarray | None:
        b = self.support.block_id(i, j)
        if b is None:
            return None
        ptr = self.support.block_ptr
        return self.values[ptr[b]:ptr[b + 1]]

    def block_sums(self) -> np.ndarray:
        if self.support.n_blocks == 0:
            return np.empty(0, dtype=np.float64)
        return np.add.reduceat(self.values, self.support.block_ptr[:-1])

    def max_block_sum_error(self) -> float:
        """max_b |sum(block b) - 1|; 0.0 when there are no blocks."""
        if self.support.n_blocks == 0:
            return 0.0
        return float(np.abs(self.block_sums() - 1.0).max())

    def frob_sq(self) -> float:
        return float(self.values @ self.values)

    def to_dense(self, max_entries: int = 10_000_000) -> np.ndarray:
        """Materialize the full matrix; guarded against large instances."""
        if self.dims.n_users * self.dims.n_cols > max_entries:
            raise ValueError("instance too large to densify")
        out = np.zeros((self.dims.n_users, self.dims.n_cols))
        _, cols, rows = self.support.csr_structure(self.dims)
        out[rows, cols] = self.values
        return out

    def with_values(self, values: np.ndarray) -> "BlockSparseMatrix":
        """New matrix on the same support (shares the cached structure)."""
        return BlockSparseMatrix(self.dims, self.support, values)


@dataclass
class LowRankModel:
    """Rank-r completion Y = Q @ C with orthonormal Q.

    In normal orientation Q is N x r and C is r x (T*C). When the solve
    ran on the transposed unfolding (N < T*C), ``transposed`` is set, Q
    is (T*C) x r, C is r x N, and the completion is Y = (Q @ C)^T.
    """

    dims: ProblemDims
    q: np.ndarray
    c: np.ndarray
    transposed: bool = False

    def __post_init__(self) -> None:
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.c = np.ascontiguousarray(self.c, dtype=np.float64)
        n_rows = self.dims.n_cols if self.transposed else self.dims.n_users
        n_cols = self.dims.n_users if self.transposed else self.dims.n_cols
        r = self.q.shape[1] if self.q.ndim == 2 else -1
        if self.q.ndim != 2 or self.q.shape[0] != n_rows:
            raise ValueError(f"q must be {n_rows} x r, got {self.q.shape}")
        if self.c.shape != (r, n_cols):
            raise ValueError(f"c must be {r} x {n_cols}, got {self.c.shape}")
        if r > min(self.dims.n_users, self.dims.n_cols):
            raise ValueError("rank exceeds min(N, T*C)")

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    def orthonormality_error(self) -> float:
        """max |Q^T Q - I|; 0.0 for rank 0."""
        if self.rank == 0:
            return 0.0
        g = self.q.T @ self.q
        return float(np.abs(g - np.eye(self.rank)).max())

    def validate(self, tol: float = 1e-8) -> None:
        err = self.orthonormality_error()
        if err > tol:
            raise ValueError(f"Q columns are not orthonormal: max deviation {err:.3e}")


def model_value(model: LowRankModel, i: int, col: int) -> float:
    """Entry (i, col) of the completion, Q_i: . C_:col."""
    dims = model.dims
    if not 0 <= i < dims.n_users:
        raise ValueError(f"user index {i} out of range [0, {dims.n_users})")
    if not 0 <= col < dims.n_cols:
        raise ValueError(f"column index {col} out of range [0, {dims.n_cols})")
    if model.rank == 0:
        return 0.0
    if model.transposed:
        return float(model.q[col] @ model.c[:, i])
    return float(model.q[i] @ model.c[:, col])


def model_support_values(model: LowRankModel, support: CandidateSets) -> np.ndarray:
    """Completion values at every support entry, in support order.

    Streams in chunks so the (entries x rank) gather never exceeds a few
    hundred MB even at millions of entries.
    """
    _, cols, rows = support.csr_structure(model.dims)
    n = len(cols)
    out = np.empty(n, dtype=np.float64)
    if model.rank == 0:
        out[:] = 0.0
        return out
    left, right = (cols, rows) if model.transposed else (rows, cols)
    for start in range(0, n, _ENTRY_CHUNK):
        sl = slice(start, min(start + _ENTRY_CHUNK, n))
        np.einsum(
            "er,re->e", model.q[left[sl]], model.c[:, right[sl]],
            out=out[sl], optimize=True,
        )
    return out


def frobenius_gap(
    x: BlockSparseMatrix,
    model: LowRankModel,
    y_support: np.ndarray | None = None,
) -> float:
    """Exact squared Frobenius distance ||X - Y||_F^2 over the full matrix.

    Splits the sum into on-support and off-support parts; the latter is
    ||C||_F^2 - ||Y_support||^2 because Q has orthonormal columns, so the
    off-support entries of Y are never materialized.

    ``y_support`` may pass in precomputed completion values (same order
    as the support) to avoid recomputing them.
    """
    if model.dims != x.dims:
        raise ValueError("model and matrix dimensions do not match")
    if y_support is None:
        y_support = model_support_values(model, x.support)
    elif y_support.shape != x.values.shape:
        raise ValueError("y_support misaligned with the matrix support")
    diff = x.values - y_support
    on_support = float(diff @ diff)
    total_y = float(np.vdot(model.c, model.c))
    y_on = float(y_support @ y_support)
    # rounding can drive the off-support part slightly negative when Y ~ X
    return max(on_support + (total_y - y_on), 0.0)
