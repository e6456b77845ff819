"""Sparse interaction matrices and the normalized graphs built from them.

Every relation (user-bundle, user-item, bundle-item and the co-occurrence masks
derived from them) is a :class:`SparseBinaryMatrix` in compressed sparse row
layout with sorted, de-duplicated columns per row. Graphs carry the symmetric
degree normalization ``1/sqrt(deg(v) * deg(v'))`` on every stored edge, where
degrees are first-hop neighbour counts in the graph being normalized.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from bunca import BuncaError
from bunca.enums import Side


class GraphError(BuncaError):
    """Raised on malformed matrices or incompatible graph inputs."""


def _as_index(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class SparseBinaryMatrix:
    """Row-indexed 0/1 incidence matrix; stored entries are implicitly 1."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self):
        offsets = _as_index(self.row_offsets)
        cols = _as_index(self.col_indices)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        self._validate()

    def _validate(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise GraphError(f"negative shape {self.shape}")
        offsets, cols = self.row_offsets, self.col_indices
        if len(offsets) != self.n_rows + 1 or offsets[0] != 0:
            raise GraphError("row offsets must start at 0 and have n_rows + 1 entries")
        if offsets[-1] != len(cols):
            raise GraphError("last row offset must equal the number of entries")
        if np.any(np.diff(offsets) < 0):
            raise GraphError("row offsets must be non-decreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise GraphError(f"column index outside [0, {self.n_cols})")
        # strictly increasing inside a row means sorted and de-duplicated
        if len(cols) > 1:
            step = np.diff(cols)
            row_start = np.zeros(len(cols), dtype=bool)
            row_start[offsets[1:-1][offsets[1:-1] < len(cols)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise GraphError("columns must be sorted and unique within a row")

    @classmethod
    def from_pairs(cls, rows, cols, n_rows: int, n_cols: int) -> "SparseBinaryMatrix":
        """Build from (row, col) pairs; duplicates collapse to one entry."""
        rows, cols = _as_index(rows), _as_index(cols)
        if len(rows) != len(cols):
            raise GraphError("row and column arrays differ in length")
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows):
            raise GraphError(f"row index outside [0, {n_rows})")
        if len(cols) and (cols.min() < 0 or cols.max() >= n_cols):
            raise GraphError(f"column index outside [0, {n_cols})")
        keys = np.unique(rows * max(n_cols, 1) + cols)
        rows, cols = np.divmod(keys, max(n_cols, 1))
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols)

    @classmethod
    def from_csr(cls, csr: sp.csr_matrix) -> "SparseBinaryMatrix":
        csr = sp.csr_matrix(csr)
        csr.eliminate_zeros()
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices)

    @classmethod
    def from_dense(cls, dense) -> "SparseBinaryMatrix":
        return cls.from_csr(sp.csr_matrix(np.asarray(dense) != 0))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "SparseBinaryMatrix":
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), np.zeros(0))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return len(self.col_indices)

    def row(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, aligned with ``col_indices``."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_degrees())

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.row_ids(), self.col_indices.copy()

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def col_degrees(self) -> np.ndarray:
        return np.bincount(self.col_indices, minlength=self.n_cols)

    def contains(self, i: int, j: int) -> bool:
        row = self.row(i)
        k = np.searchsorted(row, j)
        return bool(k < len(row) and row[k] == j)

    def to_csr(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.nnz, dtype=dtype)
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def is_symmetric(self) -> bool:
        if self.n_rows != self.n_cols:
            return False
        csr = self.to_csr()
        return (csr != csr.T).nnz == 0

    def has_diagonal(self) -> bool:
        rows, cols = self.pairs()
        return bool(np.any(rows == cols))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseBinaryMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def __repr__(self):
        return f"SparseBinaryMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class CountMatrix(SparseBinaryMatrix):
    """Sparse pattern with a positive integer count per stored entry."""

    counts: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        counts = _as_index(self.counts if self.counts is not None else [])
        object.__setattr__(self, "counts", counts)
        if len(counts) != self.nnz:
            raise GraphError("one count per stored entry is required")
        if len(counts) and counts.min() < 1:
            raise GraphError("stored counts must be at least 1")

    @classmethod
    def from_csr(cls, csr: sp.csr_matrix) -> "CountMatrix":
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    def get(self, i: int, j: int) -> int:
        row = self.row(i)
        k = np.searchsorted(row, j)
        if k < len(row) and row[k] == j:
            return int(self.counts[self.row_offsets[i] + k])
        return 0

    def to_csr(self, dtype=np.float64) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.counts.astype(dtype), self.col_indices, self.row_offsets),
            shape=self.shape,
        )

    def __repr__(self):
        return f"CountMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Weighted sparse adjacency over ``n`` nodes."""

    n: int
    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def edge_count(self) -> int:
        return self.matrix.nnz

    def degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def weight(self, v: int, w: int) -> float:
        return float(self.matrix[v, w])

    def pattern(self) -> SparseBinaryMatrix:
        return SparseBinaryMatrix.from_csr(self.matrix)


@dataclass(frozen=True, eq=False)
class UnifiedGraph:
    """Users occupy nodes [0, n_users), bundles [n_users, n_users + n_bundles)."""

    adjacency: NormalizedAdjacency
    n_users: int
    n_bundles: int


def transpose(m: SparseBinaryMatrix) -> SparseBinaryMatrix:
    return SparseBinaryMatrix.from_csr(m.to_csr().T.tocsr())


def cooccurrence(m: SparseBinaryMatrix, side: Side = Side.ROWS) -> CountMatrix:
    """Count shared neighbours: ``M M^T`` over rows or ``M^T M`` over columns."""
    csr = m.to_csr(dtype=np.int64)
    if Side(side) is Side.ROWS:
        product = csr @ csr.T
    else:
        product = csr.T @ csr
    return CountMatrix.from_csr(product)


def binarize(c: CountMatrix, threshold: int = 1) -> SparseBinaryMatrix:
    """Keep off-diagonal entries whose count reaches ``threshold``."""
    if c.n_rows != c.n_cols:
        raise GraphError(f"co-occurrence matrix must be square, got {c.shape}")
    if threshold < 1:
        raise GraphError(f"threshold must be >= 1, got {threshold}")
    rows, cols = c.pairs()
    keep = (c.counts >= threshold) & (rows != cols)
    return SparseBinaryMatrix.from_pairs(rows[keep], cols[keep], c.n_rows, c.n_cols)


def symmetric_normalize(pattern: SparseBinaryMatrix) -> NormalizedAdjacency:
    """Weight every stored edge (v, w) by 1/sqrt(deg(v) deg(w)) on a square pattern."""
    if pattern.n_rows != pattern.n_cols:
        raise GraphError(f"adjacency pattern must be square, got {pattern.shape}")
    deg = pattern.row_degrees().astype(np.float64)
    rows, cols = pattern.pairs()
    weights = 1.0 / np.sqrt(deg[rows] * deg[cols])
    matrix = sp.csr_matrix(
        (weights, pattern.col_indices.copy(), pattern.row_offsets.copy()),
        shape=pattern.shape,
    )
    return NormalizedAdjacency(pattern.n_rows, matrix, pattern.is_symmetric())


def row_normalize(m: SparseBinaryMatrix) -> sp.csr_matrix:
    """Each nonempty row sums to one; empty rows stay empty."""
    deg = m.row_degrees().astype(np.float64)
    inverse = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    data = np.repeat(inverse, m.row_degrees())
    return sp.csr_matrix((data, m.col_indices, m.row_offsets), shape=m.shape)


def _bipartite_pattern(m: SparseBinaryMatrix) -> sp.coo_matrix:
    n = m.n_rows + m.n_cols
    rows, cols = m.pairs()
    cols = cols + m.n_rows
    return sp.coo_matrix(
        (np.ones(2 * m.nnz), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )


def build_bipartite_adjacency(m: SparseBinaryMatrix) -> NormalizedAdjacency:
    """Undirected graph on left (rows) then right (cols) entities."""
    pattern = SparseBinaryMatrix.from_csr(_bipartite_pattern(m).tocsr())
    return symmetric_normalize(pattern)


def build_unified_graph(
    x: SparseBinaryMatrix, user_mask: SparseBinaryMatrix, bundle_mask: SparseBinaryMatrix
) -> UnifiedGraph:
    """User-bundle interactions plus user-user and bundle-bundle co-occurrence links."""
    n_users, n_bundles = x.shape
    if user_mask.shape != (n_users, n_users):
        raise GraphError(
            f"user co-occurrence mask is {user_mask.shape}, expected {(n_users, n_users)}"
        )
    if bundle_mask.shape != (n_bundles, n_bundles):
        raise GraphError(
            f"bundle co-occurrence mask is {bundle_mask.shape}, expected {(n_bundles, n_bundles)}"
        )
    for name, mask in (("user", user_mask), ("bundle", bundle_mask)):
        if mask.has_diagonal():
            raise GraphError(f"{name} co-occurrence mask has a self-pair")
        if not mask.is_symmetric():
            raise GraphError(f"{name} co-occurrence mask is not symmetric")

    n = n_users + n_bundles
    links = _bipartite_pattern(x).tocsr()
    homogeneous = sp.block_diag(
        (user_mask.to_csr(), bundle_mask.to_csr()), format="csr"
    )
    pattern = SparseBinaryMatrix.from_csr(sp.csr_matrix(links + homogeneous, shape=(n, n)))
    return UnifiedGraph(symmetric_normalize(pattern), n_users, n_bundles)


def spmv_block(adj: NormalizedAdjacency, features: np.ndarray) -> np.ndarray:
    """Propagate one hop: row v becomes the weighted sum of its neighbours' rows."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != adj.n:
        raise GraphError(
            f"features have shape {features.shape}, expected {adj.n} rows"
        )
    return np.asarray(adj.matrix @ features)
