"""CSR sparse matrices, normalized bipartite adjacency, propagation kernels.

Products are delegated to scipy.sparse; the CSR triplet (row_ptr, col_idx,
values) is the contract so the backing engine stays swappable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from cadence.util import new_rng

NORMALIZATIONS = ("random_walk", "symmetric")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse-row matrix with float64 values.

    Within each row column indices are strictly increasing; all values are
    finite. Immutable after construction, so instances may be shared freely
    across threads.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _csr: object = field(init=False, repr=False, default=None)
    _transpose: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        if len(row_ptr) != self.n_rows + 1:
            raise ValueError("row_ptr must have n_rows + 1 entries")
        if row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing from 0")
        if row_ptr[-1] != len(col_idx) or len(col_idx) != len(values):
            raise ValueError("row_ptr[-1] must equal nnz")
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= self.n_cols):
            raise ValueError("column index out of range")
        for r in range(self.n_rows):
            cols = col_idx[row_ptr[r] : row_ptr[r + 1]]
            if len(cols) > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {r}: column indices not strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.eliminate_zeros()
        return cls(
            n_rows=csr.shape[0],
            n_cols=csr.shape[1],
            row_ptr=csr.indptr.astype(np.int64),
            col_idx=csr.indices.astype(np.int64),
            values=csr.data.astype(np.float64),
        )

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(arr, dtype=np.float64)))

    def csr(self):
        """scipy CSR handle (built once, cached)."""
        if self._csr is None:
            handle = sp.csr_matrix(
                (self.values, self.col_idx, self.row_ptr),
                shape=(self.n_rows, self.n_cols),
            )
            object.__setattr__(self, "_csr", handle)
        return self._csr

    def transpose(self) -> "SparseMatrix":
        if self._transpose is None:
            object.__setattr__(
                self, "_transpose", SparseMatrix.from_scipy(self.csr().T.tocsr())
            )
        return self._transpose

    def toarray(self) -> np.ndarray:
        return self.csr().toarray()

    @property
    def nnz(self):
        return len(self.values)

    def row(self, r):
        """(columns, values) of row ``r`` as views."""
        lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]


@dataclass(frozen=True)
class PropagationSpec:
    """Layer count, per-layer mixing weights, and adjacency normalization.

    ``layer_weights`` has ``n_layers + 1`` non-negative entries summing to 1;
    the default is the uniform 1/(L+1) mean combination.
    """

    n_layers: int = 3
    layer_weights: tuple = None
    normalization: str = "symmetric"

    def __post_init__(self):
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        w = self.layer_weights
        if w is None:
            w = tuple([1.0 / (self.n_layers + 1)] * (self.n_layers + 1))
        else:
            w = tuple(float(x) for x in w)
        object.__setattr__(self, "layer_weights", w)
        if len(w) != self.n_layers + 1:
            raise ValueError("need n_layers + 1 layer weights")
        if any(x < 0 for x in w):
            raise ValueError("layer weights must be non-negative")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("layer weights must sum to 1 within 1e-12")


def build_bipartite_adjacency(dataset, normalization="symmetric") -> SparseMatrix:
    """Normalized user-item adjacency over n_users + n_items nodes, users first.

    random_walk scales each nonzero row to sum 1; symmetric uses
    1/sqrt(deg(u) * deg(i)) on both directions. Zero-degree nodes keep empty
    rows. Self-loops are not added; the layer-0 term of the propagation
    weights plays the self-connection role.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    if dataset.n_edges < 1:
        raise ValueError("dataset has no train edges")
    nu, ni = dataset.n_users, dataset.n_items
    tu, ti = dataset.train_u, dataset.train_i
    deg_u = np.bincount(tu, minlength=nu).astype(np.float64)
    deg_i = np.bincount(ti, minlength=ni).astype(np.float64)
    if normalization == "random_walk":
        w_ui = 1.0 / deg_u[tu]
        w_iu = 1.0 / deg_i[ti]
    else:
        w = 1.0 / np.sqrt(deg_u[tu] * deg_i[ti])
        w_ui = w_iu = w
    n = nu + ni
    rows = np.concatenate([tu, nu + ti])
    cols = np.concatenate([nu + ti, tu])
    vals = np.concatenate([w_ui, w_iu])
    return SparseMatrix.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def spmm(A: SparseMatrix, X) -> np.ndarray:
    """Sparse-dense product A @ X; rows without nonzeros map to zero rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (1, 2) or X.shape[0] != A.n_cols:
        raise ValueError(
            f"shape mismatch: A is {A.n_rows}x{A.n_cols}, X has shape {X.shape}"
        )
    return A.csr() @ X


def spectral_radius_estimate(A: SparseMatrix, iterations=200, seed=0) -> float:
    """Power-iteration estimate of the dominant |eigenvalue| of a square A.

    Iterates A twice per step (power iteration on A^2) so the paired +/-
    spectrum of bipartite graphs cannot stall convergence; returns
    sqrt of the A^2 growth factor. A zero matrix yields 0.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("spectral radius needs a square matrix")
    if A.nnz == 0 or iterations < 1:
        return 0.0
    rng = new_rng(seed)
    v = rng.standard_normal(A.n_cols)
    v /= np.linalg.norm(v)
    csr = A.csr()
    est = 0.0
    for _ in range(iterations):
        w = csr @ (csr @ v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        est = np.sqrt(nw)
        v = w / nw
    return float(est)
