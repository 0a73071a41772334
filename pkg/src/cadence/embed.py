"""Embedding storage, linear graph propagation, scoring, checkpoint I/O.

Propagation is purely linear: layer k is A applied to layer k-1 and the
final embedding is the weighted sum of all layers. The combined operator
M = sum_k alpha_k A^k is never materialized; ``column_slice_M`` extracts
single columns for gradient analysis and tests.

Checkpoint format: magic line ``CADEMB1``, ASCII header ``n_users n_items d``,
then row-major little-endian float64, users before items.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cadence.corpus import DataError
from cadence.spgraph import PropagationSpec, SparseMatrix, spmm
from cadence.util import new_rng

MAGIC = b"CADEMB1\n"


@dataclass(eq=False)
class EmbeddingTable:
    """Layer-0 user and item embeddings, all float64.

    Arrays are mutable; training holds the single writer. Reads between
    update steps may run in parallel.
    """

    user0: np.ndarray
    item0: np.ndarray
    dim: int

    def __post_init__(self):
        self.user0 = np.ascontiguousarray(self.user0, dtype=np.float64)
        self.item0 = np.ascontiguousarray(self.item0, dtype=np.float64)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.user0.shape[1] != self.dim or self.item0.shape[1] != self.dim:
            raise ValueError("embedding width disagrees with dim")
        if not (np.all(np.isfinite(self.user0)) and np.all(np.isfinite(self.item0))):
            raise ValueError("embeddings must be finite")

    @property
    def n_users(self):
        return self.user0.shape[0]

    @property
    def n_items(self):
        return self.item0.shape[0]

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    def concat(self) -> np.ndarray:
        """All layer-0 embeddings stacked users-then-items (copy)."""
        return np.vstack([self.user0, self.item0])

    def row(self, node):
        if node < self.n_users:
            return self.user0[node]
        return self.item0[node - self.n_users]

    def set_row(self, node, value):
        if node < self.n_users:
            self.user0[node] = value
        else:
            self.item0[node - self.n_users] = value

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.user0.copy(), self.item0.copy(), self.dim)


@dataclass(eq=False)
class PropagatedEmbeddings:
    """Per-layer embeddings e^(0..L) over all nodes and their weighted sum."""

    per_layer: list
    final: np.ndarray
    n_users: int

    def user_final(self, u):
        return self.final[u]

    def item_final(self, i):
        return self.final[self.n_users + i]

    def users(self):
        return self.final[: self.n_users]

    def items(self):
        return self.final[self.n_users :]


def init_embeddings(n_users, n_items, d, seed, scale=0.1) -> EmbeddingTable:
    """I.i.d. zero-mean Gaussian init with standard deviation ``scale``."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    rng = new_rng(seed)
    user0 = rng.normal(0.0, scale, size=(n_users, d))
    item0 = rng.normal(0.0, scale, size=(n_items, d))
    return EmbeddingTable(user0, item0, d)


def propagate(table: EmbeddingTable, A: SparseMatrix, spec: PropagationSpec) -> PropagatedEmbeddings:
    """Run e^(k) = A e^(k-1) for k = 1..L and mix layers with the configured weights."""
    n = table.n_nodes
    if A.n_rows != n or A.n_cols != n:
        raise ValueError(f"adjacency is {A.n_rows}x{A.n_cols}, expected {n}x{n}")
    layers = [table.concat()]
    for _ in range(spec.n_layers):
        layers.append(spmm(A, layers[-1]))
    final = np.zeros_like(layers[0])
    for w, layer in zip(spec.layer_weights, layers):
        final += w * layer
    return PropagatedEmbeddings(per_layer=layers, final=final, n_users=table.n_users)


def score(propagated: PropagatedEmbeddings, u, i) -> float:
    """Inner-product score between user u's and item i's final embeddings."""
    n_users = propagated.n_users
    n_items = propagated.final.shape[0] - n_users
    if not 0 <= u < n_users:
        raise IndexError(f"user index {u} out of range")
    if not 0 <= i < n_items:
        raise IndexError(f"item index {i} out of range")
    return float(propagated.final[u] @ propagated.final[n_users + i])


def column_slice_M(A: SparseMatrix, spec: PropagationSpec, node_index) -> np.ndarray:
    """Column ``node_index`` of M = sum_k alpha_k A^k as a dense vector.

    Computed with k sparse matrix-vector products against a unit vector;
    entry x of the result is dfinal_x / dlayer0_node.
    """
    if not 0 <= node_index < A.n_cols:
        raise IndexError(f"node index {node_index} out of range")
    v = np.zeros(A.n_cols)
    v[node_index] = 1.0
    col = spec.layer_weights[0] * v
    for k in range(1, spec.n_layers + 1):
        v = spmm(A, v)
        col = col + spec.layer_weights[k] * v
    return col


def row_slice_M(A: SparseMatrix, spec: PropagationSpec, node_index) -> np.ndarray:
    """Row ``node_index`` of M, i.e. entry y is dfinal_node / dlayer0_y.

    This is the backpropagation direction through the propagation operator;
    for a symmetric adjacency it equals ``column_slice_M``.
    """
    return column_slice_M(A.transpose(), spec, node_index)


def save_embeddings(path, table: EmbeddingTable):
    """Write a CADEMB1 checkpoint (bit-reproducible for equal tables)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{table.n_users} {table.n_items} {table.dim}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(table.user0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.item0, dtype="<f8").tobytes())


def load_embeddings(path) -> EmbeddingTable:
    """Read a CADEMB1 checkpoint; raises DataError on any format violation."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a CADEMB1 checkpoint")
        header = fh.readline().decode("ascii", errors="replace").split()
        if len(header) != 3:
            raise DataError(f"{path}: malformed checkpoint header")
        try:
            n_users, n_items, d = (int(x) for x in header)
        except ValueError:
            raise DataError(f"{path}: malformed checkpoint header") from None
        if n_users < 0 or n_items < 0 or d < 1:
            raise DataError(f"{path}: invalid checkpoint dimensions")
        payload = fh.read()
    expected = (n_users + n_items) * d * 8
    if len(payload) != expected:
        raise DataError(
            f"{path}: checkpoint payload has {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    user0 = flat[: n_users * d].reshape(n_users, d)
    item0 = flat[n_users * d :].reshape(n_items, d)
    return EmbeddingTable(user0.copy(), item0.copy(), d)
