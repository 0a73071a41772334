"""Pairwise ranking loss, analytic gradients, optimizer steps, training loop.

The loss for a (user, positive, negative) triplet is the softplus form
``-log sigmoid(delta)`` with ``delta = <e_u, e_i> - <e_u, e_j>`` computed on
final (propagated) embeddings. Gradients flow back to layer-0 embeddings
through the linear propagation operator: the derivative of node x's final
embedding with respect to node y's layer-0 embedding is the scalar M_xy, so
``d_layer0[y] = sum_x M_xy * d_final_x`` over the triplet nodes.

L2 regularization is sparse: the ``2 * l2 * e`` term is added at step time to
every row the step touches, never to untouched rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from cadence.embed import EmbeddingTable, PropagatedEmbeddings, propagate
from cadence.spgraph import PropagationSpec, SparseMatrix
from cadence.util import new_rng, sigmoid, softplus

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    l2_coeff: float = 1e-4
    batch_size: int = 2048
    max_epochs: int = 200
    patience: int = 10
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 2021
    eval_k: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass(frozen=True)
class Triplet:
    """A training sample: (u, i) is a train edge, (u, j) is not."""

    u: int
    i: int
    j: int


@dataclass(eq=False)
class GradientBundle:
    """Loss gradients for one triplet.

    ``d_final_*`` are gradients with respect to the final embeddings;
    ``d_layer0`` maps node index (items offset by n_users) to the gradient of
    the loss with respect to that node's layer-0 row, covering every node
    the propagation operator connects to u, i, or j. Regularization is not
    folded in here; steppers add ``2 * l2 * e`` at update time.
    """

    d_final_u: np.ndarray
    d_final_i: np.ndarray
    d_final_j: np.ndarray
    d_layer0: dict
    delta: float
    sigma_delta: float
    final_u: np.ndarray
    final_i: np.ndarray
    final_j: np.ndarray


@dataclass(frozen=True)
class GradientDiagnostics:
    """Geometry of one positive pair's layer-0 gradient."""

    theta_ui: float
    rho_i: float
    g_parallel: float


def sample_triplet(dataset, rng) -> Triplet:
    """Draw one training triplet.

    The (u, i) pair is uniform over train edges, so item i is the positive
    with probability popularity[i] / total. The negative j is uniform over
    items the user has not interacted with, by rejection. Edges of users who
    interacted with every item are resampled; if no user qualifies this
    raises ValueError.
    """
    n_items = dataset.n_items
    for _ in range(10000):
        e = int(rng.integers(dataset.n_edges))
        u = int(dataset.train_u[e])
        pos = dataset.user_pos[u]
        if len(pos) >= n_items:
            if all(len(p) >= n_items for p in dataset.user_pos):
                raise ValueError("every user interacted with every item")
            continue
        i = int(dataset.train_i[e])
        while True:
            j = int(rng.integers(n_items))
            if j not in pos:
                return Triplet(u, i, j)
    raise ValueError("failed to sample a triplet")


def sample_batch(dataset, batch_size, rng):
    """Vectorized batch sampling with the same semantics as sample_triplet."""
    eligible = None
    degrees = np.diff(dataset.user_ptr)
    if degrees.max() >= dataset.n_items:
        eligible = np.flatnonzero(degrees[dataset.train_u] < dataset.n_items)
        if len(eligible) == 0:
            raise ValueError("every user interacted with every item")
    if eligible is None:
        e = rng.integers(dataset.n_edges, size=batch_size)
    else:
        e = eligible[rng.integers(len(eligible), size=batch_size)]
    us = dataset.train_u[e]
    is_ = dataset.train_i[e]
    js = rng.integers(dataset.n_items, size=batch_size)
    keys = dataset._pair_keys  # sorted at dataset construction
    while True:
        cand = us * dataset.n_items + js
        slot = np.searchsorted(keys, cand)
        slot = np.minimum(slot, len(keys) - 1)
        bad = keys[slot] == cand
        if not bad.any():
            break
        js[bad] = rng.integers(dataset.n_items, size=int(bad.sum()))
    return us.astype(np.int64), is_.astype(np.int64), js.astype(np.int64)


def bpr_loss(final_u, final_i, final_j, l2_coeff=0.0, param_sq_norm=0.0) -> float:
    """Pairwise ranking loss: softplus(-delta) + l2_coeff * param_sq_norm."""
    final_u = np.asarray(final_u, dtype=np.float64)
    delta = float(final_u @ final_i - final_u @ final_j)
    return float(softplus(-delta) + l2_coeff * param_sq_norm)


def bpr_gradients(sample: Triplet, propagated: PropagatedEmbeddings, m_slices, l2_coeff=0.0) -> GradientBundle:
    """Analytic gradients for one triplet, down to layer 0.

    ``m_slices`` maps the node indices of u, i, j to their propagation
    operator row slices (row_slice_M): entry y of node x's slice is M_xy,
    the sensitivity of x's final embedding to y's layer-0 row. For the
    symmetric normalization these equal the operator columns. ``l2_coeff``
    is accepted for signature symmetry but applied later by the steppers,
    not folded in.
    """
    if l2_coeff < 0:
        raise ValueError("l2_coeff must be >= 0")
    nu = propagated.n_users
    un, in_, jn = sample.u, nu + sample.i, nu + sample.j
    fu = propagated.final[un]
    fi = propagated.final[in_]
    fj = propagated.final[jn]
    delta = float(fu @ fi - fu @ fj)
    sig = float(sigmoid(delta))
    s = 1.0 - sig
    # d loss / d delta = -(1 - sigmoid(delta)); chain through the three scores
    d_u = -s * (fi - fj)
    d_i = -s * fu
    d_j = s * fu
    rows = {un: np.asarray(m_slices[un]), in_: np.asarray(m_slices[in_]), jn: np.asarray(m_slices[jn])}
    support = np.flatnonzero((rows[un] != 0) | (rows[in_] != 0) | (rows[jn] != 0))
    d_layer0 = {}
    for y in support:
        d_layer0[int(y)] = rows[un][y] * d_u + rows[in_][y] * d_i + rows[jn][y] * d_j
    return GradientBundle(
        d_final_u=d_u,
        d_final_i=d_i,
        d_final_j=d_j,
        d_layer0=d_layer0,
        delta=delta,
        sigma_delta=sig,
        final_u=fu.copy(),
        final_i=fi.copy(),
        final_j=fj.copy(),
    )


def gradient_diagnostics(bundle: GradientBundle, table: EmbeddingTable, u, i) -> GradientDiagnostics:
    """Angle, norm ratio, and parallel gradient component for a positive pair.

    ``g_parallel`` is the projection of the positive item's layer-0 gradient
    onto its own layer-0 direction; a negative value means the plain SGD
    step grows that item's norm.
    """
    e_i0 = table.item0[i]
    fu = bundle.final_u
    nu_norm = float(np.linalg.norm(fu))
    ni0_norm = float(np.linalg.norm(e_i0))
    if nu_norm == 0.0 or ni0_norm == 0.0:
        raise ValueError("diagnostics need nonzero user final and item layer-0 norms")
    cos = float(fu @ e_i0) / (nu_norm * ni0_norm)
    theta = float(np.arccos(np.clip(cos, -1.0, 1.0)))
    rho = float(np.linalg.norm(bundle.final_i)) / nu_norm
    node_i = table.n_users + i
    g = bundle.d_layer0.get(node_i)
    g_par = 0.0 if g is None else float(g @ e_i0) / ni0_norm
    return GradientDiagnostics(theta_ui=theta, rho_i=rho, g_parallel=g_par)


def sgd_step(table: EmbeddingTable, bundle: GradientBundle, learning_rate, l2_coeff) -> EmbeddingTable:
    """Apply e <- e - lr * (g + 2 * l2 * e) to every row in the bundle."""
    for node, g in bundle.d_layer0.items():
        row = table.row(node)
        new = row - learning_rate * (g + 2.0 * l2_coeff * row)
        if not np.all(np.isfinite(new)):
            raise RuntimeError(
                f"non-finite update at node {node}: |g|={np.abs(g).max():.3e}"
            )
        table.set_row(node, new)
    return table


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators plus the global step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_table(cls, table: EmbeddingTable) -> "AdamState":
        shape = (table.n_nodes, table.dim)
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)


def adam_step(table: EmbeddingTable, bundle: GradientBundle, config: TrainConfig, state: AdamState):
    """Adam update on the rows the bundle touches (lazy sparse variant).

    Moments update only for touched rows; bias correction uses the global
    step count. Regularization enters as an added 2 * l2 * e term on the raw
    gradient.
    """
    rows = sorted(bundle.d_layer0)
    if not rows:
        state.t += 1
        return table, state
    grads = [bundle.d_layer0[r] for r in rows]
    _adam_apply(table, np.asarray(rows, dtype=np.int64), np.asarray(grads), config, state)
    return table, state


def _adam_apply(table, rows, grads, config, state):
    b1, b2 = config.adam_betas
    eps = config.adam_eps
    l2 = config.l2_coeff
    state.t += 1
    t = state.t
    if len(rows) == 0:
        return
    flat = table.concat()  # copy; touched rows written back below
    e_rows = flat[rows]
    g = grads + 2.0 * l2 * e_rows
    state.m[rows] = b1 * state.m[rows] + (1.0 - b1) * g
    state.v[rows] = b2 * state.v[rows] + (1.0 - b2) * g * g
    m_hat = state.m[rows] / (1.0 - b1**t)
    v_hat = state.v[rows] / (1.0 - b2**t)
    new = e_rows - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(new)):
        raise RuntimeError("non-finite adam update")
    _write_rows(table, rows, new)


def _write_rows(table, rows, values):
    umask = rows < table.n_users
    table.user0[rows[umask]] = values[umask]
    table.item0[rows[~umask] - table.n_users] = values[~umask]


@dataclass(eq=False)
class TrainedModel:
    table: EmbeddingTable
    best_epoch: int
    best_metric: float


def recall_eval_hook(dataset, k):
    """Default epoch-end evaluator: Recall@k of the base-model ranking.

    Ranks all items per user by final-embedding inner product, excluding
    train items; averages |top-k ∩ test| / |test| over users with test items.
    """
    test = dataset.test_sets()

    def hook(user_finals, item_finals):
        if not test:
            return 0.0
        scores = user_finals @ item_finals.T
        scores[dataset.train_u, dataset.train_i] = -np.inf
        kk = min(k, dataset.n_items)
        total = 0.0
        for u, items in test.items():
            if kk == 0:
                continue
            top = np.argpartition(-scores[u], kk - 1)[:kk]
            total += len(items.intersection(top.tolist())) / len(items)
        return total / len(test)

    return hook


def train(dataset, graph: SparseMatrix, table: EmbeddingTable, config: TrainConfig,
          prop_spec: PropagationSpec, eval_hook):
    """Mini-batch training loop with early stopping on the eval metric.

    Each epoch runs ceil(|D| / b) batches. Per batch: triplets are sampled,
    final embeddings are computed once, per-triplet final-embedding gradients
    are scattered and averaged, backpropagated through the propagation
    operator (transpose iteration), and one optimizer step is applied to the
    touched rows. Training stops when the eval metric fails to improve for
    ``patience`` consecutive epochs; the best-epoch snapshot is returned.

    History rows are (epoch, loss, recall_at_k, elapsed_seconds).
    """
    rng = new_rng(config.seed)
    n_users = table.n_users
    n_nodes = table.n_nodes
    At = graph.transpose().csr()
    alphas = prop_spec.layer_weights
    n_batches = max(1, -(-dataset.n_edges // config.batch_size))
    state = AdamState.for_table(table) if config.optimizer == "adam" else None

    best = TrainedModel(table=table.copy(), best_epoch=0, best_metric=-np.inf)
    history = []
    bad_epochs = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        epoch_loss = 0.0
        for _ in range(n_batches):
            us, is_, js = sample_batch(dataset, config.batch_size, rng)
            prop = propagate(table, graph, prop_spec)
            un = us
            in_ = n_users + is_
            jn = n_users + js
            fu = prop.final[un]
            fi = prop.final[in_]
            fj = prop.final[jn]
            delta = np.einsum("bd,bd->b", fu, fi - fj)
            s = 1.0 - sigmoid(delta)

            e0 = prop.per_layer[0]
            sqn = (
                np.einsum("bd,bd->b", e0[un], e0[un])
                + np.einsum("bd,bd->b", e0[in_], e0[in_])
                + np.einsum("bd,bd->b", e0[jn], e0[jn])
            )
            epoch_loss += float(np.mean(softplus(-delta) + config.l2_coeff * sqn))

            G = np.zeros((n_nodes, table.dim))
            np.add.at(G, un, -s[:, None] * (fi - fj))
            np.add.at(G, in_, -s[:, None] * fu)
            np.add.at(G, jn, s[:, None] * fu)
            G /= config.batch_size

            G0 = alphas[0] * G
            H = G
            for k in range(1, prop_spec.n_layers + 1):
                H = At @ H
                G0 += alphas[k] * H

            touched = np.flatnonzero(np.any(G0 != 0.0, axis=1))
            if config.optimizer == "sgd":
                flat = table.concat()
                rows = flat[touched]
                new = rows - config.learning_rate * (G0[touched] + 2.0 * config.l2_coeff * rows)
                if not np.all(np.isfinite(new)):
                    raise RuntimeError("non-finite sgd update")
                _write_rows(table, touched, new)
            else:
                _adam_apply(table, touched, G0[touched], config, state)

        prop = propagate(table, graph, prop_spec)
        recall = float(eval_hook(prop.users(), prop.items()))
        history.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / n_batches,
                "recall_at_k": recall,
                "elapsed_seconds": time.perf_counter() - t0,
            }
        )
        if recall > best.best_metric:
            best = TrainedModel(table=table.copy(), best_epoch=epoch, best_metric=recall)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    return best, history
