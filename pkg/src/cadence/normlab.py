"""Empirical verification lab for SGD embedding-norm dynamics.

Simulates the per-sample stochastic process whose expected single-step norm
increment is ``lr * [(kappa - beta * mu) * n_i/|D| - 2 * l2 * mu]``: at each
step one positive interaction (u, i) is drawn uniformly from the training
edges, a negative j is drawn uniformly from the items u has not interacted
with, and the layer-0 rows of u and i receive their analytic loss gradients
(the negative enters through delta and the gradients, not through an update
of its own row) while the ``2 * l2 * e`` weight decay shrinks every row
every step. Decay is applied lazily as a multiplicative counter, so steps
stay O(d). Streaming estimates accumulate:

* ``kappa_bar``: mean of (1-sigmoid(delta)) * (M_ii + M_ui) * cos(theta_ui)
  over positive samples, where theta_ui is the angle between the user final
  embedding and the item layer-0 embedding;
* ``beta_hat``: mean of (1-sigmoid(delta)) * M_ui / ||e_u||.

The lab checks: the first-order norm-increment prediction per step, the
steady-state norm formula and its residual identity, the norm-popularity
correlation and dominance rate, and a concentration bound on the running
maximum of one tracked item's norm (supermartingale-style exponential tail).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cadence.corpus import Dataset
from cadence.embed import EmbeddingTable, init_embeddings, propagate, row_slice_M
from cadence.spgraph import PropagationSpec, build_bipartite_adjacency
from cadence.util import new_rng


@dataclass(frozen=True)
class NormLabConfig:
    """Synthetic-corpus and training knobs for the dynamics runs.

    Defaults give a skewed, minutes-scale corpus: 2000 users, 500 items,
    Zipf(1.2) item popularity, 40 draws per user.
    """

    n_users: int = 2000
    n_items: int = 500
    zipf_exponent: float = 1.2
    interactions_per_user: int = 40
    dim: int = 32
    init_scale: float = 0.05
    n_layers: int = 1
    layer_weights: tuple = None
    learning_rate: float = 5e-3
    l2_coeff: float = 1e-3
    steps: int = 700_000
    seed: int = 7
    record_interval: int = 10
    tracked_items: tuple = None
    n_tracked: int = 16
    divergence_factor: float = 10.0
    # concentration experiment
    azuma_warmup_steps: int = 60_000
    azuma_steps: int = 2_000
    azuma_epsilon: float = None
    azuma_target_bound: float = 0.2

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2_coeff < 0:
            raise ValueError("learning_rate and l2_coeff must be >= 0")
        if self.steps < 0 or self.record_interval < 1:
            raise ValueError("steps must be >= 0 and record_interval >= 1")
        if self.dim < 1 or self.init_scale <= 0:
            raise ValueError("dim must be >= 1 and init_scale > 0")


def zipf_corpus(n_users=2000, n_items=500, exponent=1.2, interactions_per_user=40,
                seed=0) -> Dataset:
    """Synthetic implicit-feedback corpus with Zipf-distributed item draws.

    Each user draws ``interactions_per_user`` items i.i.d. from a truncated
    Zipf law; duplicate (user, item) pairs collapse, so expected per-user
    degree is a little below the draw count. No test split.
    """
    rng = new_rng(seed)
    p = 1.0 / np.arange(1, n_items + 1, dtype=np.float64) ** exponent
    p /= p.sum()
    draws = rng.choice(n_items, size=(n_users, interactions_per_user), p=p)
    edges = []
    for u in range(n_users):
        for i in np.unique(draws[u]):
            edges.append((u, int(i)))
    pop = np.zeros(n_items, dtype=np.int64)
    for _, i in edges:
        pop[i] += 1
    return Dataset(
        n_users=n_users,
        n_items=n_items,
        train_edges=edges,
        test_edges=[],
        popularity=pop,
        total_interactions=int(pop.sum()),
        n_edges=len(edges),
        categories=np.zeros(n_items, dtype=np.int64),
        n_categories=1,
    )


class _PairStream:
    """The analyzed per-sample process: u and i row updates plus dense decay.

    Depth-1 propagation has a locality fast path (finals and operator
    entries come from one neighbor gather per node); other depths fall back
    to full per-step propagation and operator row slices, which is exact but
    slow and meant for small graphs. Weight decay multiplies every row by
    (1 - 2 * lr * l2) per step; it is materialized lazily via per-row
    last-touch counters so untouched rows cost nothing.
    """

    def __init__(self, dataset: Dataset, config: NormLabConfig):
        self.ds = dataset
        self.nu = dataset.n_users
        self.ni = dataset.n_items
        self.lr = config.learning_rate
        self.l2 = config.l2_coeff
        self.rho = 1.0 - 2.0 * self.lr * self.l2
        self.spec = PropagationSpec(
            config.n_layers, config.layer_weights, "random_walk"
        )
        self.a = self.spec.layer_weights
        self.fast = config.n_layers == 1
        self.A = build_bipartite_adjacency(dataset, "random_walk")
        self.indptr = self.A.row_ptr
        self.indices = self.A.col_idx
        self.avals = self.A.values
        init_seed, samp_seed = (
            int(x) for x in np.random.SeedSequence(config.seed).generate_state(2)
        )
        table = init_embeddings(self.nu, self.ni, config.dim, init_seed, config.init_scale)
        self.e0 = table.concat()
        self.last = np.zeros(self.nu + self.ni, dtype=np.int64)
        self.t = 0
        self.train_u = dataset.train_u
        self.train_i = dataset.train_i
        self.n_edges = dataset.n_edges
        self.user_pos = dataset.user_pos
        self.divergence_factor = config.divergence_factor
        self.reseed(samp_seed)
        self.reset_estimators()

    # -- sampling ---------------------------------------------------------

    def reseed(self, seed):
        self.rng = new_rng(seed)
        self._ebuf = np.empty(0, dtype=np.int64)
        self._ei = 0
        self._jbuf = np.empty(0, dtype=np.int64)
        self._ji = 0

    def _next_edge(self):
        if self._ei >= len(self._ebuf):
            self._ebuf = self.rng.integers(0, self.n_edges, size=8192)
            self._ei = 0
        e = self._ebuf[self._ei]
        self._ei += 1
        return int(e)

    def _next_item(self):
        if self._ji >= len(self._jbuf):
            self._jbuf = self.rng.integers(0, self.ni, size=8192)
            self._ji = 0
        j = self._jbuf[self._ji]
        self._ji += 1
        return int(j)

    # -- estimators -------------------------------------------------------

    def reset_estimators(self):
        ni = self.ni
        self.k_sum = np.zeros(ni)
        self.b_sum = np.zeros(ni)
        self.u_norm_sum = np.zeros(ni)
        self.count = np.zeros(ni, dtype=np.int64)
        self.gap_sum = 0.0
        self.gap_n = 0

    @property
    def kappa_bar(self):
        n = int(self.count.sum())
        return float(self.k_sum.sum() / n) if n else 0.0

    @property
    def beta_hat(self):
        n = int(self.count.sum())
        return float(self.b_sum.sum() / n) if n else 0.0

    def per_item_means(self, min_samples=5):
        mask = self.count >= min_samples
        k = np.divide(self.k_sum, self.count, out=np.zeros(self.ni), where=mask)
        b = np.divide(self.b_sum, self.count, out=np.zeros(self.ni), where=mask)
        un = np.divide(self.u_norm_sum, self.count, out=np.zeros(self.ni), where=mask)
        return mask, k, b, un

    # -- lazy decay and propagation helpers ---------------------------------

    def _current_row(self, node):
        """Row value at the present step without writing it back."""
        return self.e0[node] * self.rho ** int(self.t - self.last[node])

    def _current_rows(self, nodes):
        factors = np.power(self.rho, (self.t - self.last[nodes]).astype(np.float64))
        return self.e0[nodes] * factors[:, None]

    def materialize_all(self):
        """Fold the pending decay into the stored array."""
        if self.rho != 1.0:
            factors = np.power(self.rho, (self.t - self.last).astype(np.float64))
            self.e0 *= factors[:, None]
        self.last[:] = self.t

    def _final_local(self, node):
        lo, hi = self.indptr[node], self.indptr[node + 1]
        nbrs = self.indices[lo:hi]
        w = self.avals[lo:hi]
        return self.a[0] * self._current_row(node) + self.a[1] * (
            w @ self._current_rows(nbrs)
        )

    def item_layer0_norms(self):
        self.materialize_all()
        return np.linalg.norm(self.e0[self.nu :], axis=1)

    def final_item_norms(self):
        self.materialize_all()
        table = EmbeddingTable(
            self.e0[: self.nu].copy(), self.e0[self.nu :].copy(), self.e0.shape[1]
        )
        prop = propagate(table, self.A, self.spec)
        return np.linalg.norm(prop.items(), axis=1)

    def current_norm(self, node):
        row = self.e0[node]
        return math.sqrt(float(row @ row)) * self.rho ** int(self.t - self.last[node])

    # -- one step of the analyzed process ------------------------------------

    def step(self):
        """One per-sample update; returns the triplet's node indices.

        Updates the layer-0 rows of u and i with their analytic gradients;
        the negative j shapes delta and the gradients but its own row is not
        part of the modeled dynamics. The dense 2*l2 decay advances one tick.
        """
        while True:
            e = self._next_edge()
            u = int(self.train_u[e])
            pos = self.user_pos[u]
            if len(pos) < self.ni:
                break
        i = int(self.train_i[e])
        while True:
            j = self._next_item()
            if j not in pos:
                break
        nu = self.nu
        un, in_, jn = u, nu + i, nu + j
        rho = self.rho

        if self.fast:
            f_u = self._final_local(un)
            f_i = self._final_local(in_)
            f_j = self._final_local(jn)
            deg_u = int(self.indptr[un + 1] - self.indptr[un])
            deg_i = int(self.indptr[in_ + 1] - self.indptr[in_])
            m_uu = m_ii = self.a[0]
            m_ui = self.a[1] / deg_u  # A_ui = 1/deg(u), the (u, i) edge exists
            m_iu = self.a[1] / deg_i
        else:
            self.materialize_all()
            X = self.e0
            f_all = self.a[0] * X
            H = X
            csr = self.A.csr()
            for k in range(1, self.spec.n_layers + 1):
                H = csr @ H
                f_all = f_all + self.a[k] * H
            f_u, f_i, f_j = f_all[un], f_all[in_], f_all[jn]
            row_u = row_slice_M(self.A, self.spec, un)
            row_i = row_slice_M(self.A, self.spec, in_)
            row_j = row_slice_M(self.A, self.spec, jn)
            m_uu, m_iu = row_u[un], row_i[un]
            m_ui, m_ii = row_u[in_], row_i[in_]

        delta = float(f_u @ f_i - f_u @ f_j)
        if delta >= 0:
            sig = 1.0 / (1.0 + math.exp(-delta))
        else:
            ex = math.exp(delta)
            sig = ex / (1.0 + ex)
        s = 1.0 - sig

        d_u = -s * (f_i - f_j)
        d_i = -s * f_u
        d_j = s * f_u

        if self.fast:
            # within one hop M_ju = M_ji = 0 for a sampled triplet (no u-j
            # edge, no item-item edges), so d_j does not reach these rows
            g_u = m_uu * d_u + m_iu * d_i
            g_i = m_ui * d_u + m_ii * d_i
        else:
            g_u = m_uu * d_u + m_iu * d_i + row_j[un] * d_j
            g_i = m_ui * d_u + m_ii * d_i + row_j[in_] * d_j

        e_u0 = self._current_row(un)
        e_i0 = self._current_row(in_)
        n_i0 = math.sqrt(float(e_i0 @ e_i0))
        n_fu = math.sqrt(float(f_u @ f_u))
        recorded = n_i0 > 0.0 and n_fu > 0.0
        if recorded:
            cos = float(f_u @ e_i0) / (n_fu * n_i0)
            self.k_sum[i] += s * (m_ii + m_ui) * cos
            self.b_sum[i] += s * m_ui / n_fu
            self.u_norm_sum[i] += n_fu
            self.count[i] += 1
            g_par = float(g_i @ e_i0) / n_i0
            predicted = -self.lr * g_par - 2.0 * self.lr * self.l2 * n_i0

        self.e0[un] = rho * e_u0 - self.lr * g_u
        self.e0[in_] = rho * e_i0 - self.lr * g_i
        self.t += 1
        self.last[un] = self.t
        self.last[in_] = self.t

        if recorded:
            row = self.e0[in_]
            new_norm = math.sqrt(float(row @ row))
            self.gap_sum += abs((new_norm - n_i0) - predicted)
            self.gap_n += 1

        if self.t % 4096 == 0:
            self._check_divergence()
        return un, in_, jn

    def _check_divergence(self):
        if self.l2 <= 0 or int(self.count.sum()) < 1000:
            return
        c_run = self.kappa_bar / (2.0 * self.l2)
        if c_run <= 0:
            return
        factors = np.power(self.rho, (self.t - self.last).astype(np.float64))
        max_norm = float((np.linalg.norm(self.e0, axis=1) * factors).max())
        if max_norm > self.divergence_factor * c_run:
            raise RuntimeError(
                f"norm dynamics diverged: max row norm {max_norm:.3g} exceeds "
                f"{self.divergence_factor:g} * C with C={c_run:.3g} "
                f"(kappa_bar={self.kappa_bar:.3g}, l2={self.l2:g})"
            )


@dataclass(eq=False)
class DynamicsEstimates:
    """Streaming estimates and trajectories from one dynamics run."""

    kappa_bar: float
    beta_hat: float
    norm_trajectories: dict
    popularity: np.ndarray
    total: int
    layer0_item_norms: np.ndarray
    final_item_norms: np.ndarray
    kappa_item_cv: float
    beta_item_cv: float
    user_norm_cv: float
    a13_gap_mean: float
    steps: int
    learning_rate: float
    l2_coeff: float
    table: EmbeddingTable


def _stratified_items(popularity, n_tracked):
    order = np.lexsort((np.arange(len(popularity)), -np.asarray(popularity)))
    if n_tracked >= len(order):
        return [int(x) for x in order]
    idx = np.linspace(0, len(order) - 1, n_tracked).round().astype(int)
    return [int(order[k]) for k in idx]


def _cv(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return float("nan")
    mean = values.mean()
    if mean == 0:
        return float("nan")
    return float(values.std() / abs(mean))


def run_norm_dynamics(config: NormLabConfig, dataset: Dataset = None) -> DynamicsEstimates:
    """Train with per-sample SGD and return drift estimates and trajectories.

    Aborts with a diagnostic if any embedding norm exceeds
    ``divergence_factor`` times the running steady-state scale.
    """
    ds = dataset if dataset is not None else zipf_corpus(
        config.n_users, config.n_items, config.zipf_exponent,
        config.interactions_per_user, config.seed,
    )
    stream = _PairStream(ds, config)
    tracked = (
        list(config.tracked_items)
        if config.tracked_items is not None
        else _stratified_items(ds.popularity, config.n_tracked)
    )
    traj = {t: [] for t in tracked}
    nu = ds.n_users
    for t in range(config.steps):
        if t % config.record_interval == 0:
            for item in tracked:
                traj[item].append(stream.current_norm(nu + item))
        stream.step()
    for item in tracked:
        traj[item].append(stream.current_norm(nu + item))

    mask, k_means, b_means, u_means = stream.per_item_means()
    stream.materialize_all()
    table = EmbeddingTable(
        stream.e0[:nu].copy(), stream.e0[nu:].copy(), stream.e0.shape[1]
    )
    return DynamicsEstimates(
        kappa_bar=stream.kappa_bar,
        beta_hat=stream.beta_hat,
        norm_trajectories={t: np.asarray(v) for t, v in traj.items()},
        popularity=np.asarray(ds.popularity).copy(),
        total=ds.total_interactions,
        layer0_item_norms=stream.item_layer0_norms(),
        final_item_norms=stream.final_item_norms(),
        kappa_item_cv=_cv(k_means[mask]),
        beta_item_cv=_cv(b_means[mask]),
        user_norm_cv=_cv(u_means[mask]),
        a13_gap_mean=stream.gap_sum / stream.gap_n if stream.gap_n else float("nan"),
        steps=config.steps,
        learning_rate=config.learning_rate,
        l2_coeff=config.l2_coeff,
        table=table,
    )


# -- steady state -----------------------------------------------------------


def fixed_point_predict(kappa_bar, beta_hat, l2_coeff, n_i, total):
    """Steady-state norm: the mu solving (kappa - beta*mu) * p = 2*l2*mu.

    With p = n_i / total the exact solution is
    ``mu = kappa_bar * p / (2*l2 + beta_hat * p)``, which grows linearly in
    n_i in the regime beta_hat * p << 2*l2 and saturates beyond it.
    """
    if 2.0 * l2_coeff + beta_hat <= 0:
        raise ValueError("need 2*l2 + beta_hat > 0")
    p = np.asarray(n_i, dtype=np.float64) / float(total)
    denom = 2.0 * l2_coeff + beta_hat * p
    if np.any(denom <= 0):
        raise ValueError("non-positive denominator in fixed point")
    mu = kappa_bar * p / denom
    return float(mu) if np.isscalar(n_i) else mu


def fixed_point_residual(mu, kappa_bar, beta_hat, l2_coeff, n_i, total, learning_rate):
    """Expected single-step norm drift lr * [(kappa - beta*mu) * p - 2*l2*mu].

    Zero (to rounding) exactly at the fixed_point_predict value; positive at
    mu = 0 when n_i > 0; negative above the fixed point (restoring force).
    """
    p = np.asarray(n_i, dtype=np.float64) / float(total)
    res = learning_rate * ((kappa_bar - beta_hat * np.asarray(mu)) * p
                           - 2.0 * l2_coeff * np.asarray(mu))
    return float(res) if np.isscalar(mu) else res


@dataclass(frozen=True)
class FitResult:
    pearson_r: float
    slope: float
    intercept: float
    degenerate: bool = False


def norm_popularity_fit(final_norms, popularity) -> FitResult:
    """Least-squares fit of item norms against popularity plus Pearson r.

    Items with zero popularity are excluded. Constant norms yield r = 0 with
    the degenerate flag set; constant popularity is an error.
    """
    norms = np.asarray(final_norms, dtype=np.float64)
    pop = np.asarray(popularity, dtype=np.float64)
    mask = pop >= 1
    x, y = pop[mask], norms[mask]
    if len(x) < 10:
        raise ValueError("need at least 10 items with positive popularity")
    if np.all(x == x[0]):
        raise ValueError("zero variance in popularity")
    if np.all(y == y[0]):
        return FitResult(0.0, 0.0, float(y[0]), degenerate=True)
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1])
    return FitResult(pearson_r=r, slope=float(slope), intercept=float(intercept))


def dominance_probability(final_norms, popularity, margin) -> float:
    """Fraction of ordered pairs with n_i >= margin * n_j (n_j >= 1) where
    item i's norm strictly exceeds item j's."""
    if margin < 1:
        raise ValueError("margin must be >= 1")
    norms = np.asarray(final_norms, dtype=np.float64)
    pop = np.asarray(popularity, dtype=np.float64)
    qual = (pop[:, None] >= margin * pop[None, :]) & (pop[None, :] >= 1)
    np.fill_diagonal(qual, False)
    n_pairs = int(qual.sum())
    if n_pairs == 0:
        raise ValueError("no qualifying pairs at this margin")
    wins = norms[:, None] > norms[None, :]
    return float(wins[qual].sum() / n_pairs)


# -- concentration of the running-maximum norm --------------------------------


@dataclass(frozen=True)
class AzumaParams:
    """Parameters of the exponential tail bound on sup_t ||e_t|| - C.

    C = kappa_bar / (2 * l2); per-step difference bound
    c = 2 * lr * (kappa_bar + l2 * C). Requires lr <= 1 / (4 * l2).
    """

    kappa_bar: float
    l2_coeff: float
    learning_rate: float
    steps: int
    epsilon: float

    def __post_init__(self):
        if self.l2_coeff <= 0:
            raise ValueError("l2_coeff must be > 0")
        if self.learning_rate > 1.0 / (4.0 * self.l2_coeff):
            raise ValueError("bound requires learning_rate <= 1/(4*l2)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    @property
    def C(self):
        return self.kappa_bar / (2.0 * self.l2_coeff)

    @property
    def c(self):
        return 2.0 * self.learning_rate * (self.kappa_bar + self.l2_coeff * self.C)


def azuma_bound(params: AzumaParams) -> float:
    """exp(-epsilon^2 / (4 * T * c^2)): tail bound for the running maximum."""
    c = params.c
    if c <= 0:
        raise ValueError("difference bound c must be positive")
    return float(np.exp(-params.epsilon**2 / (4.0 * params.steps * c * c)))


@dataclass(eq=False)
class TrajectorySample:
    """One trial: Z_t = ||e_t|| - C per step, plus per-step difference data."""

    z: np.ndarray
    sup_exceeded: bool
    max_step: float


@dataclass(eq=False)
class AzumaReport:
    exceedance_frequency: float
    bound: float
    params: AzumaParams
    trials: int
    n_exceeded: int
    tracked_item: int
    bounded_diff_violations: int
    max_step_over_c: float
    samples: list


def _azuma_trial_batch(dataset, config, snapshot, node, C, eps, seeds):
    stream = _PairStream(dataset, config)
    out = []
    for seed in seeds:
        stream.e0[:] = snapshot
        stream.last[:] = 0
        stream.t = 0
        stream.reseed(int(seed))
        stream.reset_estimators()
        cur = math.sqrt(float(stream.e0[node] @ stream.e0[node]))
        z = np.empty(config.azuma_steps)
        max_step = 0.0
        for t in range(config.azuma_steps):
            _, in_, _ = stream.step()
            if node == in_:
                new = math.sqrt(float(stream.e0[node] @ stream.e0[node]))
            else:
                new = cur * stream.rho  # dense decay tick
            step_sz = abs(new - cur)
            if step_sz > max_step:
                max_step = step_sz
            cur = new
            z[t] = cur - C
        out.append(
            TrajectorySample(z=z, sup_exceeded=bool((z > eps).any()), max_step=max_step)
        )
    return out


def azuma_empirical(config: NormLabConfig, trials, dataset: Dataset = None,
                    n_jobs=1) -> AzumaReport:
    """Monte Carlo exceedance of the norm bound versus its analytic value.

    A single warmup run develops alignment; kappa_bar is estimated on the
    second warmup half and fixes C, c, and (if not given) an epsilon whose
    analytic bound equals ``azuma_target_bound``. All trials branch from the
    warmup state with independent sampling streams and track one mid-scale
    item. Per-step |Z_{t+1} - Z_t| <= c is asserted on every step; violations
    are reported as a distinct failure class rather than silently folded
    into the exceedance comparison.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ds = dataset if dataset is not None else zipf_corpus(
        config.n_users, config.n_items, config.zipf_exponent,
        config.interactions_per_user, config.seed,
    )
    stream = _PairStream(ds, config)
    half = config.azuma_warmup_steps // 2
    for _ in range(half):
        stream.step()
    stream.reset_estimators()
    for _ in range(config.azuma_warmup_steps - half):
        stream.step()
    kappa = stream.kappa_bar
    if kappa <= 0:
        raise RuntimeError(
            f"warmup produced kappa_bar={kappa:.3g} <= 0; no alignment signal"
        )
    c = 2.0 * config.learning_rate * (kappa + config.l2_coeff * kappa / (2.0 * config.l2_coeff))
    eps = config.azuma_epsilon
    if eps is None:
        eps = 2.0 * c * math.sqrt(config.azuma_steps * math.log(1.0 / config.azuma_target_bound))
    params = AzumaParams(
        kappa_bar=kappa,
        l2_coeff=config.l2_coeff,
        learning_rate=config.learning_rate,
        steps=config.azuma_steps,
        epsilon=float(eps),
    )
    C = params.C

    norms = stream.item_layer0_norms()
    pop = np.asarray(ds.popularity)
    candidates = np.flatnonzero((pop >= 1) & (norms <= 0.8 * C))
    if len(candidates) == 0:
        raise RuntimeError(
            f"no item starts below 0.8*C (C={C:.3g}); adjust l2 or warmup"
        )
    tracked = int(candidates[np.argmin(np.abs(norms[candidates] - 0.5 * C))])
    node = ds.n_users + tracked

    seeds = np.random.SeedSequence([config.seed, 0xA2]).generate_state(trials)
    snapshot = stream.e0.copy()
    if n_jobs > 1:
        from joblib import Parallel, delayed

        chunks = np.array_split(seeds, n_jobs)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_azuma_trial_batch)(ds, config, snapshot, node, C, eps, ch)
            for ch in chunks if len(ch)
        )
        samples = [s for batch in results for s in batch]
    else:
        samples = _azuma_trial_batch(ds, config, snapshot, node, C, eps, seeds)

    n_exceeded = sum(s.sup_exceeded for s in samples)
    max_step = max(s.max_step for s in samples)
    violations = sum(s.max_step > params.c + 1e-12 for s in samples)
    return AzumaReport(
        exceedance_frequency=n_exceeded / trials,
        bound=azuma_bound(params),
        params=params,
        trials=trials,
        n_exceeded=n_exceeded,
        tracked_item=tracked,
        bounded_diff_violations=violations,
        max_step_over_c=max_step / params.c if params.c > 0 else float("inf"),
        samples=samples,
    )
