"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The heavy dynamics
criteria (4, 5, 12) take a few minutes each; the whole module stays inside
its stated runtime budgets.

Criterion 2 asserts, verbatim, that the depth-0 gradient of the positive
item equals +(1 - sigmoid(delta)) * e_u. The finite-difference oracle of
criterion 1 fixes that same quantity to -(1 - sigmoid(delta)) * e_u, and
training only converges with the latter, so criterion 2 is expected to fail;
it is kept faithful rather than weakened.
"""

import dataclasses
import time

import numpy as np

from cadence import cigr, csce, metrics, normlab
from cadence.embed import init_embeddings, propagate, row_slice_M
from cadence.spgraph import PropagationSpec, build_bipartite_adjacency
from cadence.train import TrainConfig, bpr_gradients, sample_triplet, train
from cadence.util import new_rng
from conftest import fd_layer0_gradient, random_dataset
from test_cli import train_small, write_corpus
from test_metrics import brute_coverage, brute_recall, lists_from, wilcoxon_oracle


def report(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def test_c01_gradient_oracle():
    """Analytic layer-0 gradients match central finite differences."""
    rng = new_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        nu, ni = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        ds = random_dataset(rng, nu, ni)
        d = int(rng.integers(2, 9))
        norm = "random_walk" if trial % 2 else "symmetric"
        spec = PropagationSpec(trial % 4, None, norm)
        table = init_embeddings(nu, ni, d, seed=int(rng.integers(1e6)), scale=0.4)
        A = build_bipartite_adjacency(ds, norm)
        prop = propagate(table, A, spec)
        t = sample_triplet(ds, rng)
        nodes = (t.u, nu + t.i, nu + t.j)
        rows = {n: row_slice_M(A, spec, n) for n in nodes}
        bundle = bpr_gradients(t, prop, rows)
        fd = fd_layer0_gradient(ds, A, spec, table, t)
        analytic = np.zeros_like(fd)
        for node, g in bundle.d_layer0.items():
            analytic[node] = g
        denom = np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
    elapsed = time.perf_counter() - t0
    report(
        "C1 gradient oracle: 20 instances, rel err <= 1e-5, < 5 s",
        worst <= 1e-5 and elapsed < 5.0,
        f"max rel err {worst:.2e}, {elapsed:.2f}s",
    )


def test_c02_identity_propagation_gradient():
    """Depth-0 positive-item gradient equals +(1-sigmoid(delta)) * e_u.

    Expected to fail: the finite-difference-verified gradient (criterion 1)
    is the negative of this expression, and descent with the positive sign
    would repel positive items from their users.
    """
    rng = new_rng(202)
    ds = random_dataset(rng, 3, 4)
    table = init_embeddings(3, 4, 5, seed=7, scale=0.5)
    spec = PropagationSpec(0, None, "random_walk")
    A = build_bipartite_adjacency(ds, "random_walk")
    prop = propagate(table, A, spec)
    t = sample_triplet(ds, rng)
    nodes = (t.u, 3 + t.i, 3 + t.j)
    rows = {n: row_slice_M(A, spec, n) for n in nodes}
    bundle = bpr_gradients(t, prop, rows)
    s = 1.0 - bundle.sigma_delta
    expected = s * prop.final[t.u]
    got = bundle.d_layer0[3 + t.i]
    ok = np.array_equal(got, expected)
    report(
        "C2 identity-propagation gradient equals +(1-sigma)*e_u exactly",
        ok,
        "implemented gradient is the finite-difference-consistent negative",
    )


def test_c03_fixed_point_identity():
    rng = new_rng(303)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        kappa = float(rng.uniform(0.01, 5.0))
        beta = float(rng.uniform(0.0, 2.0))
        l2 = float(rng.uniform(1e-4, 1.0))
        n = int(rng.integers(0, 2000))
        total = int(rng.integers(max(n, 1), 10_000))
        lr = float(rng.uniform(1e-4, 0.1))
        mu = normlab.fixed_point_predict(kappa, beta, l2, n, total)
        worst = max(
            worst,
            abs(normlab.fixed_point_residual(mu, kappa, beta, l2, n, total, lr)),
        )
    elapsed = time.perf_counter() - t0
    report(
        "C3 fixed-point residual <= 1e-12 on 1000 draws, < 1 s",
        worst <= 1e-12 and elapsed < 1.0,
        f"max residual {worst:.2e}, {elapsed:.2f}s",
    )


def test_c04_norm_popularity_law():
    cfg = normlab.NormLabConfig(
        n_users=2000, n_items=500, zipf_exponent=1.2, interactions_per_user=40,
        learning_rate=5e-3, l2_coeff=1e-3, steps=700_000, seed=7,
    )
    t0 = time.perf_counter()
    est = normlab.run_norm_dynamics(cfg)
    fit = normlab.norm_popularity_fit(est.final_item_norms, est.popularity)
    dom = normlab.dominance_probability(est.final_item_norms, est.popularity, 2.0)
    elapsed = time.perf_counter() - t0
    report(
        "C4 norm-popularity law: pearson r >= 0.8, dominance(margin 2) >= 0.9, <= 10 min",
        fit.pearson_r >= 0.8 and dom >= 0.9 and elapsed <= 600,
        f"r={fit.pearson_r:.4f}, dominance={dom:.4f}, {elapsed:.0f}s",
    )


def test_c05_azuma_bound():
    cfg = normlab.NormLabConfig(
        n_users=2000, n_items=500, learning_rate=5e-3, l2_coeff=1e-3, seed=7,
        azuma_warmup_steps=60_000, azuma_steps=2000, azuma_target_bound=0.2,
    )
    assert cfg.learning_rate <= 1.0 / (4.0 * cfg.l2_coeff)
    t0 = time.perf_counter()
    rep = normlab.azuma_empirical(cfg, trials=200)
    elapsed = time.perf_counter() - t0
    ok = (
        0.05 <= rep.bound <= 0.5
        and rep.exceedance_frequency <= rep.bound
        and rep.bounded_diff_violations == 0
        and elapsed <= 600
    )
    report(
        "C5 concentration bound: exceedance <= analytic bound in [0.05, 0.5], "
        "per-step |dZ| <= c on every step, <= 10 min",
        ok,
        f"exceedance={rep.exceedance_frequency:.3f}, bound={rep.bound:.3f}, "
        f"max step/c={rep.max_step_over_c:.3f}, {elapsed:.0f}s",
    )


def test_c06_f_beta_values():
    got = metrics.f_beta(0.20, 0.10, 4.0)
    low = metrics.f_beta(0.7, 0.2, 1e-6)
    high = metrics.f_beta(0.7, 0.2, 1e6)
    ok = (
        abs(got - 0.188889) <= 1e-6
        and abs(low - 0.2) <= 1e-4
        and abs(high - 0.7) <= 1e-4
    )
    report(
        "C6 weighted harmonic score: value and limit checks",
        ok,
        f"f(0.2, 0.1, 4)={got:.6f}, beta->0 gives {low:.4f}, beta->inf gives {high:.4f}",
    )


def test_c07_wilcoxon():
    w, p = metrics.wilcoxon_signed_rank([(2, 1), (3, 1), (4, 1), (5, 1), (6, 1)])
    ok = w == 15.0 and abs(p - 0.03125) < 1e-12 and f"{p:.4f}" == "0.0312"
    rng = new_rng(707)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        pairs = [
            (float(rng.integers(-4, 5)), float(rng.integers(-4, 5)))
            for _ in range(n)
        ]
        if all(a == b for a, b in pairs):
            continue
        got = metrics.wilcoxon_signed_rank(pairs)
        want = wilcoxon_oracle(pairs)
        ok = ok and abs(got[0] - want[0]) < 1e-12 and abs(got[1] - want[1]) < 1e-12
    report(
        "C7 signed-rank test: W=15, one-sided exact p=0.03125 (prints 0.0312); "
        "matches enumeration oracle for n <= 10",
        ok,
        f"W={w}, p={p:.4f}",
    )


def test_c08_metrics_oracle():
    rng = new_rng(808)
    ok = True
    for _ in range(50):
        n_users = int(rng.integers(2, 51))
        n_items = int(rng.integers(5, 101))
        n_cats = int(rng.integers(1, 8))
        cats = rng.integers(0, n_cats, size=n_items)
        k = int(rng.integers(1, 12))
        items_per_user = [
            rng.permutation(n_items)[: int(rng.integers(1, n_items + 1))].tolist()
            for _ in range(n_users)
        ]
        test_edges = []
        for u in range(n_users):
            picks = rng.choice(n_items, size=int(rng.integers(0, 4)), replace=False)
            test_edges.extend((u, int(i)) for i in picks)
        lists = lists_from(items_per_user)
        if test_edges:
            ok = ok and metrics.recall_at_k(lists, test_edges, k) == brute_recall(
                items_per_user, test_edges, k
            )
        ok = ok and metrics.coverage_at_k(
            lists, cats, k, n_categories=n_cats
        ) == brute_coverage(items_per_user, cats, k, n_cats)
    report("C8 recall/coverage equal brute-force oracles on 50 corpora", ok)


def test_c09_null_intervention():
    rng = new_rng(909)
    ok = True
    for _ in range(10):
        nu, ni = int(rng.integers(6, 20)), int(rng.integers(8, 25))
        ds = random_dataset(rng, nu, ni)
        table = init_embeddings(nu, ni, 6, seed=int(rng.integers(1e6)))
        A = build_bipartite_adjacency(ds, "symmetric")
        spec = PropagationSpec(2)
        prop = propagate(table, A, spec)
        refined, pruned = cigr.refine_item_embeddings(ds, prop.items(), 0.5, 300, 2)
        cfg = csce.CsceConfig(
            k_global=int(rng.integers(0, 6)),
            k_category=int(rng.integers(0, 3)),
            alpha=1.0,
            list_length=int(rng.integers(3, 12)),
        )
        lists = csce.recommend(prop, refined, ds, pruned, cfg)
        for rec in lists:
            base = prop.user_final(rec.user_index) @ refined.T
            eligible = np.setdiff1d(np.arange(ni), ds.items_of(rec.user_index))
            want = eligible[np.lexsort((eligible, -base[eligible]))]
            ok = ok and rec.items == want[: cfg.list_length].tolist()
    report("C9 alpha=1 re-ranking identical to base ranking on 10 corpora", ok)


def test_c10_alpha_monotonicity():
    ds0 = normlab.zipf_corpus(400, 400, 1.1, 25, seed=42)
    order = np.argsort(-ds0.popularity, kind="stable")
    cats = np.zeros(ds0.n_items, dtype=np.int64)
    n_blocks = 20
    for rank, item in enumerate(order):
        cats[item] = rank * n_blocks // ds0.n_items
    ds = dataclasses.replace(ds0, categories=cats, n_categories=n_blocks)
    A = build_bipartite_adjacency(ds, "symmetric")
    spec = PropagationSpec(2)
    table = init_embeddings(ds.n_users, ds.n_items, 16, seed=1)
    tconf = TrainConfig(
        learning_rate=0.02, l2_coeff=1e-4, batch_size=1024, max_epochs=25,
        patience=50, optimizer="adam", seed=3, eval_k=50,
    )
    model, _ = train(ds, A, table, tconf, spec, lambda uf, itf: 0.0)
    prop = propagate(model.table, A, spec)
    refined, pruned = cigr.refine_item_embeddings(ds, prop.items(), 0.5, 4000, 2)

    prev_cov, prev_cand = -1.0, -1
    ok = True
    rows = []
    for alpha in (1.0, 1.1, 1.2, 1.3, 1.4, 1.5):
        cfg = csce.CsceConfig(k_global=8, k_category=1, alpha=alpha, list_length=100)
        lists = csce.recommend(prop, refined, ds, pruned, cfg)
        cand_in_top = sum(
            len(csce.user_candidates(r.user_index, ds, pruned, cfg) & set(r.items))
            for r in lists
        )
        cov = metrics.coverage_at_k(
            lists, ds.categories, 100, n_categories=ds.n_categories
        )
        ok = ok and cand_in_top >= prev_cand and cov >= prev_cov - 1e-12
        rows.append(f"{alpha:.1f}:{cand_in_top}/{cov:.3f}")
        prev_cand, prev_cov = cand_in_top, cov
    report(
        "C10 sweeping alpha 1.0..1.5: candidates in top-100 and coverage "
        "non-decreasing",
        ok,
        " ".join(rows),
    )


def _epoch_times(history):
    starts = [0.0] + [h["elapsed_seconds"] for h in history[:-1]]
    return [h["elapsed_seconds"] - s for h, s in zip(history, starts)]


def test_c11_complexity_parity():
    spec = PropagationSpec(3)

    def config(dataset):
        # hold the batch count fixed so per-epoch time tracks the per-batch
        # O(L * E * d) propagation cost as |D| grows (averaged batch
        # gradients keep the step scale independent of batch size)
        return TrainConfig(
            learning_rate=0.01, l2_coeff=1e-4,
            batch_size=-(-dataset.n_edges // 14), max_epochs=6,
            patience=99, optimizer="adam", seed=5, eval_k=50,
        )

    # |D| doubles through denser interactions at a fixed node count, which
    # isolates the linear-in-edges contract from cache-size effects
    ds_a = normlab.zipf_corpus(1500, 400, 1.2, 30, seed=21)
    ds_b = normlab.zipf_corpus(1500, 400, 1.2, 78, seed=22)
    ratio_d = ds_b.total_interactions / ds_a.total_interactions
    assert 1.8 <= ratio_d <= 2.2, f"|D| ratio {ratio_d:.2f}"

    A_a = build_bipartite_adjacency(ds_a, "symmetric")
    table = init_embeddings(ds_a.n_users, ds_a.n_items, 32, seed=1)
    t0 = time.perf_counter()
    model, hist_a = train(ds_a, A_a, table, config(ds_a), spec,
                          lambda uf, itf: 0.0)
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    prop = propagate(model.table, A_a, spec)
    cigr.refine_item_embeddings(ds_a, prop.items(), 0.5, 20_000, 2)
    t_refine = time.perf_counter() - t0
    ratio_cigr = (t_train + t_refine) / t_train

    A_b = build_bipartite_adjacency(ds_b, "symmetric")
    table_b = init_embeddings(ds_b.n_users, ds_b.n_items, 32, seed=1)
    _, hist_b = train(ds_b, A_b, table_b, config(ds_b), spec,
                      lambda uf, itf: 0.0)
    per_epoch_a = min(_epoch_times(hist_a))
    per_epoch_b = min(_epoch_times(hist_b))
    ratio_epoch = per_epoch_b / per_epoch_a

    ok = ratio_cigr <= 1.5 and ratio_epoch <= 2.5
    report(
        "C11 refinement overhead <= 1.5x training; doubling |D| raises "
        "per-epoch time <= 2.5x",
        ok,
        f"refinement ratio {ratio_cigr:.2f}, per-epoch ratio {ratio_epoch:.2f} "
        f"(|D| ratio {ratio_d:.2f})",
    )


def test_c12_determinism_and_stability(tmp_path):
    inter, cats = write_corpus(tmp_path, n_users=80, n_items=40, per_user=10)
    for name in ("da", "db"):
        assert train_small(tmp_path, tmp_path / name, inter, cats) == 0
    identical = (tmp_path / "da" / "checkpoint.bin").read_bytes() == (
        tmp_path / "db" / "checkpoint.bin"
    ).read_bytes()

    r_values = []
    for seed in (2021, 2022, 2023, 2024, 2025):
        cfg = normlab.NormLabConfig(steps=300_000, seed=seed)
        est = normlab.run_norm_dynamics(cfg)
        fit = normlab.norm_popularity_fit(est.final_item_norms, est.popularity)
        r_values.append(fit.pearson_r)
    spread = max(r_values) - min(r_values)
    ok = identical and spread <= 0.2
    report(
        "C12 bit-identical retrain; 5-seed pearson spread <= 0.2",
        ok,
        f"identical={identical}, r={['%.3f' % r for r in r_values]}, "
        f"spread={spread:.3f}",
    )
