"""Command-line entry point and experiment orchestration.

Subcommands: ``train``, ``rerank``, ``eval``, ``verify-norm``, ``sweep``.
Configuration resolves in three layers: dataclass defaults, then a flat
``key = value`` config file (``--config``), then explicit CLI flags. Every
command writes a ``manifest.txt`` next to its outputs holding the fully
resolved configuration; re-running with ``--config manifest.txt`` reproduces
the outputs bit for bit.

Exit codes: 0 success, 2 usage/config error (including missing input files),
3 data error (malformed content, dimension mismatches), 4 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

import cadence
from cadence import cigr, csce, metrics, normlab
from cadence.corpus import DataError, build_dataset, load_categories, load_interactions
from cadence.embed import init_embeddings, load_embeddings, propagate, save_embeddings
from cadence.spgraph import PropagationSpec, build_bipartite_adjacency
from cadence.train import TrainConfig, recall_eval_hook, train

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 2."""


class VerificationFailure(Exception):
    """A requested verification check did not pass; maps to exit code 4."""


@dataclass
class RunConfig:
    # paths
    interactions: str = None
    categories: str = None
    out: str = "runs/latest"
    checkpoint: str = None
    recs: str = None
    name: str = "dataset"
    config: str = None
    # backbone / training
    lr: float = 0.001
    l2: float = 1e-4
    batch_size: int = 2048
    dim: int = 32
    layers: int = 3
    epochs: int = 200
    patience: int = 10
    optimizer: str = "adam"
    eval_k: int = 100
    normalization: str = "symmetric"
    seed: str = "2021"
    holdout: float = 0.2
    min_interactions: int = 1
    # item-graph refinement
    lii: int = 2
    decay_ratio: float = 0.5
    edge_budget: int = 20000
    # re-ranking
    kg: int = 4
    kc: int = 1
    alpha: float = 1.15
    list_length: int = 100
    rank_key: str = "max"
    # metrics
    beta_f: float = 4.0
    coverage_mode: str = "category"
    # execution
    threads: int = 1
    # norm lab
    nl_users: int = 2000
    nl_items: int = 500
    nl_per_user: int = 40
    nl_zipf: float = 1.2
    nl_steps: int = 700_000
    nl_scale: float = 0.05
    nl_layers: int = 1
    nl_lr: float = 5e-3
    nl_l2: float = 1e-3
    min_pearson: float = 0.8
    min_dominance: float = 0.9
    margin: float = 2.0
    azuma_warmup: int = 60000
    azuma_steps: int = 2000
    azuma_trials: int = 200
    azuma_lr: float = 5e-3
    azuma_l2: float = 1e-3
    azuma_epsilon: float = None
    azuma_target_bound: float = 0.2
    # sweep
    parameter: str = "alpha"
    values: str = ""

    def seeds(self):
        try:
            return [int(s) for s in str(self.seed).split(",") if s.strip() != ""]
        except ValueError:
            raise ConfigError(f"bad seed list: {self.seed!r}") from None


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key: {name}")
    if raw is None or raw == "" or str(raw).lower() == "none":
        return None
    ftype = _FIELDS[name].type
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return str(raw)


def parse_config_file(path) -> dict:
    out = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = _coerce(key.strip(), value.strip())
    return out


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
        cfg.config = args.config
    for name in _FIELDS:
        supplied = getattr(args, name, None)
        if supplied is not None and name != "config":
            setattr(cfg, name, _coerce(name, supplied))
    return cfg


def write_manifest(out_dir, command, cfg: RunConfig):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# command = {command}",
        f"# cadence_version = {cadence.__version__}",
        f"# numpy_version = {np.__version__}",
        f"# scipy_version = {scipy.__version__}",
    ]
    for f in dataclasses.fields(RunConfig):
        if f.name == "config":
            continue
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'' if value is None else value}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_file(path, flag):
    if not path:
        raise ConfigError(f"missing required {flag}")
    if not Path(path).exists():
        raise ConfigError(f"{flag} file not found: {path}")
    return path


def _load_dataset(cfg: RunConfig):
    path = _require_file(cfg.interactions, "--interactions")
    log_ = load_interactions(path)
    ds = build_dataset(log_, cfg.min_interactions, cfg.holdout, cfg.seeds()[0])
    if cfg.categories:
        _require_file(cfg.categories, "--categories")
        ds = load_categories(cfg.categories, ds)
    return ds


def _prop_spec(cfg: RunConfig):
    return PropagationSpec(n_layers=cfg.layers, normalization=cfg.normalization)


def cmd_train(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _prop_spec(cfg)
    graph = build_bipartite_adjacency(ds, cfg.normalization)
    seed = cfg.seeds()[0]
    table = init_embeddings(ds.n_users, ds.n_items, cfg.dim, seed)
    tconf = TrainConfig(
        learning_rate=cfg.lr,
        l2_coeff=cfg.l2,
        batch_size=cfg.batch_size,
        max_epochs=cfg.epochs,
        patience=cfg.patience,
        optimizer=cfg.optimizer,
        seed=seed,
        eval_k=cfg.eval_k,
    )
    hook = recall_eval_hook(ds, cfg.eval_k)
    model, history = train(ds, graph, table, tconf, spec, hook)
    save_embeddings(out / "checkpoint.bin", model.table)
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "recall_at_k", "elapsed_seconds"])
        for row in history:
            writer.writerow(
                [
                    row["epoch"],
                    f"{row['loss']:.8f}",
                    f"{row['recall_at_k']:.8f}",
                    f"{row['elapsed_seconds']:.3f}",
                ]
            )
    write_manifest(out, "train", cfg)
    log.info(
        "trained %d epochs, best epoch %d (recall@%d=%.4f)",
        len(history), model.best_epoch, cfg.eval_k, model.best_metric,
    )
    return 0


def _load_checkpoint_for(cfg, ds):
    path = _require_file(cfg.checkpoint, "--checkpoint")
    table = load_embeddings(path)
    if table.n_users != ds.n_users or table.n_items != ds.n_items:
        raise DataError(
            f"checkpoint is {table.n_users}x{table.n_items} entities but the "
            f"dataset has {ds.n_users} users x {ds.n_items} items"
        )
    return table


def _rerank_lists(cfg, ds, table):
    spec = _prop_spec(cfg)
    graph = build_bipartite_adjacency(ds, cfg.normalization)
    prop = propagate(table, graph, spec)
    budget = cfg.edge_budget if cfg.edge_budget and cfg.edge_budget >= 0 else None
    refined, pruned = cigr.refine_item_embeddings(
        ds, prop.items(), cfg.decay_ratio, budget, cfg.lii
    )
    ccfg = csce.CsceConfig(
        k_global=cfg.kg,
        k_category=cfg.kc,
        alpha=cfg.alpha,
        list_length=cfg.list_length,
        rank_key=cfg.rank_key,
    )
    lists = csce.recommend(prop, refined, ds, pruned, ccfg)
    return lists, pruned


def cmd_rerank(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    table = _load_checkpoint_for(cfg, ds)
    if cfg.list_length > cfg.eval_k:
        log.info("list length %d exceeds eval cutoff %d", cfg.list_length, cfg.eval_k)
    if cfg.list_length > ds.n_items:
        log.warning(
            "list length %d exceeds catalog size %d; lists will saturate",
            cfg.list_length, ds.n_items,
        )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lists, pruned = _rerank_lists(cfg, ds, table)
    csce.write_recommendations_csv(out / "recommendations.csv", lists)
    cigr.export_edges_csv(pruned, out / "pruned_graph.csv")
    write_manifest(out, "rerank", cfg)
    log.info("wrote recommendations for %d users", len(lists))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    path = _require_file(cfg.recs, "--recs")
    lists = csce.read_recommendations_csv(path)
    if not lists:
        raise DataError(f"{path}: no recommendation rows")
    rec = metrics.recall_at_k(lists, ds.test_edges, cfg.eval_k)
    cov = metrics.coverage_at_k(
        lists, ds.categories, cfg.eval_k,
        n_categories=ds.n_categories, mode=cfg.coverage_mode,
    )
    fb = metrics.f_beta(cov, rec, cfg.beta_f)
    report = metrics.MetricsReport(
        recall_at_k=rec, coverage_at_k=cov, f_beta=fb, k=cfg.eval_k, beta=cfg.beta_f
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report_csv(out / "report.csv", cfg.name, report)
    write_manifest(out, "eval", cfg)
    print(f"{cfg.name},{cfg.eval_k},{rec:.6f},{cov:.6f},{cfg.beta_f:g},{fb:.6f}")
    return 0


def _normlab_config(cfg: RunConfig, seed, azuma=False) -> normlab.NormLabConfig:
    return normlab.NormLabConfig(
        n_users=cfg.nl_users,
        n_items=cfg.nl_items,
        zipf_exponent=cfg.nl_zipf,
        interactions_per_user=cfg.nl_per_user,
        dim=cfg.dim,
        init_scale=cfg.nl_scale,
        n_layers=cfg.nl_layers,
        learning_rate=cfg.azuma_lr if azuma else cfg.nl_lr,
        l2_coeff=cfg.azuma_l2 if azuma else cfg.nl_l2,
        steps=cfg.nl_steps,
        seed=seed,
        azuma_warmup_steps=cfg.azuma_warmup,
        azuma_steps=cfg.azuma_steps,
        azuma_epsilon=cfg.azuma_epsilon,
        azuma_target_bound=cfg.azuma_target_bound,
    )


def cmd_verify_norm(cfg: RunConfig) -> int:
    if cfg.azuma_l2 <= 0 or cfg.azuma_lr > 1.0 / (4.0 * cfg.azuma_l2):
        raise ConfigError(
            f"concentration bound requires lr <= 1/(4*l2); got lr={cfg.azuma_lr} "
            f"with l2={cfg.azuma_l2}"
        )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds()

    runs = []
    for seed in seeds:
        est = normlab.run_norm_dynamics(_normlab_config(cfg, seed))
        fit = normlab.norm_popularity_fit(est.final_item_norms, est.popularity)
        dom = normlab.dominance_probability(est.final_item_norms, est.popularity, cfg.margin)
        runs.append((seed, est, fit, dom))
        log.info(
            "seed %d: kappa_bar=%.4g beta_hat=%.4g r=%.3f dominance=%.3f",
            seed, est.kappa_bar, est.beta_hat, fit.pearson_r, dom,
        )

    seed0, est, fit, dom = runs[0]

    # steady-state identity on the estimated coefficients
    mu = normlab.fixed_point_predict(
        est.kappa_bar, est.beta_hat, est.l2_coeff, est.popularity, est.total
    )
    residual = normlab.fixed_point_residual(
        mu, est.kappa_bar, est.beta_hat, est.l2_coeff,
        est.popularity, est.total, est.learning_rate,
    )
    max_residual = float(np.max(np.abs(residual))) if len(np.atleast_1d(residual)) else 0.0

    azuma = normlab.azuma_empirical(
        _normlab_config(cfg, seed0, azuma=True),
        cfg.azuma_trials,
        n_jobs=max(1, cfg.threads),
    )

    with open(out / "norm_per_item.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", "n_i", "final_norm", "mu_predicted"])
        for item in range(len(est.popularity)):
            writer.writerow(
                [
                    item,
                    int(est.popularity[item]),
                    f"{est.final_item_norms[item]:.8f}",
                    f"{mu[item]:.8f}",
                ]
            )

    r_values = [f.pearson_r for _, _, f, _ in runs]
    r_spread = max(r_values) - min(r_values)
    with open(out / "norm_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kappa_bar", "beta_hat", "pearson_r", "slope", "dominance",
             "exceedance", "bound"]
        )
        writer.writerow(
            [
                f"{est.kappa_bar:.6g}",
                f"{est.beta_hat:.6g}",
                f"{fit.pearson_r:.4f}",
                f"{fit.slope:.6g}",
                f"{dom:.4f}",
                f"{azuma.exceedance_frequency:.4f}",
                f"{azuma.bound:.4f}",
            ]
        )
    write_manifest(out, "verify-norm", cfg)

    checks = {
        f"pearson_r {fit.pearson_r:.3f} >= {cfg.min_pearson}": fit.pearson_r >= cfg.min_pearson,
        f"dominance {dom:.3f} >= {cfg.min_dominance}": dom >= cfg.min_dominance,
        f"fixed-point residual {max_residual:.2e} <= 1e-12": max_residual <= 1e-12,
        f"exceedance {azuma.exceedance_frequency:.3f} <= bound {azuma.bound:.3f}":
            azuma.exceedance_frequency <= azuma.bound,
        f"bounded differences ({azuma.bounded_diff_violations} violations)":
            azuma.bounded_diff_violations == 0,
    }
    if len(runs) > 1:
        checks[f"pearson spread {r_spread:.3f} <= 0.2"] = r_spread <= 0.2
    ok = True
    for label, passed in checks.items():
        print(("PASS " if passed else "FAIL ") + label)
        ok = ok and passed
    if not ok:
        raise VerificationFailure("norm-dynamics verification failed")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    values = [v for v in (cfg.values or "").split(",") if v.strip() != ""]
    if not values:
        raise ConfigError("sweep needs --values (comma separated)")
    if cfg.parameter not in ("alpha", "k_global"):
        raise ConfigError("sweep --parameter must be 'alpha' or 'k_global'")
    ds = _load_dataset(cfg)
    table = _load_checkpoint_for(cfg, ds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for raw in values:
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"bad sweep value: {raw!r}") from None
        if cfg.parameter == "alpha":
            cfg.alpha = value
        else:
            cfg.kg = int(value)
        lists, _ = _rerank_lists(cfg, ds, table)
        rec = metrics.recall_at_k(lists, ds.test_edges, cfg.eval_k) if ds.test_edges else 0.0
        cov = metrics.coverage_at_k(
            lists, ds.categories, cfg.eval_k,
            n_categories=ds.n_categories, mode=cfg.coverage_mode,
        )
        fb = metrics.f_beta(cov, rec, cfg.beta_f)
        rows.append((value, rec, cov, fb))
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([cfg.parameter, "recall", "coverage", "f_beta"])
        for value, rec, cov, fb in rows:
            writer.writerow([f"{value:g}", f"{rec:.6f}", f"{cov:.6f}", f"{fb:.6f}"])
    write_manifest(out, "sweep", cfg)
    for value, rec, cov, fb in rows:
        print(f"{value:g},{rec:.6f},{cov:.6f},{fb:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadence",
        description="Diversity-aware graph recommender and norm-dynamics lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--interactions")
        p.add_argument("--categories")
        p.add_argument("--out")
        p.add_argument("--name")
        p.add_argument("--lr")
        p.add_argument("--l2")
        p.add_argument("--batch-size", dest="batch_size")
        p.add_argument("--dim")
        p.add_argument("--layers")
        p.add_argument("--lii")
        p.add_argument("--kg")
        p.add_argument("--kc")
        p.add_argument("--alpha")
        p.add_argument("--list-length", dest="list_length")
        p.add_argument("--decay-ratio", dest="decay_ratio")
        p.add_argument("--edge-budget", dest="edge_budget")
        p.add_argument("--beta-f", dest="beta_f")
        p.add_argument("--eval-k", dest="eval_k")
        p.add_argument("--seed")
        p.add_argument("--epochs")
        p.add_argument("--patience")
        p.add_argument("--threads")
        p.add_argument("--normalization")
        p.add_argument("--coverage-mode", dest="coverage_mode")
        p.add_argument("--optimizer")
        p.add_argument("--holdout")
        p.add_argument("--min-interactions", dest="min_interactions")
        p.add_argument("--rank-key", dest="rank_key")

    p = sub.add_parser("train", help="train the backbone and write a checkpoint")
    add_common(p)

    p = sub.add_parser("rerank", help="offline refinement + re-ranked lists")
    add_common(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("eval", help="score a recommendations file")
    add_common(p)
    p.add_argument("--recs")

    p = sub.add_parser("verify-norm", help="run the norm-dynamics verification lab")
    add_common(p)
    for flag in (
        "nl-users", "nl-items", "nl-per-user", "nl-zipf", "nl-steps", "nl-scale",
        "nl-layers", "nl-lr", "nl-l2", "min-pearson", "min-dominance", "margin",
        "azuma-warmup", "azuma-steps", "azuma-trials", "azuma-lr", "azuma-l2",
        "azuma-epsilon", "azuma-target-bound",
    ):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"))

    p = sub.add_parser("sweep", help="re-rank a fixed checkpoint over parameter values")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--parameter")
    p.add_argument("--values")

    return parser


_COMMANDS = {
    "train": cmd_train,
    "rerank": cmd_rerank,
    "eval": cmd_eval,
    "verify-norm": cmd_verify_norm,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        code = _COMMANDS[args.command](cfg)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
