"""Accuracy/diversity metrics and the exact signed-rank significance test."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class MetricsReport:
    recall_at_k: float
    coverage_at_k: float
    f_beta: float
    k: int
    beta: float
    per_user: dict = None


def recall_at_k(lists, test_edges, k) -> float:
    """Mean over users with test items of |top-k ∩ test(u)| / |test(u)|."""
    if k < 0:
        raise ValueError("k must be >= 0")
    test = {}
    for u, i in test_edges:
        test.setdefault(u, set()).add(i)
    if not test:
        raise ValueError("no user has test items")
    tops = {rec.user_index: rec.items[:k] for rec in lists}
    values = []
    for u, items in test.items():
        hits = len(items.intersection(tops.get(u, ())))
        values.append(hits / len(items))
    return sum(values) / len(values)


def coverage_at_k(lists, categories, k, n_categories=None, mode="category") -> float:
    """Diversity of the top-k lists.

    ``category`` mode (default): mean over users of the fraction of all
    categories present in the user's top-k. ``item`` mode: fraction of the
    catalog covered by the union of all users' top-k lists.
    """
    if mode not in ("category", "item"):
        raise ValueError("mode must be 'category' or 'item'")
    categories = np.asarray(categories, dtype=np.int64)
    if not lists:
        raise ValueError("no recommendation lists")
    if mode == "item":
        seen = set()
        for rec in lists:
            seen.update(rec.items[:k])
        return len(seen) / len(categories)
    if n_categories is None:
        n_categories = int(categories.max()) + 1 if len(categories) else 0
    if n_categories <= 0:
        raise ValueError("n_categories must be positive")
    values = []
    for rec in lists:
        cats = {int(categories[i]) for i in rec.items[:k]}
        values.append(len(cats) / n_categories)
    return sum(values) / len(values)


def f_beta(coverage, recall, beta) -> float:
    """Weighted harmonic mean (1+b^2) * c * r / (b^2 * r + c).

    Approaches recall as beta -> 0 and coverage as beta -> infinity; returns
    0 when both inputs are 0.
    """
    if coverage < 0 or recall < 0:
        raise ValueError("coverage and recall must be >= 0")
    denom = beta * beta * recall + coverage
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * coverage * recall / denom


def wilcoxon_signed_rank(pairs):
    """Exact one-sided Wilcoxon signed-rank test for n <= 20 pairs.

    Differences x - y equal to zero are dropped; |differences| are ranked
    with average ranks for ties. W is the sum of ranks of positive
    differences, and the one-sided p-value Pr[W' >= W] comes from exact
    enumeration of all 2^n sign assignments. Returns (W, p).
    """
    diffs = np.asarray([float(x) - float(y) for x, y in pairs])
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n == 0:
        raise ValueError("all differences are zero")
    if n > 20:
        raise ValueError("exact enumeration supports at most 20 nonzero pairs")
    ranks = rankdata(np.abs(diffs), method="average")
    w = float(ranks[diffs > 0].sum())
    masks = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    stats = masks @ ranks
    p = float(np.count_nonzero(stats >= w - 1e-9) / 2**n)
    return w, p


def write_report_csv(path, name, report: MetricsReport):
    """Append-style single-row report: dataset,k,recall,coverage,beta,f_beta."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "k", "recall", "coverage", "beta", "f_beta"])
        writer.writerow(
            [
                name,
                report.k,
                f"{report.recall_at_k:.6f}",
                f"{report.coverage_at_k:.6f}",
                f"{report.beta:g}",
                f"{report.f_beta:.6f}",
            ]
        )
