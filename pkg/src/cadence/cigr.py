"""Co-interaction item graph: UACR scoring, geometric pruning, aggregation.

The raw graph connects items pairs that share at least one user; weights
start as co-occurrence counts. UACR scoring replaces counts with a
popularity-deconfounded relation score (default: lift). Geometric truncation
keeps, per item, only edges above a geometrically decaying envelope and then
enforces a global edge budget. A short row-stochastic convolution over the
pruned graph refines item embeddings for re-ranking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class WeightedItemGraph:
    """Undirected item-item edges with canonical (a < b) ordering.

    ``edges_scored`` records how many edges the UACR pass actually touched
    (it must equal the raw co-occurrence edge count; there is never a dense
    item x item pass).
    """

    n_items: int
    item_a: np.ndarray
    item_b: np.ndarray
    weights: np.ndarray
    pruned: bool = False
    edges_scored: int = None

    def __post_init__(self):
        a = np.asarray(self.item_a, dtype=np.int64)
        b = np.asarray(self.item_b, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "item_a", a)
        object.__setattr__(self, "item_b", b)
        object.__setattr__(self, "weights", w)
        if not (len(a) == len(b) == len(w)):
            raise ValueError("edge arrays must have equal length")
        if len(a):
            if a.min() < 0 or b.max() >= self.n_items:
                raise ValueError("edge endpoint out of range")
            if np.any(a >= b):
                raise ValueError("edges must satisfy item_a < item_b")
            if len(np.unique(a * self.n_items + b)) != len(a):
                raise ValueError("duplicate edges")
        if not np.all(np.isfinite(w)) or (len(w) and w.min() < 0):
            raise ValueError("weights must be finite and >= 0")

    @property
    def n_edges(self):
        return len(self.item_a)

    def edge_set(self):
        return set(zip(self.item_a.tolist(), self.item_b.tolist()))


def build_copurchase(dataset) -> WeightedItemGraph:
    """Item pairs co-interacted by at least one user; weight = user count.

    Enumerates pairs per user, so the cost is O(sum_u deg(u)^2); no dense
    item x item work.
    """
    n_items = dataset.n_items
    keys = []
    for u in range(dataset.n_users):
        its = dataset.items_of(u)
        if len(its) < 2:
            continue
        ia, ib = np.triu_indices(len(its), k=1)
        keys.append(its[ia].astype(np.int64) * n_items + its[ib])
    if not keys:
        return WeightedItemGraph(
            n_items, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
        )
    all_keys = np.concatenate(keys)
    uniq, counts = np.unique(all_keys, return_counts=True)
    return WeightedItemGraph(
        n_items=n_items,
        item_a=uniq // n_items,
        item_b=uniq % n_items,
        weights=counts.astype(np.float64),
    )


def lift_score(co_count, users_a, users_b, n_users):
    """Deconfounded relation score: observed / expected co-occurrence."""
    return co_count * n_users / (users_a * users_b)


def uacr_scores(graph: WeightedItemGraph, dataset, scorer=lift_score) -> WeightedItemGraph:
    """Re-weight co-occurrence edges with a UACR scorer.

    The scorer is an interchangeable strategy taking vectorized
    (co_count, users_a, users_b, n_users); the default is the lift score.
    Exactly the existing edges are touched; ``edges_scored`` records that.
    """
    pop = np.asarray(dataset.popularity, dtype=np.float64)
    ua = pop[graph.item_a]
    ub = pop[graph.item_b]
    if graph.n_edges and min(ua.min(), ub.min()) <= 0:
        raise ValueError("co-occurrence edge at a zero-popularity item")
    w = np.asarray(
        scorer(graph.weights, ua, ub, float(dataset.n_users)), dtype=np.float64
    )
    return replace(graph, weights=w, edges_scored=graph.n_edges)


def geometric_truncate(graph: WeightedItemGraph, decay_ratio, budget) -> WeightedItemGraph:
    """Prune against per-item geometric envelopes, then a global budget.

    Per item, incident edges sorted by descending weight are kept while
    weight_k >= weight_1 * decay_ratio**(k-1) holds, stopping at the first
    failure, so each item keeps a top-weight prefix of its edge list. An
    edge survives only if both endpoints keep it. If more than ``budget``
    edges survive, the globally heaviest ``budget`` win (ties by canonical
    edge order). ``budget=None`` means unlimited.
    """
    if not (0 < decay_ratio <= 1):
        raise ValueError("decay_ratio must be in (0, 1]")
    if budget is not None and budget < 0:
        raise ValueError("budget must be >= 0 or None")
    empty = WeightedItemGraph(
        graph.n_items,
        np.empty(0, np.int64),
        np.empty(0, np.int64),
        np.empty(0),
        pruned=True,
        edges_scored=graph.edges_scored,
    )
    if graph.n_edges == 0 or budget == 0:
        return empty

    incident = [[] for _ in range(graph.n_items)]
    for eid in range(graph.n_edges):
        incident[graph.item_a[eid]].append(eid)
        incident[graph.item_b[eid]].append(eid)
    w = graph.weights
    a, b = graph.item_a, graph.item_b
    votes = np.zeros(graph.n_edges, dtype=np.int8)
    for node in range(graph.n_items):
        eids = incident[node]
        if not eids:
            continue
        eids.sort(key=lambda e: (-w[e], a[e], b[e]))
        env = w[eids[0]]
        for k, e in enumerate(eids):
            if k > 0:
                env *= decay_ratio
            if w[e] < env:
                break
            votes[e] += 1

    kept = np.flatnonzero(votes == 2)  # kept at both endpoints
    if budget is not None and len(kept) > budget:
        order = sorted(kept.tolist(), key=lambda e: (-w[e], a[e], b[e]))
        kept = np.asarray(sorted(order[:budget]), dtype=np.int64)
    return replace(
        graph,
        item_a=a[kept],
        item_b=b[kept],
        weights=w[kept],
        pruned=True,
    )


def item_item_aggregate(item_embeddings, graph: WeightedItemGraph, n_layers_ii) -> np.ndarray:
    """Refine item embeddings by averaging over the weighted item graph.

    One hop applies S = (I + W_rownorm) / 2, i.e. each item averages itself
    with the weight-normalized mix of its neighbors; the output is the mean
    of layers 0..n_layers_ii. Isolated items pass through unchanged. Cost is
    O(n_layers_ii * n_edges * d) plus the O(n_items * d) self terms.
    """
    X = np.asarray(item_embeddings, dtype=np.float64)
    if n_layers_ii < 0:
        raise ValueError("n_layers_ii must be >= 0")
    if X.shape[0] != graph.n_items:
        raise ValueError("embedding row count must equal n_items")
    if n_layers_ii == 0 or graph.n_edges == 0:
        return X.copy()

    rows = np.concatenate([graph.item_a, graph.item_b])
    cols = np.concatenate([graph.item_b, graph.item_a])
    vals = np.concatenate([graph.weights, graph.weights])
    W = sp.csr_matrix((vals, (rows, cols)), shape=(graph.n_items, graph.n_items))
    deg = np.asarray(W.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1e-300), 0.0)
    Wn = sp.diags(inv) @ W
    isolated = deg == 0

    h = X
    acc = X.copy()
    for _ in range(n_layers_ii):
        h = 0.5 * (h + Wn @ h)
        acc += h
    out = acc / (n_layers_ii + 1)
    out[isolated] = X[isolated]  # pass isolated items through exactly
    return out


def refine_item_embeddings(dataset, item_finals, decay_ratio, budget, n_layers_ii,
                           scorer=lift_score):
    """Full offline refinement pass; returns (refined embeddings, pruned graph)."""
    raw = build_copurchase(dataset)
    scored = uacr_scores(raw, dataset, scorer=scorer)
    pruned = geometric_truncate(scored, decay_ratio, budget)
    refined = item_item_aggregate(item_finals, pruned, n_layers_ii)
    return refined, pruned


def export_edges_csv(graph: WeightedItemGraph, path):
    """Write edges as ``item_a,item_b,uacr`` rows for inspection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_a", "item_b", "uacr"])
        for a, b, w in zip(graph.item_a, graph.item_b, graph.weights):
            writer.writerow([int(a), int(b), repr(float(w))])
