"""Two-stage candidate selection and counterfactual exposure re-ranking.

Runs once after training. Stage 1 picks the top ``k_global`` UACR neighbors
of the user's history; stage 2 adds up to ``k_category`` neighbors per
category present in that history. Candidate scores pass through the logistic
function and are scaled by ``alpha >= 1``, so raising alpha can only promote
candidates: with alpha = 1 the ranking is exactly the base ranking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cadence.util import sigmoid

RANK_KEYS = ("max", "sum", "mean")


@dataclass(frozen=True)
class CsceConfig:
    k_global: int = 4
    k_category: int = 1
    alpha: float = 1.15
    list_length: int = 100
    rank_key: str = "max"

    def __post_init__(self):
        if self.k_global < 0 or self.k_category < 0:
            raise ValueError("selection counts must be >= 0")
        if self.list_length < 1:
            raise ValueError("list_length must be >= 1")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if self.rank_key not in RANK_KEYS:
            raise ValueError(f"rank_key must be one of {RANK_KEYS}")


@dataclass(frozen=True, eq=False)
class RecommendationList:
    """Top-N items for one user with non-increasing adjusted scores."""

    user_index: int
    items: list
    scores: list


def _neighbor_index(graph):
    """item -> (neighbor array, weight array), cached on the graph object."""
    cached = getattr(graph, "_nbr_index", None)
    if cached is not None:
        return cached
    src = np.concatenate([graph.item_a, graph.item_b])
    dst = np.concatenate([graph.item_b, graph.item_a])
    w = np.concatenate([graph.weights, graph.weights])
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    ptr = np.zeros(graph.n_items + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    np.cumsum(ptr, out=ptr)
    index = (ptr, dst, w)
    object.__setattr__(graph, "_nbr_index", index)
    return index


def _aggregate_keys(hist, index, rank_key, exclude):
    """Candidate -> ranking key over UACR weights incident to the history."""
    ptr, dst, w = index
    keys = {}
    counts = {}
    for item in hist:
        lo, hi = ptr[item], ptr[item + 1]
        for nbr, weight in zip(dst[lo:hi].tolist(), w[lo:hi].tolist()):
            if nbr in exclude:
                continue
            if rank_key == "max":
                keys[nbr] = max(keys.get(nbr, -np.inf), weight)
            else:
                keys[nbr] = keys.get(nbr, 0.0) + weight
                counts[nbr] = counts.get(nbr, 0) + 1
    if rank_key == "mean":
        keys = {n: v / counts[n] for n, v in keys.items()}
    return keys


def user_candidates(user, dataset, pruned_graph, config: CsceConfig):
    """Candidate item set for one user from the pruned UACR graph.

    Stage 1 (global): distinct neighbors of the user's train items ranked by
    aggregated incident UACR weight (``rank_key``), top ``k_global`` taken.
    Stage 2 (category): per category present among the user's train items,
    the best ``k_category`` not-yet-selected neighbors of that category.
    The user's own train items are never candidates.
    """
    hist = dataset.items_of(user).tolist()
    if not hist:
        return set()
    index = _neighbor_index(pruned_graph)
    exclude = set(hist)
    keys = _aggregate_keys(hist, index, config.rank_key, exclude)
    ranked = sorted(keys, key=lambda n: (-keys[n], n))
    chosen = set(ranked[: config.k_global])

    if config.k_category > 0:
        cats = np.asarray(dataset.categories)
        for cat in sorted({int(cats[i]) for i in hist}):
            pool = [n for n in ranked if int(cats[n]) == cat and n not in chosen]
            chosen.update(pool[: config.k_category])
    return chosen


def counterfactual_exposure(base_scores, candidates, alpha):
    """Logistic-squash scores and scale the candidate entries by alpha."""
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    adjusted = sigmoid(np.asarray(base_scores, dtype=np.float64))
    if candidates:
        idx = np.fromiter(candidates, dtype=np.int64)
        adjusted[idx] = alpha * adjusted[idx]
    return adjusted


def recommend(model_finals, refined_item_embeddings, dataset, pruned_graph,
              config: CsceConfig):
    """Re-ranked top-N lists for every user (single offline pass).

    Per user: base scores are inner products of the user final embedding with
    the refined item embeddings; candidate scores get the alpha boost; train
    items are excluded; ties break by ascending item index. Users are
    processed independently, so output does not depend on processing order.
    """
    refined = np.asarray(refined_item_embeddings, dtype=np.float64)
    out = []
    all_items = np.arange(dataset.n_items)
    for user in range(dataset.n_users):
        base = model_finals.user_final(user) @ refined.T
        cands = user_candidates(user, dataset, pruned_graph, config)
        adjusted = counterfactual_exposure(base, cands, config.alpha)
        hist = dataset.items_of(user)
        eligible = np.setdiff1d(all_items, hist, assume_unique=True)
        order = eligible[np.lexsort((eligible, -adjusted[eligible]))]
        top = order[: config.list_length]
        out.append(
            RecommendationList(
                user_index=user,
                items=top.tolist(),
                scores=adjusted[top].tolist(),
            )
        )
    return out


def write_recommendations_csv(path, lists):
    """Write ``user,rank,item,score`` rows (rank is 1-based)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "rank", "item", "score"])
        for rec in lists:
            for rank, (item, s) in enumerate(zip(rec.items, rec.scores), 1):
                writer.writerow([rec.user_index, rank, item, repr(float(s))])


def read_recommendations_csv(path):
    """Inverse of write_recommendations_csv."""
    per_user = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user", "rank", "item", "score"]:
            raise ValueError(f"{path}: unexpected recommendations header {header}")
        for row in reader:
            user, rank, item, s = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            per_user.setdefault(user, []).append((rank, item, s))
    lists = []
    for user in sorted(per_user):
        rows = sorted(per_user[user])
        lists.append(
            RecommendationList(
                user_index=user,
                items=[r[1] for r in rows],
                scores=[r[2] for r in rows],
            )
        )
    return lists
