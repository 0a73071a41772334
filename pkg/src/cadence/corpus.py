"""Interaction-log ingestion, filtering, train/test splitting, and categories.

File formats (UTF-8, tab-separated, ``#`` comment lines skipped):

* interactions: ``user \\t item \\t timestamp`` (timestamp optional, default 0)
* categories:   ``item \\t category``
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from cadence.util import new_rng

log = logging.getLogger(__name__)


class DataError(ValueError):
    """An input file or derived dataset is malformed."""


@dataclass(frozen=True)
class InteractionLog:
    """Raw (user, item, timestamp) records in file order, ids not yet indexed."""

    records: list

    def __len__(self):
        return len(self.records)


def load_interactions(path) -> InteractionLog:
    """Parse an interactions file into an InteractionLog.

    Malformed lines (wrong field count, non-integer timestamp, empty id)
    raise DataError naming the offending line number.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                user, item, ts = parts[0], parts[1], "0"
            elif len(parts) == 3:
                user, item, ts = parts
            else:
                raise DataError(
                    f"{path}:{lineno}: expected 'user<TAB>item[<TAB>timestamp]',"
                    f" got {len(parts)} fields"
                )
            if not user or not item:
                raise DataError(f"{path}:{lineno}: empty user or item id")
            try:
                ts_int = int(ts)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: timestamp {ts!r} is not an integer"
                ) from None
            records.append((user, item, ts_int))
    return InteractionLog(records)


def dump_interactions(path, records):
    """Write (user, item, timestamp) triples in the interactions file format."""
    with open(path, "w", encoding="utf-8") as fh:
        for user, item, ts in records:
            fh.write(f"{user}\t{item}\t{ts}\n")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Indexed train/test interaction splits plus popularity and categories.

    Immutable after construction; safe to share across threads. ``popularity``
    counts train interactions only, so ``popularity.sum() == total_interactions``.
    """

    n_users: int
    n_items: int
    train_edges: list
    test_edges: list
    popularity: np.ndarray
    total_interactions: int
    n_edges: int
    categories: np.ndarray
    n_categories: int
    user_ids: list = None
    item_ids: list = None

    # derived indexes, filled in __post_init__
    train_u: np.ndarray = field(init=False, repr=False)
    train_i: np.ndarray = field(init=False, repr=False)
    user_ptr: np.ndarray = field(init=False, repr=False)
    user_items: np.ndarray = field(init=False, repr=False)
    user_pos: list = field(init=False, repr=False)
    _pair_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise DataError("dataset needs at least one user and one item")
        if self.user_ids is None:
            object.__setattr__(self, "user_ids", [str(u) for u in range(self.n_users)])
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", [str(i) for i in range(self.n_items)])
        tu = np.asarray([e[0] for e in self.train_edges], dtype=np.int64)
        ti = np.asarray([e[1] for e in self.train_edges], dtype=np.int64)
        if len(tu) and (tu.min() < 0 or tu.max() >= self.n_users):
            raise DataError("train edge user index out of range")
        if len(ti) and (ti.min() < 0 or ti.max() >= self.n_items):
            raise DataError("train edge item index out of range")
        for u, i in self.test_edges:
            if not (0 <= u < self.n_users and 0 <= i < self.n_items):
                raise DataError("test edge index out of range")
        if set(self.train_edges) & set(self.test_edges):
            raise DataError("train and test edges overlap")
        pop = np.bincount(ti, minlength=self.n_items).astype(np.int64)
        if not np.array_equal(pop, np.asarray(self.popularity, dtype=np.int64)):
            raise DataError("popularity inconsistent with train edges")
        if int(pop.sum()) != self.total_interactions:
            raise DataError("total_interactions != sum(popularity)")
        if self.n_edges != len(self.train_edges):
            raise DataError("n_edges != len(train_edges)")
        if len(self.categories) != self.n_items:
            raise DataError("categories must map every item")

        order = np.lexsort((ti, tu))
        tu, ti = tu[order], ti[order]
        ptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.add.at(ptr, tu + 1, 1)
        np.cumsum(ptr, out=ptr)
        pos_sets = [set() for _ in range(self.n_users)]
        for u, i in self.train_edges:
            pos_sets[u].add(int(i))
        object.__setattr__(self, "train_u", tu)
        object.__setattr__(self, "train_i", ti)
        object.__setattr__(self, "user_ptr", ptr)
        object.__setattr__(self, "user_items", ti.copy())
        object.__setattr__(self, "user_pos", pos_sets)
        object.__setattr__(self, "_pair_keys", np.sort(tu * self.n_items + ti))

    def items_of(self, user):
        """Train items of ``user``, ascending."""
        return self.user_items[self.user_ptr[user] : self.user_ptr[user + 1]]

    def has_edge(self, user, item):
        key = user * self.n_items + item
        k = np.searchsorted(self._pair_keys, key)
        return k < len(self._pair_keys) and self._pair_keys[k] == key

    def test_sets(self):
        """Per-user test item sets (users with no test items omitted)."""
        out = {}
        for u, i in self.test_edges:
            out.setdefault(u, set()).add(i)
        return out


def build_dataset(log: InteractionLog, min_interactions, holdout_ratio, seed) -> Dataset:
    """Filter, re-index, deduplicate, and split an interaction log.

    Users/items with fewer than ``min_interactions`` raw occurrences are
    dropped iteratively until stable; survivors are densely re-indexed in
    sorted-id order. Duplicate (user, item) pairs collapse to one edge
    keeping the latest timestamp. Per user, ``ceil(holdout_ratio * deg)``
    edges move to the test split, latest timestamps first, ties broken by a
    seeded shuffle. Same seed, same split, byte for byte.
    """
    if not (0 <= holdout_ratio < 1):
        raise ValueError("holdout_ratio must be in [0, 1)")
    if min_interactions < 0:
        raise ValueError("min_interactions must be >= 0")

    records = list(log.records)
    while True:
        ucount, icount = {}, {}
        for u, i, _ in records:
            ucount[u] = ucount.get(u, 0) + 1
            icount[i] = icount.get(i, 0) + 1
        kept = [
            r
            for r in records
            if ucount[r[0]] >= min_interactions and icount[r[1]] >= min_interactions
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records:
        raise DataError("all interactions filtered out by min_interactions")

    users = sorted({r[0] for r in records})
    items = sorted({r[1] for r in records})
    uidx = {u: k for k, u in enumerate(users)}
    iidx = {i: k for k, i in enumerate(items)}

    latest = {}
    for u, i, ts in records:
        key = (uidx[u], iidx[i])
        if key not in latest or ts > latest[key]:
            latest[key] = ts

    by_user = [[] for _ in range(len(users))]
    for (u, i), ts in latest.items():
        by_user[u].append((i, ts))

    rng = new_rng(seed)
    train_edges, test_edges = [], []
    for u in range(len(users)):
        entries = sorted(by_user[u])  # ascending item index, deterministic
        keys = rng.random(len(entries))
        order = sorted(range(len(entries)), key=lambda k: (-entries[k][1], keys[k]))
        n_test = math.ceil(holdout_ratio * len(entries))
        for rank, k in enumerate(order):
            i, _ = entries[k]
            (test_edges if rank < n_test else train_edges).append((u, i))

    train_edges.sort()
    test_edges.sort()
    pop = np.zeros(len(items), dtype=np.int64)
    for _, i in train_edges:
        pop[i] += 1
    return Dataset(
        n_users=len(users),
        n_items=len(items),
        train_edges=train_edges,
        test_edges=test_edges,
        popularity=pop,
        total_interactions=int(pop.sum()),
        n_edges=len(train_edges),
        categories=np.zeros(len(items), dtype=np.int64),
        n_categories=1,
        user_ids=users,
        item_ids=items,
    )


def load_categories(path, dataset: Dataset) -> Dataset:
    """Attach category metadata; returns an updated Dataset.

    Items absent from the file land in a reserved "unknown" category.
    Records naming items that are not in the dataset are ignored (a warning
    reports how many). ``n_categories`` counts distinct observed categories
    plus the "unknown" bucket when it is non-empty.
    """
    id_to_item = {s: k for k, s in enumerate(dataset.item_ids)}
    raw = {}
    ignored = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'item<TAB>category'")
            item, cat = parts
            if item not in id_to_item:
                ignored += 1
                continue
            raw[id_to_item[item]] = cat
    if ignored:
        log.warning("%d category records referenced unknown items; ignored", ignored)

    names = sorted(set(raw.values()))
    cat_idx = {c: k for k, c in enumerate(names)}
    categories = np.full(dataset.n_items, -1, dtype=np.int64)
    for item, cat in raw.items():
        categories[item] = cat_idx[cat]
    unknown_used = bool((categories < 0).any())
    if unknown_used:
        categories[categories < 0] = len(names)
    return replace(
        dataset,
        categories=categories,
        n_categories=len(names) + (1 if unknown_used else 0),
    )
