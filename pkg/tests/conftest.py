"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest

from cadence.corpus import Dataset
from cadence.embed import EmbeddingTable, propagate
from cadence.train import bpr_loss
from cadence.util import new_rng


def make_dataset(train_edges, n_users, n_items, test_edges=(), categories=None,
                 n_categories=None):
    """Build a Dataset directly from index edges (no file round trip)."""
    train_edges = sorted(set(train_edges))
    pop = np.zeros(n_items, dtype=np.int64)
    for _, i in train_edges:
        pop[i] += 1
    if categories is None:
        categories = np.zeros(n_items, dtype=np.int64)
        n_categories = 1
    elif n_categories is None:
        n_categories = int(np.max(categories)) + 1
    return Dataset(
        n_users=n_users,
        n_items=n_items,
        train_edges=train_edges,
        test_edges=sorted(set(test_edges)),
        popularity=pop,
        total_interactions=int(pop.sum()),
        n_edges=len(train_edges),
        categories=np.asarray(categories, dtype=np.int64),
        n_categories=n_categories,
    )


def random_dataset(rng, n_users, n_items, density=0.5):
    """Random bipartite dataset where every user has at least one edge and
    at least one non-edge (so negative sampling is possible)."""
    edges = set()
    for u in range(n_users):
        deg = int(rng.integers(1, n_items))  # < n_items, so a negative exists
        items = rng.choice(n_items, size=deg, replace=False)
        for i in items:
            edges.add((u, int(i)))
        if rng.random() > density and len(items) > 1:
            edges.discard((u, int(items[0])))
            if not any(e[0] == u for e in edges):
                edges.add((u, int(items[0])))
    return make_dataset(edges, n_users, n_items)


def fd_layer0_gradient(dataset, A, spec, table, triplet, h=1e-5):
    """Central finite differences of the triplet loss over all layer-0 rows.

    Independent oracle: differentiates the actual forward pass
    (propagate -> inner products -> softplus) entry by entry.
    """
    nu, d = dataset.n_users, table.dim
    flat = table.concat().ravel()

    def loss_of(vec):
        tab = EmbeddingTable(
            vec[: nu * d].reshape(-1, d).copy(),
            vec[nu * d:].reshape(-1, d).copy(),
            d,
        )
        prop = propagate(tab, A, spec)
        return bpr_loss(
            prop.final[triplet.u],
            prop.final[nu + triplet.i],
            prop.final[nu + triplet.j],
        )

    grad = np.zeros_like(flat)
    for k in range(len(flat)):
        up = flat.copy()
        dn = flat.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (loss_of(up) - loss_of(dn)) / (2 * h)
    return grad.reshape(-1, d)


@pytest.fixture
def rng():
    return new_rng(12345)
