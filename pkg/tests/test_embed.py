import numpy as np
import pytest

from cadence.corpus import DataError
from cadence.embed import (
    EmbeddingTable,
    column_slice_M,
    init_embeddings,
    load_embeddings,
    propagate,
    row_slice_M,
    save_embeddings,
    score,
)
from cadence.spgraph import PropagationSpec, build_bipartite_adjacency
from conftest import make_dataset, random_dataset


def two_node_swap():
    """1 user, 1 item, 1 edge: random-walk adjacency is the 2x2 swap."""
    ds = make_dataset([(0, 0)], 1, 1)
    return build_bipartite_adjacency(ds, "random_walk")


def dense_M(A, spec):
    """Oracle: densify M = sum_k alpha_k A^k with explicit matrix powers."""
    dense = A.toarray()
    M = np.zeros_like(dense)
    for k, w in enumerate(spec.layer_weights):
        M += w * np.linalg.matrix_power(dense, k)
    return M


class TestInit:
    def test_deterministic(self):
        a = init_embeddings(4, 3, 5, seed=11)
        b = init_embeddings(4, 3, 5, seed=11)
        np.testing.assert_array_equal(a.user0, b.user0)
        np.testing.assert_array_equal(a.item0, b.item0)

    def test_sample_std_near_scale(self):
        table = init_embeddings(2000, 1125, 32, seed=0, scale=0.1)  # 1e5 entries
        std = np.concatenate([table.user0.ravel(), table.item0.ravel()]).std()
        assert 0.09 <= std <= 0.11

    def test_minimal_shapes(self):
        table = init_embeddings(1, 1, 1, seed=0)
        assert table.user0.shape == (1, 1) and table.item0.shape == (1, 1)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            init_embeddings(1, 1, 2, seed=0, scale=0.0)


class TestPropagate:
    def test_zero_layers_is_identity(self):
        A = two_node_swap()
        table = init_embeddings(1, 1, 4, seed=1)
        prop = propagate(table, A, PropagationSpec(0, None, "random_walk"))
        np.testing.assert_array_equal(prop.final, table.concat())

    def test_two_node_mean(self):
        A = two_node_swap()
        table = init_embeddings(1, 1, 4, seed=2)
        spec = PropagationSpec(1, (0.5, 0.5), "random_walk")
        prop = propagate(table, A, spec)
        np.testing.assert_allclose(
            prop.user_final(0), (table.user0[0] + table.item0[0]) / 2, atol=1e-15
        )

    def test_weight_concentration_on_layer0(self):
        ds = random_dataset(np.random.default_rng(3), 4, 4)
        A = build_bipartite_adjacency(ds, "symmetric")
        table = init_embeddings(4, 4, 3, seed=3)
        spec = PropagationSpec(3, (1.0, 0.0, 0.0, 0.0))
        prop = propagate(table, A, spec)
        np.testing.assert_array_equal(prop.final, table.concat())

    def test_linearity(self, rng):
        ds = random_dataset(rng, 5, 4)
        A = build_bipartite_adjacency(ds, "random_walk")
        spec = PropagationSpec(2, None, "random_walk")
        x = init_embeddings(5, 4, 3, seed=4)
        y = init_embeddings(5, 4, 3, seed=5)
        a, b = 1.7, -0.4
        mixed = EmbeddingTable(
            a * x.user0 + b * y.user0, a * x.item0 + b * y.item0, 3
        )
        lhs = propagate(mixed, A, spec).final
        rhs = a * propagate(x, A, spec).final + b * propagate(y, A, spec).final
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_isolated_node_keeps_alpha0_embedding(self):
        ds = make_dataset([(0, 0)], 1, 2)  # item 1 isolated
        A = build_bipartite_adjacency(ds, "random_walk")
        table = init_embeddings(1, 2, 4, seed=6)
        spec = PropagationSpec(2, None, "random_walk")
        prop = propagate(table, A, spec)
        np.testing.assert_allclose(
            prop.item_final(1), spec.layer_weights[0] * table.item0[1], atol=1e-15
        )

    def test_per_layer_invariants(self, rng):
        ds = random_dataset(rng, 4, 5)
        A = build_bipartite_adjacency(ds, "symmetric")
        table = init_embeddings(4, 5, 3, seed=7)
        spec = PropagationSpec(2)
        prop = propagate(table, A, spec)
        np.testing.assert_array_equal(prop.per_layer[0], table.concat())
        mix = sum(w * l for w, l in zip(spec.layer_weights, prop.per_layer))
        np.testing.assert_allclose(prop.final, mix, atol=1e-12)


class TestScore:
    def test_zero_user(self):
        table = EmbeddingTable(np.zeros((1, 2)), np.ones((1, 2)), 2)
        A = two_node_swap()
        prop = propagate(table, A, PropagationSpec(0, None, "random_walk"))
        assert score(prop, 0, 0) == 0.0

    def test_hand_dot_product(self):
        table = EmbeddingTable(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), 2)
        A = two_node_swap()
        prop = propagate(table, A, PropagationSpec(0, None, "random_walk"))
        assert score(prop, 0, 0) == 11.0

    def test_symmetric_in_the_two_vectors(self):
        a, b = np.array([[0.3, -1.2]]), np.array([[2.0, 0.5]])
        A = two_node_swap()
        s1 = score(propagate(EmbeddingTable(a, b, 2), A, PropagationSpec(0)), 0, 0)
        s2 = score(propagate(EmbeddingTable(b, a, 2), A, PropagationSpec(0)), 0, 0)
        assert s1 == s2

    def test_index_errors(self):
        table = init_embeddings(2, 2, 2, seed=1)
        ds = make_dataset([(0, 0), (1, 1)], 2, 2)
        A = build_bipartite_adjacency(ds, "random_walk")
        prop = propagate(table, A, PropagationSpec(1, None, "random_walk"))
        with pytest.raises(IndexError):
            score(prop, 2, 0)
        with pytest.raises(IndexError):
            score(prop, 0, 2)


class TestOperatorSlices:
    def test_zero_layers_unit_vector(self):
        A = two_node_swap()
        col = column_slice_M(A, PropagationSpec(0, None, "random_walk"), 1)
        np.testing.assert_array_equal(col, [0.0, 1.0])

    def test_swap_graph_column(self):
        A = two_node_swap()
        col = column_slice_M(A, PropagationSpec(1, (0.5, 0.5), "random_walk"), 0)
        np.testing.assert_allclose(col, [0.5, 0.5])

    def test_random_walk_rows_of_M_sum_to_one(self, rng):
        # full-support graph: M is a convex combination of stochastic matrices
        ds = make_dataset([(0, 0), (0, 1), (1, 0), (1, 1)], 2, 2)
        A = build_bipartite_adjacency(ds, "random_walk")
        spec = PropagationSpec(2, None, "random_walk")
        cols = np.column_stack([column_slice_M(A, spec, y) for y in range(4)])
        np.testing.assert_allclose(cols.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_densified_operator(self, rng):
        for trial in range(10):
            ds = random_dataset(rng, int(rng.integers(2, 6)), int(rng.integers(2, 6)))
            norm = "random_walk" if trial % 2 else "symmetric"
            A = build_bipartite_adjacency(ds, norm)
            spec = PropagationSpec(int(rng.integers(0, 4)), None, norm)
            M = dense_M(A, spec)
            n = A.n_rows
            for y in range(n):
                np.testing.assert_allclose(
                    column_slice_M(A, spec, y), M[:, y], atol=1e-12
                )
                np.testing.assert_allclose(
                    row_slice_M(A, spec, y), M[y, :], atol=1e-12
                )

    def test_out_of_range(self):
        A = two_node_swap()
        with pytest.raises(IndexError):
            column_slice_M(A, PropagationSpec(1, None, "random_walk"), 2)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        table = init_embeddings(3, 4, 6, seed=8)
        p = tmp_path / "emb.bin"
        save_embeddings(p, table)
        loaded = load_embeddings(p)
        np.testing.assert_array_equal(loaded.user0, table.user0)
        np.testing.assert_array_equal(loaded.item0, table.item0)
        save_embeddings(tmp_path / "again.bin", loaded)
        assert (tmp_path / "again.bin").read_bytes() == p.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTMAGIC\n1 1 1\n" + b"\x00" * 16)
        with pytest.raises(DataError, match="CADEMB1"):
            load_embeddings(p)

    def test_truncated_payload(self, tmp_path):
        table = init_embeddings(2, 2, 3, seed=9)
        p = tmp_path / "emb.bin"
        save_embeddings(p, table)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(DataError, match="payload"):
            load_embeddings(p)
