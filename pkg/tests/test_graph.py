import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iflg.graph import (DataError, Graph, SbmSpec, load_dataset, make_split, normalize_adjacency,
                        save_dataset, sbm_generate)
from iflg.numeric import SparseMatrix

from conftest import graph_from_edges


def write_manifest(tmp_path, edges="0\t1\n1\t2\n", features="1,0\n0,1\n1,1\n", labels="0\n1\n0\n",
                   num_nodes=3, feature_dim=2):
    (tmp_path / "e.tsv").write_text(edges)
    (tmp_path / "x.csv").write_text(features)
    if labels is not None:
        (tmp_path / "y.txt").write_text(labels)
    m = {"edges": "e.tsv", "features": "x.csv", "labels": "y.txt" if labels is not None else None,
         "num_nodes": num_nodes, "feature_dim": feature_dim}
    path = tmp_path / "g.json"
    path.write_text(json.dumps(m))
    return path


class TestLoad:
    def test_path_graph(self, tmp_path):
        g = load_dataset(write_manifest(tmp_path))
        assert g.num_nodes == 3 and g.num_edges == 2
        assert g.features.shape == (3, 2)
        assert g.num_classes == 2

    def test_both_directions_deduplicated(self, tmp_path):
        g = load_dataset(write_manifest(tmp_path, edges="0\t1\n1\t0\n0\t1\n"))
        assert g.num_edges == 1
        assert g.adjacency.nnz == 2
        assert set(g.adjacency.data.tolist()) == {1.0}

    def test_self_loops_dropped(self, tmp_path):
        g = load_dataset(write_manifest(tmp_path, edges="0\t0\n0\t1\n"))
        assert g.num_edges == 1

    def test_unlabeled(self, tmp_path):
        g = load_dataset(write_manifest(tmp_path, labels=None))
        assert g.labels is None

    def test_row_normalize_flag(self, tmp_path):
        g = load_dataset(write_manifest(tmp_path, features="2,2\n0,3\n1,-3\n"), row_normalize_features=True)
        np.testing.assert_allclose(np.abs(g.features).sum(axis=1), 1.0)

    @pytest.mark.parametrize("kwargs, fragment", [
        ({"edges": "0\t5\n"}, "out of range"),
        ({"edges": "0 1\n"}, "src<TAB>dst"),
        ({"features": "1,0\n0\n1,1\n"}, "expected 2 values"),
        ({"features": "1,0\n0,nan\n1,1\n"}, "non-finite"),
        ({"features": "1,0\n0,1\n"}, "2 feature rows"),
        ({"labels": "0\n1\n"}, "2 labels"),
        ({"labels": "0\n-1\n0\n"}, "negative"),
    ])
    def test_hard_errors(self, tmp_path, kwargs, fragment):
        with pytest.raises(DataError, match=fragment):
            load_dataset(write_manifest(tmp_path, **kwargs))

    def test_missing_file(self, tmp_path):
        path = write_manifest(tmp_path)
        (tmp_path / "x.csv").unlink()
        with pytest.raises(DataError, match="not found"):
            load_dataset(path)

    def test_error_names_line(self, tmp_path):
        with pytest.raises(DataError, match=r"e\.tsv:2:"):
            load_dataset(write_manifest(tmp_path, edges="0\t1\n0\t9\n"))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_round_trip(tmp_path_factory, n, f, seed, labeled):
    r = np.random.default_rng(seed)
    edges = r.integers(0, n, size=(r.integers(0, 3 * n + 1), 2))
    labels = r.integers(0, 3, n) if labeled else None
    g = graph_from_edges(edges, n, r.standard_normal((n, f)) * 1e3, labels, 3 if labeled else None)
    d = tmp_path_factory.mktemp("rt")
    h = load_dataset(save_dataset(g, d))
    again = load_dataset(save_dataset(h, d, "again"))
    for a in (h, again):
        assert a.num_nodes == g.num_nodes
        np.testing.assert_array_equal(a.edges(), g.edges())
        np.testing.assert_array_equal(a.features, g.features)
        if labeled:
            np.testing.assert_array_equal(a.labels, g.labels)
        else:
            assert a.labels is None


class TestGraphInvariants:
    def test_rejects_asymmetric(self):
        a = SparseMatrix.from_dense(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(DataError):
            Graph(np.eye(2), a)

    def test_rejects_stored_self_loop(self):
        with pytest.raises(DataError):
            Graph(np.eye(2), SparseMatrix.identity(2))

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataError):
            graph_from_edges([], 3, labels=[0, 1, 2], num_classes=2)

    def test_immutable_features(self):
        g = graph_from_edges([[0, 1]], 2)
        with pytest.raises(ValueError):
            g.features[0, 0] = 5.0


class TestSbm:
    def test_cliques(self):
        g = sbm_generate(SbmSpec((3, 3), 1.0, 0.0, 4, seed=1))
        assert g.num_edges == 6
        assert all(g.labels[s] == g.labels[d] for s, d in g.edges())

    def test_edgeless(self):
        assert sbm_generate(SbmSpec((5, 5), 0.0, 0.0, 4)).num_edges == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_edge_counts_binomial(self, seed):
        g = sbm_generate(SbmSpec((20, 20), 0.5, 0.05, 8, seed=seed))
        e = g.edges()
        intra = int(np.sum(g.labels[e[:, 0]] == g.labels[e[:, 1]]))
        inter = len(e) - intra
        n_in, n_out = 2 * math.comb(20, 2), 400
        assert abs(intra - n_in * 0.5) <= 4 * math.sqrt(n_in * 0.25)
        assert abs(inter - n_out * 0.05) <= 4 * math.sqrt(n_out * 0.05 * 0.95)

    def test_reproducible(self):
        spec = SbmSpec((6, 7), 0.4, 0.1, 5, seed=11)
        a, b = sbm_generate(spec), sbm_generate(spec)
        assert a.features.tobytes() == b.features.tobytes()
        np.testing.assert_array_equal(a.edges(), b.edges())

    def test_orthogonal_block_means(self):
        g = sbm_generate(SbmSpec((200, 200, 200), 0.0, 0.0, 12, mu=4.0, sigma=0.0, seed=2))
        means = np.stack([g.features[g.labels == c].mean(axis=0) for c in range(3)])
        np.testing.assert_allclose(means @ means.T, 16.0 * np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("kwargs", [
        {"block_sizes": (0, 3)}, {"p_in": 0.1, "p_out": 0.2}, {"feature_dim": 1}, {"p_in": 1.5},
    ])
    def test_invalid_spec(self, kwargs):
        base = dict(block_sizes=(3, 3), p_in=0.5, p_out=0.1, feature_dim=4)
        with pytest.raises(ValueError):
            SbmSpec(**{**base, **kwargs})


class TestNormalizeAdjacency:
    def test_single_node(self):
        g = graph_from_edges([], 1)
        assert normalize_adjacency(g).dense().tolist() == [[1.0]]

    def test_single_edge(self):
        np.testing.assert_array_equal(normalize_adjacency(graph_from_edges([[0, 1]], 2)).dense(), 0.5)

    def test_triangle(self):
        a = normalize_adjacency(graph_from_edges([[0, 1], [1, 2], [0, 2]], 3)).dense()
        np.testing.assert_array_equal(a, 1 / 3)

    @staticmethod
    def circulant(n, k):
        # 2k-regular ring lattice
        return graph_from_edges([[i, (i + s) % n] for i in range(n) for s in range(1, k + 1)], n)

    @pytest.mark.parametrize("k", [1, 2])
    def test_regular_graph_rows_sum_to_one(self, k):
        # entries are exactly fl(1/d); d = 3 and 5 are degrees where d of them sum to 1 exactly
        a = normalize_adjacency(self.circulant(12, k))
        sums = np.asarray(a.csr.sum(axis=1)).reshape(-1)
        assert np.all(sums == 1.0)

    @pytest.mark.parametrize("k", [3, 4, 5])
    def test_regular_graph_rows_within_ulps(self, k):
        a = normalize_adjacency(self.circulant(15, k))
        assert set(a.data.tolist()) == {1.0 / (2 * k + 1)}
        sums = np.asarray(a.csr.sum(axis=1)).reshape(-1)
        assert np.abs(sums - 1.0).max() <= 4 * np.finfo(float).eps

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_symmetric(self, n, seed):
        r = np.random.default_rng(seed)
        a = normalize_adjacency(graph_from_edges(r.integers(0, n, size=(2 * n, 2)), n)).dense()
        assert np.abs(a - a.T).max() <= 1e-15


class TestSplit:
    def test_small(self):
        g = graph_from_edges([], 10, labels=np.arange(10) % 2)
        assert make_split(g, (1, 1, 8), 0).sizes() == (1, 1, 8)

    def test_cora_sizes(self):
        g = graph_from_edges([], 2708, features=np.zeros((2708, 1)), labels=np.zeros(2708, dtype=int))
        assert make_split(g, (1, 1, 8), 0).sizes() == (270, 270, 2168)

    def test_deterministic(self):
        g = graph_from_edges([], 50, labels=np.arange(50) % 3)
        a, b = make_split(g, (1, 1, 8), 4), make_split(g, (1, 1, 8), 4)
        for x, y in ((a.train, b.train), (a.valid, b.valid), (a.test, b.test)):
            np.testing.assert_array_equal(x, y)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 300), st.tuples(*[st.integers(1, 10)] * 3), st.integers(0, 1000))
    def test_partition(self, n, ratio, seed):
        g = graph_from_edges([], n, features=np.zeros((n, 1)), labels=np.zeros(n, dtype=int))
        m = make_split(g, ratio, seed)
        allidx = np.concatenate([m.train, m.valid, m.test])
        assert sorted(allidx.tolist()) == list(range(n))
        total = sum(ratio)
        assert len(m.train) == n * ratio[0] // total and len(m.valid) == n * ratio[1] // total

    def test_needs_labels(self):
        with pytest.raises(DataError):
            make_split(graph_from_edges([], 4), (1, 1, 8), 0)
