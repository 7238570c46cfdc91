import os

import numpy as np
import pytest

from conftest import real_dataset_or_skip
from graphback.datasets import (
    Graph,
    adjacency_matrix,
    canonical_edges,
    dump_dataset,
    load_dataset_dump,
    normalized_adjacency,
    one_hot_features,
    parse_tudataset,
    round_half_up,
    split_dataset,
)
from graphback.errors import DataError, UsageError
from synth import make_synthetic_corpus, write_tudataset


def write_files(directory, name, rows_a, indicator, graph_labels, node_labels):
    os.makedirs(directory, exist_ok=True)
    for suffix, lines in (("_A.txt", rows_a), ("_graph_indicator.txt", indicator),
                          ("_graph_labels.txt", graph_labels), ("_node_labels.txt", node_labels)):
        with open(os.path.join(directory, f"{name}{suffix}"), "w") as fh:
            fh.write("\n".join(str(v) for v in lines) + "\n")


@pytest.fixture
def toy_dir(tmp_path):
    # graph 1: triangle, classes [0,1,1]; graph 2: single edge, classes [2,2]
    d = str(tmp_path / "toy")
    write_files(
        d, "toy",
        rows_a=["1, 2", "2, 1", "2, 3", "3, 2", "1, 3", "3, 1", "4, 5", "5, 4"],
        indicator=[1, 1, 1, 2, 2],
        graph_labels=[1, -1],
        node_labels=[0, 1, 1, 2, 2],
    )
    return d


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(3.5) == 4  # no banker's rounding
    assert round_half_up(0.49) == 0
    assert round_half_up(48.0) == 48


def test_parse_toy_fixture(toy_dir):
    ds = parse_tudataset(toy_dir)
    assert ds.name == "toy"
    assert len(ds.graphs) == 2
    g1, g2 = ds.graphs
    assert (g1.node_count, len(g1.edges)) == (3, 3)
    assert (g2.node_count, len(g2.edges)) == (2, 1)
    assert g1.node_classes == (0, 1, 1)
    assert g2.node_classes == (2, 2)
    # raw labels {-1, 1} remap to {0, 1} by sorted raw value
    assert ds.label_mapping == ((-1, 0), (1, 1))
    assert (g1.label, g2.label) == (1, 0)
    assert ds.label_histogram == (1, 1)
    # both-direction rows collapse to |rows|/2 undirected edges
    assert len(g1.edges) + len(g2.edges) == 8 // 2


def test_parse_whitespace_and_blank_tolerance(tmp_path):
    d = str(tmp_path / "ws")
    write_files(d, "ws", rows_a=["1,2", " 2 , 1 ", "", "2 3", "3 2"],
                indicator=[1, 1, 1], graph_labels=[0], node_labels=[5, 5, 6])
    ds = parse_tudataset(d)
    assert ds.graphs[0].edges == ((0, 1), (1, 2))
    assert ds.node_class_mapping == ((5, 0), (6, 1))


def test_parse_drops_self_loops_and_duplicates(tmp_path):
    d = str(tmp_path / "loops")
    write_files(d, "loops", rows_a=["1, 1", "1, 2", "2, 1", "1, 2"],
                indicator=[1, 1], graph_labels=[0], node_labels=[0, 0])
    ds = parse_tudataset(d)
    assert ds.graphs[0].edges == ((0, 1),)


def test_parse_missing_file_names_it(tmp_path):
    d = str(tmp_path / "missing")
    write_files(d, "missing", rows_a=["1, 2", "2, 1"], indicator=[1, 1],
                graph_labels=[0], node_labels=[0, 0])
    os.remove(os.path.join(d, "missing_node_labels.txt"))
    with pytest.raises(DataError, match="missing_node_labels.txt"):
        parse_tudataset(d)


def test_parse_unknown_node_id_has_line_number(tmp_path):
    d = str(tmp_path / "badid")
    write_files(d, "badid", rows_a=["1, 2", "2, 1", "1, 9"], indicator=[1, 1],
                graph_labels=[0], node_labels=[0, 0])
    with pytest.raises(DataError, match=r"_A\.txt:3.*unknown node id"):
        parse_tudataset(d)


def test_parse_cross_graph_edge_has_line_number(tmp_path):
    d = str(tmp_path / "cross")
    write_files(d, "cross", rows_a=["1, 2", "2, 1", "2, 3"], indicator=[1, 1, 2],
                graph_labels=[0, 1], node_labels=[0, 0, 0])
    with pytest.raises(DataError, match=r"_A\.txt:3.*crosses graphs"):
        parse_tudataset(d)


def test_parse_node_label_length_mismatch(tmp_path):
    d = str(tmp_path / "short")
    write_files(d, "short", rows_a=["1, 2", "2, 1"], indicator=[1, 1],
                graph_labels=[0], node_labels=[0])
    with pytest.raises(DataError, match="node labels"):
        parse_tudataset(d)


def test_parse_synth_round_trip_matches_memory(synth_dataset, synth_dir):
    # file-backed copy uses shifted raw values; remapping must undo the shift
    ds = parse_tudataset(synth_dir)
    assert ds.label_mapping == ((2, 0), (5, 1))
    assert ds.node_class_mapping == tuple((c + 3, c) for c in range(6))
    assert len(ds.graphs) == len(synth_dataset.graphs)
    for parsed, original in zip(ds.graphs, synth_dataset.graphs):
        assert parsed.node_count == original.node_count
        assert parsed.edges == original.edges
        assert parsed.node_classes == original.node_classes
        assert parsed.label == original.label


def test_graph_invariants_enforced():
    with pytest.raises(DataError, match="out of range"):
        Graph(node_count=2, edges=((0, 5),), node_classes=(0, 0), label=0, source_id=1)
    with pytest.raises(DataError, match="self-loop"):
        Graph(node_count=2, edges=((1, 1),), node_classes=(0, 0), label=0, source_id=1)
    with pytest.raises(DataError, match="node classes"):
        Graph(node_count=3, edges=(), node_classes=(0, 0), label=0, source_id=1)


def test_canonical_edges():
    assert canonical_edges([(2, 1), (1, 2), (0, 0), (0, 3)]) == ((0, 3), (1, 2))


def test_split_cardinality_and_disjointness(synth_dataset):
    split = split_dataset(synth_dataset, 0.8, 7)
    n = len(synth_dataset.graphs)
    assert len(split.train_indices) == round_half_up(0.8 * n)
    assert len(split.train_indices) + len(split.test_indices) == n
    assert set(split.train_indices).isdisjoint(split.test_indices)
    assert set(split.train_indices) | set(split.test_indices) == set(range(n))


def test_split_ten_graphs():
    ds = make_synthetic_corpus(n_graphs=10)
    split = split_dataset(ds, 0.8, 7)
    assert len(split.train_indices) == 8 and len(split.test_indices) == 2


def test_split_determinism_and_seed_sensitivity(synth_dataset):
    a = split_dataset(synth_dataset, 0.8, 3)
    b = split_dataset(synth_dataset, 0.8, 3)
    assert a.train_indices == b.train_indices and a.test_indices == b.test_indices
    others = [split_dataset(synth_dataset, 0.8, s).train_indices for s in range(5)]
    assert any(t != a.train_indices for t in others)


def test_split_rejects_bad_fraction(synth_dataset):
    for frac in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(UsageError):
            split_dataset(synth_dataset, frac, 0)


def test_one_hot():
    g = Graph(node_count=2, edges=(), node_classes=(0, 2), label=0, source_id=1)
    x = one_hot_features(g, 3)
    assert np.array_equal(x, [[1, 0, 0], [0, 0, 1]])
    assert np.array_equal(x.sum(axis=1), [1.0, 1.0])
    with pytest.raises(UsageError):
        one_hot_features(g, 2)


def test_normalized_adjacency_trivial_cases():
    single = Graph(node_count=1, edges=(), node_classes=(0,), label=0, source_id=1)
    assert np.array_equal(normalized_adjacency(single), [[1.0]])
    pair = Graph(node_count=2, edges=((0, 1),), node_classes=(0, 0), label=0, source_id=1)
    assert np.allclose(normalized_adjacency(pair), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalized_adjacency_matches_brute_force_oracle():
    # independent three-matrix product D^{-1/2} (A+I) D^{-1/2}
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(2, 11))
        edges = canonical_edges(
            (int(a), int(b)) for a, b in rng.integers(0, n, size=(n * 2, 2)) if a != b
        )
        g = Graph(node_count=n, edges=edges, node_classes=tuple([0] * n), label=0, source_id=1)
        a_tilde = adjacency_matrix(g) + np.eye(n)
        d_inv_sqrt = np.diag(1.0 / np.sqrt(a_tilde.sum(axis=1)))
        oracle = d_inv_sqrt @ a_tilde @ d_inv_sqrt
        got = normalized_adjacency(g)
        assert np.max(np.abs(got - oracle)) <= 1e-12
        assert np.max(np.abs(got - got.T)) <= 1e-12
        assert np.all(np.diag(got) > 0)


def test_dataset_dump_round_trip(synth_dataset, tmp_path):
    path = str(tmp_path / "dump.txt")
    dump_dataset(synth_dataset, path)
    loaded = load_dataset_dump(path)
    assert loaded == synth_dataset


# --- real-data examples (skipped when the corpora are not on disk)


def test_parse_aids_statistics():
    ds = real_dataset_or_skip("AIDS")
    assert len(ds.graphs) == 2000
    assert ds.label_histogram == (400, 1600)
    assert abs(ds.avg_nodes() - 15.7) <= 0.5
    split = split_dataset(ds, 0.8, 0)
    assert (len(split.train_indices), len(split.test_indices)) == (1600, 400)
    # feature dim = distinct raw node labels in the files
    assert ds.node_class_vocab_size == len(ds.node_class_mapping)


def test_parse_nci1_statistics():
    ds = real_dataset_or_skip("NCI1")
    assert len(ds.graphs) == 4110
    assert abs(ds.avg_nodes() - 29.9) <= 0.5
