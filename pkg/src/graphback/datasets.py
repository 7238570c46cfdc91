"""Graph corpus ingestion and basic graph encodings.

Reads TUDataset-style plain-text corpora (``<DS>_A.txt``,
``<DS>_graph_indicator.txt``, ``<DS>_graph_labels.txt``,
``<DS>_node_labels.txt``) into validated in-memory graphs, produces seeded
train/test splits, and provides the dense encodings (one-hot node features,
symmetrically normalized adjacency) consumed by the classifiers.

Conventions: node ids are remapped to 0-indexed per-graph ids, graph labels
and node classes are remapped to contiguous 0-based ids (original values are
recorded on the Dataset), and the duplicate directed edge rows of the input
format are collapsed into single undirected edges. Self-loop rows are
dropped. Optional continuous node-attribute files are ignored; only the
discrete node labels are used.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, UsageError

REQUIRED_SUFFIXES = ("_A.txt", "_graph_indicator.txt", "_graph_labels.txt", "_node_labels.txt")


def round_half_up(x: float) -> int:
    """Round a nonnegative quantity half-up (round(2.5) == 3, always)."""
    return int(math.floor(x + 0.5))


def canonical_edges(pairs) -> tuple[tuple[int, int], ...]:
    """Canonicalize an undirected edge list: (min, max) pairs, deduplicated,
    self-loops dropped, sorted lexicographically."""
    seen = set()
    for i, j in pairs:
        if i == j:
            continue
        seen.add((i, j) if i < j else (j, i))
    return tuple(sorted(seen))


@dataclass(frozen=True)
class Graph:
    """One attributed, undirected, unweighted graph sample.

    ``edges`` is canonical (each unordered pair once, as ``(lo, hi)``),
    ``node_classes[i]`` is the integer class id of node ``i``, ``label`` is
    the 0-based graph class id, and ``source_id`` preserves the 1-indexed
    graph id from the original files.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    node_classes: tuple[int, ...]
    label: int
    source_id: int

    def __post_init__(self):
        if self.node_count < 1:
            raise DataError(f"graph {self.source_id}: node_count must be positive")
        if len(self.node_classes) != self.node_count:
            raise DataError(
                f"graph {self.source_id}: {len(self.node_classes)} node classes "
                f"for {self.node_count} nodes"
            )
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise DataError(f"graph {self.source_id}: edge ({i}, {j}) out of range")
            if i == j:
                raise DataError(f"graph {self.source_id}: self-loop on node {i}")
            if i > j:
                raise DataError(f"graph {self.source_id}: edge ({i}, {j}) not canonical")
            if (i, j) in seen:
                raise DataError(f"graph {self.source_id}: duplicate edge ({i}, {j})")
            seen.add((i, j))

    def degrees(self) -> np.ndarray:
        """Per-node degree counts as an int64 vector."""
        deg = np.zeros(self.node_count, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def with_node_classes(self, node_classes) -> "Graph":
        """Copy of this graph with the node-class vector replaced; topology
        and label are untouched."""
        return replace(self, node_classes=tuple(int(c) for c in node_classes))

    def with_edges(self, edges) -> "Graph":
        """Copy of this graph with a new canonical edge list; classes and
        label are untouched."""
        return replace(self, edges=canonical_edges(edges))


@dataclass(frozen=True)
class Dataset:
    """A named graph corpus with contiguous 0-based graph labels and node
    classes. ``label_mapping`` / ``node_class_mapping`` record the original
    file values as ``(raw, mapped)`` pairs sorted by raw value."""

    name: str
    graphs: tuple[Graph, ...]
    num_graph_labels: int
    node_class_vocab_size: int
    label_histogram: tuple[int, ...]
    label_mapping: tuple[tuple[int, int], ...]
    node_class_mapping: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if sum(self.label_histogram) != len(self.graphs):
            raise DataError(f"dataset {self.name}: label histogram does not sum to graph count")
        for g in self.graphs:
            if not (0 <= g.label < self.num_graph_labels):
                raise DataError(f"dataset {self.name}: graph {g.source_id} label {g.label} out of range")
            for c in g.node_classes:
                if not (0 <= c < self.node_class_vocab_size):
                    raise DataError(
                        f"dataset {self.name}: graph {g.source_id} node class {c} out of vocabulary"
                    )

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def avg_nodes(self) -> float:
        return float(np.mean([g.node_count for g in self.graphs]))

    def avg_edges(self) -> float:
        return float(np.mean([len(g.edges) for g in self.graphs]))


@dataclass(frozen=True)
class DataSplit:
    """A seeded train/test partition of dataset indices."""

    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    train_fraction: float


def _read_int_lines(path: str, what: str) -> list[int]:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: expected an integer {what}, got {text!r}") from exc
    return values


def _contiguous_remap(values: list[int]) -> tuple[list[int], tuple[tuple[int, int], ...]]:
    """Remap arbitrary integer ids to contiguous 0-based ids by sorted raw
    value; returns (remapped values, ((raw, mapped), ...))."""
    mapping = {raw: idx for idx, raw in enumerate(sorted(set(values)))}
    return [mapping[v] for v in values], tuple(sorted(mapping.items()))


def parse_tudataset(directory: str, name: str | None = None) -> Dataset:
    """Parse one TUDataset-format directory into a validated Dataset.

    The dataset prefix is taken from ``name``, else from the directory
    basename, else inferred from the ``*_graph_indicator.txt`` file present.
    Edge rows are comma- or whitespace-separated 1-indexed node pairs with
    each undirected edge listed in both directions; the pairs are collapsed
    into canonical undirected edges. Large corpora are streamed row by row
    and materialized one graph at a time.
    """
    if not os.path.isdir(directory):
        raise DataError(f"dataset directory not found: {directory}")
    prefix = name or os.path.basename(os.path.normpath(directory))
    if not os.path.exists(os.path.join(directory, prefix + "_graph_indicator.txt")):
        candidates = [f for f in sorted(os.listdir(directory)) if f.endswith("_graph_indicator.txt")]
        if candidates:
            prefix = candidates[0][: -len("_graph_indicator.txt")]
    paths = {suffix: os.path.join(directory, prefix + suffix) for suffix in REQUIRED_SUFFIXES}
    for suffix, path in paths.items():
        if not os.path.exists(path):
            raise DataError(f"missing file: {path}")

    raw_graph_labels = _read_int_lines(paths["_graph_labels.txt"], "graph label")
    indicator = _read_int_lines(paths["_graph_indicator.txt"], "graph id")
    raw_node_labels = _read_int_lines(paths["_node_labels.txt"], "node label")
    if len(raw_node_labels) != len(indicator):
        raise DataError(
            f"{paths['_node_labels.txt']}: {len(raw_node_labels)} node labels but "
            f"{paths['_graph_indicator.txt']} lists {len(indicator)} nodes"
        )

    num_graphs = len(raw_graph_labels)
    graph_labels, label_mapping = _contiguous_remap(raw_graph_labels)
    node_classes_flat, node_class_mapping = _contiguous_remap(raw_node_labels)

    # Global 1-indexed node id -> (graph index, local 0-indexed id), assigned
    # in order of appearance in the indicator file.
    node_graph = np.empty(len(indicator), dtype=np.int64)
    node_local = np.empty(len(indicator), dtype=np.int64)
    counts = [0] * num_graphs
    for node_idx, gid in enumerate(indicator):
        if not (1 <= gid <= num_graphs):
            raise DataError(
                f"{paths['_graph_indicator.txt']}:{node_idx + 1}: graph id {gid} out of range"
            )
        g = gid - 1
        node_graph[node_idx] = g
        node_local[node_idx] = counts[g]
        counts[g] += 1
    for g, n in enumerate(counts):
        if n == 0:
            raise DataError(f"{prefix}: graph {g + 1} has no nodes in the indicator file")

    total_nodes = len(indicator)
    edge_sets: list[set[tuple[int, int]]] = [set() for _ in range(num_graphs)]
    with open(paths["_A.txt"]) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",") if "," in text else text.split()
            if len(parts) != 2:
                raise DataError(f"{paths['_A.txt']}:{lineno}: expected 'i, j', got {text!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataError(f"{paths['_A.txt']}:{lineno}: non-integer node id in {text!r}") from exc
            if not (1 <= u <= total_nodes and 1 <= v <= total_nodes):
                raise DataError(f"{paths['_A.txt']}:{lineno}: edge ({u}, {v}) references unknown node id")
            if u == v:
                continue
            gu, gv = node_graph[u - 1], node_graph[v - 1]
            if gu != gv:
                raise DataError(
                    f"{paths['_A.txt']}:{lineno}: edge ({u}, {v}) crosses graphs {gu + 1} and {gv + 1}"
                )
            a, b = int(node_local[u - 1]), int(node_local[v - 1])
            edge_sets[gu].add((a, b) if a < b else (b, a))

    class_lists: list[list[int]] = [[] for _ in range(num_graphs)]
    for node_idx, cls in enumerate(node_classes_flat):
        class_lists[node_graph[node_idx]].append(cls)

    graphs = []
    histogram = [0] * len(label_mapping)
    for g in range(num_graphs):
        graphs.append(
            Graph(
                node_count=counts[g],
                edges=tuple(sorted(edge_sets[g])),
                node_classes=tuple(class_lists[g]),
                label=graph_labels[g],
                source_id=g + 1,
            )
        )
        histogram[graph_labels[g]] += 1

    return Dataset(
        name=prefix,
        graphs=tuple(graphs),
        num_graph_labels=len(label_mapping),
        node_class_vocab_size=len(node_class_mapping),
        label_histogram=tuple(histogram),
        label_mapping=label_mapping,
        node_class_mapping=node_class_mapping,
    )


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> DataSplit:
    """Uniform random permutation then prefix split; deterministic per seed.

    |train| = round(train_fraction * |dataset|), half-up.
    """
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset.graphs)
    if n == 0:
        raise UsageError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = round_half_up(train_fraction * n)
    return DataSplit(
        train_indices=tuple(int(i) for i in perm[:n_train]),
        test_indices=tuple(int(i) for i in perm[n_train:]),
        seed=seed,
        train_fraction=train_fraction,
    )


def one_hot_features(graph: Graph, vocab_size: int) -> np.ndarray:
    """node_count x vocab_size float64 matrix; row i is the one-hot encoding
    of node i's class."""
    features = np.zeros((graph.node_count, vocab_size), dtype=np.float64)
    for i, c in enumerate(graph.node_classes):
        if not (0 <= c < vocab_size):
            raise UsageError(f"node class {c} outside vocabulary of size {vocab_size}")
        features[i, c] = 1.0
    return features


def adjacency_matrix(graph: Graph) -> np.ndarray:
    """Dense symmetric binary adjacency (no self-loops)."""
    adj = np.zeros((graph.node_count, graph.node_count), dtype=np.float64)
    for i, j in graph.edges:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    return adj


def normalized_adjacency(graph: Graph) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops,
    D^{-1/2} (A + I) D^{-1/2}, where D are the row sums of A + I.

    Isolated nodes are safe: the self-loop gives them degree 1.
    """
    a_tilde = adjacency_matrix(graph)
    np.fill_diagonal(a_tilde, 1.0)
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * np.outer(inv_sqrt, inv_sqrt)


def dump_dataset(dataset: Dataset, path: str) -> None:
    """Serialize a Dataset to the canonical line-oriented text form (see
    ``load_dataset_dump`` for the format)."""
    with open(path, "w") as fh:
        fh.write(f"dataset {dataset.name}\n")
        fh.write(f"graph-labels {dataset.num_graph_labels}\n")
        fh.write(f"node-class-vocab {dataset.node_class_vocab_size}\n")
        fh.write("label-map " + " ".join(f"{raw}={m}" for raw, m in dataset.label_mapping) + "\n")
        fh.write(
            "node-class-map " + " ".join(f"{raw}={m}" for raw, m in dataset.node_class_mapping) + "\n"
        )
        fh.write(f"graphs {len(dataset.graphs)}\n")
        for g in dataset.graphs:
            fh.write(f"graph {g.source_id} label {g.label} nodes {g.node_count}\n")
            fh.write("classes " + " ".join(str(c) for c in g.node_classes) + "\n")
            fh.write(f"edges {len(g.edges)}\n")
            for i, j in g.edges:
                fh.write(f"{i} {j}\n")


def load_dataset_dump(path: str) -> Dataset:
    """Re-parse the canonical dump written by ``dump_dataset``.

    Format: a header (``dataset <name>``, ``graph-labels <n>``,
    ``node-class-vocab <d>``, ``label-map raw=id ...``,
    ``node-class-map raw=id ...``, ``graphs <count>``) followed by one block
    per graph: ``graph <source_id> label <l> nodes <n>``, a ``classes`` line,
    an ``edges <m>`` line and m ``i j`` rows.
    """
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    pos = 0

    def take(expected: str) -> list[str]:
        nonlocal pos
        if pos >= len(lines):
            raise DataError(f"{path}: truncated dump, expected '{expected}'")
        parts = lines[pos].split()
        pos += 1
        if not parts or parts[0] != expected:
            raise DataError(f"{path}:{pos}: expected '{expected}', got {lines[pos - 1]!r}")
        return parts[1:]

    def parse_map(parts: list[str]) -> tuple[tuple[int, int], ...]:
        return tuple((int(raw), int(mapped)) for raw, mapped in (p.split("=") for p in parts))

    name = take("dataset")[0]
    num_labels = int(take("graph-labels")[0])
    vocab = int(take("node-class-vocab")[0])
    label_mapping = parse_map(take("label-map"))
    node_class_mapping = parse_map(take("node-class-map"))
    count = int(take("graphs")[0])
    graphs = []
    histogram = [0] * num_labels
    for _ in range(count):
        head = take("graph")
        source_id, label, nodes = int(head[0]), int(head[2]), int(head[4])
        classes = tuple(int(c) for c in take("classes"))
        n_edges = int(take("edges")[0])
        edges = []
        for _ in range(n_edges):
            parts = lines[pos].split()
            pos += 1
            edges.append((int(parts[0]), int(parts[1])))
        graphs.append(
            Graph(node_count=nodes, edges=tuple(edges), node_classes=classes, label=label, source_id=source_id)
        )
        histogram[label] += 1
    return Dataset(
        name=name,
        graphs=tuple(graphs),
        num_graph_labels=num_labels,
        node_class_vocab_size=vocab,
        label_histogram=tuple(histogram),
        label_mapping=label_mapping,
        node_class_mapping=node_class_mapping,
    )
