"""Clean-label backdoor construction for graph classification.

The semantic attack picks a trigger node class by degree-centrality
importance: over all nontarget-label training graphs, per-node DC values
(degree / (n-1)) are summed per node class, and the class with the lowest
total is the trigger. Poisoning replaces the classes of t random nodes in a
seeded subset of target-label training graphs; labels and adjacency are
never touched. At test time the same replacement is applied to every
nontarget test graph and the attack succeeds when the model outputs the
target label.

The random-subgraph baseline plants a fixed Erdos-Renyi pattern instead:
same graph selection, but the injection rewires the induced subgraph of a
random node subset and leaves node classes alone.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .datasets import Dataset, DataSplit, Graph, round_half_up
from .errors import UsageError

# Fixed stream tags so every RNG draw site has its own substream of the
# experiment seed and per-graph draws are order-independent.
STREAM_POISON_SELECT = 1
STREAM_POISON_INJECT = 2
STREAM_TEST_INJECT = 3
STREAM_ER_PATTERN = 4
STREAM_ER_INJECT = 5
STREAM_ER_TEST = 6


@dataclass(frozen=True)
class AttackConfig:
    """target_label: forced output class; poisoning_rate: fraction of the
    FULL training set to poison; trigger_size: nodes replaced per graph;
    trigger_class: filled in by selection; seed: attack RNG seed."""

    target_label: int
    poisoning_rate: float
    trigger_size: int
    trigger_class: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.poisoning_rate < 1.0:
            raise UsageError(f"poisoning rate must be in (0, 1), got {self.poisoning_rate}")
        if self.trigger_size < 1:
            raise UsageError(f"trigger size must be >= 1, got {self.trigger_size}")
        if self.target_label < 0:
            raise UsageError(f"target label must be a class id, got {self.target_label}")

    def with_trigger(self, trigger_class: int) -> "AttackConfig":
        return dc_replace(self, trigger_class=int(trigger_class))


@dataclass(frozen=True)
class TriggerReport:
    """Aggregated DC totals per node class over the nontarget-label training
    graphs, the ascending ranking, and the chosen (minimum-total) class."""

    target_label: int
    nontarget_graph_count: int
    class_totals: tuple          # ((class id, total DC), ...) sorted by class id
    ranking: tuple               # class ids sorted by (total, class id)
    trigger_class: int


@dataclass(frozen=True)
class PoisonRecord:
    """Audit trail of one poisoning run: which train graphs were touched and
    exactly what changed in each. ``replacements`` holds one entry per
    poisoned graph: (dataset index, node positions, original classes).
    ``skipped_indices`` is only populated by the subgraph baseline (graphs
    smaller than the pattern are left unpoisoned)."""

    method: str                  # "semantic" or "er"
    target_label: int
    poisoning_rate: float
    trigger_size: int
    trigger_class: int | None
    seed: int
    poisoned_indices: tuple
    replacements: tuple
    skipped_indices: tuple = ()

    def __post_init__(self):
        if len(self.replacements) != len(self.poisoned_indices):
            raise UsageError("poison record: one replacement entry required per poisoned graph")


def degree_centrality(graph: Graph) -> np.ndarray:
    """DC_i = degree(i) / (n - 1); a single-node graph scores 0."""
    if graph.node_count == 1:
        return np.zeros(1)
    return graph.degrees() / float(graph.node_count - 1)


def select_semantic_trigger(dataset: Dataset, split: DataSplit, target_label: int) -> TriggerReport:
    """Rank node classes by total DC over nontarget-label training graphs,
    ascending; the trigger is the minimum-total class, ties toward the
    smaller class id. Only classes actually present in those graphs are
    candidates."""
    if not 0 <= target_label < dataset.num_graph_labels:
        raise UsageError(f"target label {target_label} not a graph label of {dataset.name}")
    totals = {}
    count = 0
    for idx in sorted(split.train_indices):
        g = dataset.graphs[idx]
        if g.label == target_label:
            continue
        count += 1
        dc = degree_centrality(g)
        for pos, cls in enumerate(g.node_classes):
            totals[cls] = totals.get(cls, 0.0) + float(dc[pos])
    if count == 0:
        raise UsageError(f"no training graphs with label != {target_label}; cannot rank trigger classes")
    ranking = tuple(sorted(totals, key=lambda c: (totals[c], c)))
    return TriggerReport(
        target_label=target_label,
        nontarget_graph_count=count,
        class_totals=tuple(sorted(totals.items())),
        ranking=ranking,
        trigger_class=ranking[0],
    )


def inject_trigger(graph: Graph, trigger_class: int, trigger_size: int,
                   rng: np.random.Generator) -> tuple[Graph, tuple]:
    """Set min(trigger_size, node_count) uniformly chosen distinct node
    positions to the trigger class. Edges, node count, and label are the
    same objects as the input's. Returns (poisoned graph, positions)."""
    if trigger_size < 1:
        raise UsageError(f"trigger size must be >= 1, got {trigger_size}")
    k = min(trigger_size, graph.node_count)
    positions = tuple(int(i) for i in np.sort(rng.choice(graph.node_count, size=k, replace=False)))
    classes = list(graph.node_classes)
    for pos in positions:
        classes[pos] = int(trigger_class)
    return graph.with_node_classes(classes), positions


def _selection(dataset: Dataset, split: DataSplit, config: AttackConfig) -> tuple:
    """Seeded uniform choice of round(p * |train|) target-label train
    graphs; returns sorted dataset indices."""
    count = round_half_up(config.poisoning_rate * len(split.train_indices))
    eligible = sorted(i for i in split.train_indices if dataset.graphs[i].label == config.target_label)
    if count > len(eligible):
        max_p = len(eligible) / len(split.train_indices)
        raise UsageError(
            f"p={config.poisoning_rate} needs {count} target-label training graphs but only "
            f"{len(eligible)} exist; maximum feasible p is about {max_p:.4f}"
        )
    rng = np.random.default_rng([config.seed, STREAM_POISON_SELECT])
    chosen = rng.choice(len(eligible), size=count, replace=False)
    return tuple(sorted(eligible[int(i)] for i in chosen))


def generate_poisoned_trainset(dataset: Dataset, split: DataSplit,
                               config: AttackConfig) -> tuple[Dataset, PoisonRecord]:
    """Clean-label semantic poisoning of the training set.

    Returns a dataset view in which the selected target-label training
    graphs carry the trigger (labels and adjacency untouched, other graphs
    shared with the original) plus the audit record. Per-graph injection
    RNG streams are derived from (seed, graph index), so the record does not
    depend on iteration order.
    """
    if config.trigger_class is None:
        raise UsageError("attack config has no trigger class; run trigger selection first")
    poisoned_indices = _selection(dataset, split, config)
    graphs = list(dataset.graphs)
    replacements = []
    for idx in poisoned_indices:
        rng = np.random.default_rng([config.seed, STREAM_POISON_INJECT, idx])
        original = dataset.graphs[idx]
        poisoned, positions = inject_trigger(original, config.trigger_class, config.trigger_size, rng)
        graphs[idx] = poisoned
        replacements.append((idx, positions, tuple(original.node_classes[p] for p in positions)))
    record = PoisonRecord(
        method="semantic",
        target_label=config.target_label,
        poisoning_rate=config.poisoning_rate,
        trigger_size=config.trigger_size,
        trigger_class=config.trigger_class,
        seed=config.seed,
        poisoned_indices=poisoned_indices,
        replacements=tuple(replacements),
    )
    return dc_replace(dataset, graphs=tuple(graphs)), record


def build_attack_testset(dataset: Dataset, split: DataSplit, trigger_class: int,
                         trigger_size: int, target_label: int,
                         rng: np.random.Generator) -> list:
    """Triggered copies of every test graph whose true label differs from
    the target label (injecting into already-target graphs would only
    inflate the success rate)."""
    attack = []
    for idx in split.test_indices:
        g = dataset.graphs[idx]
        if g.label == target_label:
            continue
        poisoned, _ = inject_trigger(g, trigger_class, trigger_size, rng)
        attack.append(poisoned)
    if not attack:
        raise UsageError(f"test set has no graphs with label != {target_label}; attack set is empty")
    return attack


# ---------------------------------------------------------------------------
# Random-subgraph baseline


@dataclass(frozen=True)
class ErPattern:
    """A fixed random subgraph: edges over pattern-local node ids
    0..num_nodes-1, drawn once per experiment and reused for every
    injection."""

    num_nodes: int
    edges: tuple
    edge_prob: float
    seed: int


def er_baseline_trigger(num_nodes: int, edge_prob: float, seed: int) -> ErPattern:
    """G(n, p) pattern: each of the n(n-1)/2 candidate edges kept
    independently with probability edge_prob."""
    if num_nodes < 2:
        raise UsageError(f"pattern needs >= 2 nodes, got {num_nodes}")
    if not 0.0 <= edge_prob <= 1.0:
        raise UsageError(f"edge probability must be in [0, 1], got {edge_prob}")
    rng = np.random.default_rng([seed, STREAM_ER_PATTERN])
    edges = []
    for i in range(num_nodes):
        for j in range(i + 1, num_nodes):
            if rng.random() < edge_prob:
                edges.append((i, j))
    return ErPattern(num_nodes=num_nodes, edges=tuple(edges), edge_prob=edge_prob, seed=seed)


def inject_er_subgraph(graph: Graph, pattern: ErPattern, rng: np.random.Generator) -> tuple[Graph, tuple]:
    """Plant the pattern on a uniformly chosen node subset: all existing
    edges among the chosen nodes are removed, the pattern's edges are added
    under a random assignment of pattern ids to those nodes. Node classes
    and label are untouched. Returns (poisoned graph, chosen positions)."""
    if graph.node_count < pattern.num_nodes:
        raise UsageError(
            f"graph with {graph.node_count} nodes cannot host a {pattern.num_nodes}-node pattern"
        )
    chosen = rng.choice(graph.node_count, size=pattern.num_nodes, replace=False)
    chosen_set = set(int(i) for i in chosen)
    kept = [e for e in graph.edges if not (e[0] in chosen_set and e[1] in chosen_set)]
    planted = [(int(chosen[i]), int(chosen[j])) for i, j in pattern.edges]
    return graph.with_edges(kept + planted), tuple(sorted(chosen_set))


def generate_er_poisoned_trainset(dataset: Dataset, split: DataSplit, config: AttackConfig,
                                  pattern: ErPattern) -> tuple[Dataset, PoisonRecord]:
    """Baseline counterpart of generate_poisoned_trainset: same seeded graph
    selection, subgraph injection instead of class replacement. Selected
    graphs smaller than the pattern are left unpoisoned, warned about, and
    listed in the record."""
    poisoned_indices = _selection(dataset, split, config)
    graphs = list(dataset.graphs)
    replacements, kept_indices, skipped = [], [], []
    for idx in poisoned_indices:
        original = dataset.graphs[idx]
        if original.node_count < pattern.num_nodes:
            print(f"warning: graph {original.source_id} has {original.node_count} nodes, "
                  f"smaller than the {pattern.num_nodes}-node pattern; skipped", file=sys.stderr)
            skipped.append(idx)
            continue
        rng = np.random.default_rng([config.seed, STREAM_ER_INJECT, idx])
        poisoned, positions = inject_er_subgraph(original, pattern, rng)
        graphs[idx] = poisoned
        kept_indices.append(idx)
        replacements.append((idx, positions, tuple(original.node_classes[p] for p in positions)))
    record = PoisonRecord(
        method="er",
        target_label=config.target_label,
        poisoning_rate=config.poisoning_rate,
        trigger_size=config.trigger_size,
        trigger_class=None,
        seed=config.seed,
        poisoned_indices=tuple(kept_indices),
        replacements=tuple(replacements),
        skipped_indices=tuple(skipped),
    )
    return dc_replace(dataset, graphs=tuple(graphs)), record


def build_er_attack_testset(dataset: Dataset, split: DataSplit, pattern: ErPattern,
                            target_label: int, rng: np.random.Generator) -> tuple[list, int]:
    """Pattern-injected copies of nontarget test graphs; too-small graphs
    are dropped from the attack set. Returns (graphs, skipped count)."""
    attack, skipped = [], 0
    for idx in split.test_indices:
        g = dataset.graphs[idx]
        if g.label == target_label:
            continue
        if g.node_count < pattern.num_nodes:
            skipped += 1
            continue
        poisoned, _ = inject_er_subgraph(g, pattern, rng)
        attack.append(poisoned)
    if not attack:
        raise UsageError(f"no nontarget test graphs can host the {pattern.num_nodes}-node pattern")
    return attack, skipped


# ---------------------------------------------------------------------------
# Audit serialization


def trigger_report_to_text(report: TriggerReport) -> str:
    lines = [
        "trigger-report",
        f"target-label {report.target_label}",
        f"nontarget-graphs {report.nontarget_graph_count}",
        f"trigger-class {report.trigger_class}",
        "ranking " + " ".join(str(c) for c in report.ranking),
        "totals",
    ]
    lines += [f"{cls} {total:.17g}" for cls, total in report.class_totals]
    return "\n".join(lines) + "\n"


def poison_record_to_text(record: PoisonRecord) -> str:
    lines = [
        "poison-record",
        f"method {record.method}",
        f"target-label {record.target_label}",
        f"poisoning-rate {record.poisoning_rate!r}",
        f"trigger-size {record.trigger_size}",
        f"trigger-class {'-' if record.trigger_class is None else record.trigger_class}",
        f"seed {record.seed}",
        f"poisoned {len(record.poisoned_indices)}",
    ]
    for idx, positions, original in record.replacements:
        lines.append(
            f"graph {idx} positions " + ",".join(str(p) for p in positions)
            + " original-classes " + ",".join(str(c) for c in original)
        )
    lines.append("skipped " + (",".join(str(i) for i in record.skipped_indices) or "-"))
    return "\n".join(lines) + "\n"
