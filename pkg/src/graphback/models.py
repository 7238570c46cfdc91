"""Graph-level classifiers: a two-conv GCN and a mean-aggregator GraphSAGE.

Both share the same shape: two propagation layers (input -> 32 hidden with
ReLU, hidden -> num_labels linear), global mean pooling over nodes, softmax
cross-entropy on top. Backward passes are hand-derived and checked against
finite differences in the tests.

The per-graph forward/backward functions are the reference semantics. The
training loop runs the same arithmetic batched: per-batch block-diagonal
sparse propagation plus a sparse mean-pooling matrix, which is what makes
100-epoch runs on a few thousand graphs take seconds. A test pins the
batched gradients to the per-graph ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .datasets import Dataset, Graph, adjacency_matrix, normalized_adjacency, one_hot_features
from .errors import NumericalError, UsageError
from .numerics import (
    AdamConfig,
    AdamState,
    Matrix,
    adam_update,
    glorot_uniform,
    matmul,
    relu,
    relu_backward,
    softmax_cross_entropy,
)

GCN = "gcn"
GRAPHSAGE = "sage"
ARCHITECTURES = (GCN, GRAPHSAGE)


@dataclass(frozen=True)
class GcnModel:
    """Weights for either architecture (the layer layout is identical; only
    the propagation rule differs).

    GCN: w_input_hidden is d x 32, w_hidden_out is 32 x L.
    GraphSAGE: concat(self, neighbor-mean) doubles the input of each layer,
    so w_input_hidden is 2d x 32 and w_hidden_out is 64 x L.
    """

    w_input_hidden: Matrix
    w_hidden_out: Matrix
    hidden_channels: int
    architecture_tag: str

    def __post_init__(self):
        if self.architecture_tag not in ARCHITECTURES:
            raise UsageError(f"unknown architecture {self.architecture_tag!r}, expected one of {ARCHITECTURES}")
        h = self.hidden_channels
        in_rows = self.w_input_hidden.shape
        out_rows = self.w_hidden_out.shape
        expected_out_in = h if self.architecture_tag == GCN else 2 * h
        if in_rows[1] != h or out_rows[0] != expected_out_in:
            raise UsageError(
                f"{self.architecture_tag} weight shapes {in_rows} / {out_rows} inconsistent "
                f"with hidden_channels={h}"
            )
        if self.architecture_tag == GRAPHSAGE and in_rows[0] % 2 != 0:
            raise UsageError("GraphSAGE input weight rows must be 2 * feature_dim")
        if not (np.isfinite(self.w_input_hidden).all() and np.isfinite(self.w_hidden_out).all()):
            raise NumericalError("model weights contain non-finite values")

    @property
    def feature_dim(self) -> int:
        rows = self.w_input_hidden.shape[0]
        return rows if self.architecture_tag == GCN else rows // 2

    @property
    def num_labels(self) -> int:
        return self.w_hidden_out.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.optimizer != "adam":
            raise UsageError(f"only the adam optimizer is supported, got {self.optimizer!r}")
        if min(self.learning_rate, self.batch_size, self.max_epochs) <= 0 or self.weight_decay < 0:
            raise UsageError("training hyperparameters must be positive (weight_decay >= 0)")

    def adam(self) -> AdamConfig:
        return AdamConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay)


@dataclass
class TrainHistory:
    """Per-epoch mean minibatch loss and running training accuracy (computed
    from the batch logits as seen during the epoch, not a second pass)."""

    epoch_losses: list = field(default_factory=list)
    epoch_accuracies: list = field(default_factory=list)


def init_model(architecture: str, feature_dim: int, num_labels: int, hidden_channels: int = 32,
               seed: int = 0) -> GcnModel:
    """Glorot-uniform initialized model; draw order (w0 then w1) is fixed so
    a seed fully determines the weights."""
    if architecture not in ARCHITECTURES:
        raise UsageError(f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}")
    rng = np.random.default_rng([seed, 101])
    in_dim = feature_dim if architecture == GCN else 2 * feature_dim
    mid_dim = hidden_channels if architecture == GCN else 2 * hidden_channels
    w0 = glorot_uniform(in_dim, hidden_channels, rng)
    w1 = glorot_uniform(mid_dim, num_labels, rng)
    return GcnModel(w_input_hidden=w0, w_hidden_out=w1, hidden_channels=hidden_channels,
                    architecture_tag=architecture)


def row_normalized_adjacency(graph: Graph) -> np.ndarray:
    """Mean-aggregation operator: adjacency with each row divided by its
    degree; rows of isolated nodes stay all-zero (empty neighborhood means a
    zero neighbor-mean)."""
    adj = adjacency_matrix(graph)
    deg = adj.sum(axis=1, keepdims=True)
    return np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)


# ---------------------------------------------------------------------------
# Per-graph forward/backward (reference semantics)


@dataclass
class LayerCache:
    """Intermediates from one forward pass, plus the exact weight arrays it
    used so a backward against a different model is rejected."""

    architecture_tag: str
    first_input: Matrix      # S = norm_adj @ X (gcn) or C1 = [X | Q X] (sage)
    pre_activation: Matrix   # Z1 = first_input @ W0
    second_input: Matrix     # M = norm_adj @ H1 (gcn) or C2 = [H1 | Q H1] (sage)
    prop: Matrix             # the propagation operator, needed for dH1
    w_input_hidden: Matrix
    w_hidden_out: Matrix


def _check_cache(model: GcnModel, cache: LayerCache, grad_logits) -> np.ndarray:
    if cache.architecture_tag != model.architecture_tag:
        raise UsageError("cache architecture does not match the model")
    if cache.w_input_hidden is not model.w_input_hidden or cache.w_hidden_out is not model.w_hidden_out:
        raise UsageError("stale cache: model weights changed since the forward pass")
    grad_logits = np.asarray(grad_logits, dtype=np.float64).reshape(1, -1)
    if grad_logits.shape[1] != model.num_labels:
        raise UsageError(f"grad_logits has {grad_logits.shape[1]} entries for {model.num_labels} labels")
    return grad_logits


def gcn_forward(model: GcnModel, graph_features: Matrix, norm_adj: Matrix) -> tuple[Matrix, LayerCache]:
    """logits = mean-pool(norm_adj @ relu(norm_adj @ X @ W0) @ W1), as a
    1 x num_labels row; cache carries what the backward pass needs."""
    if model.architecture_tag != GCN:
        raise UsageError("gcn_forward called with a non-GCN model")
    x = np.asarray(graph_features, dtype=np.float64)
    a = np.asarray(norm_adj, dtype=np.float64)
    if a.shape[0] != a.shape[1] or a.shape[0] != x.shape[0]:
        raise UsageError(f"features {x.shape} incompatible with norm_adj {a.shape}")
    s = matmul(a, x)
    z1 = matmul(s, model.w_input_hidden)
    h1 = relu(z1)
    m = matmul(a, h1)
    h2 = matmul(m, model.w_hidden_out)
    logits = h2.mean(axis=0, keepdims=True)
    cache = LayerCache(GCN, s, z1, m, a, model.w_input_hidden, model.w_hidden_out)
    return logits, cache


def gcn_backward(model: GcnModel, cache: LayerCache, grad_logits) -> tuple[Matrix, Matrix]:
    """Exact gradients (dW0, dW1) of the scalar whose logit-gradient is
    grad_logits; mean pooling spreads the upstream row over nodes."""
    grad_logits = _check_cache(model, cache, grad_logits)
    n = cache.first_input.shape[0]
    dh2 = np.repeat(grad_logits / n, n, axis=0)
    dw1 = matmul(cache.second_input.T, dh2)
    dm = matmul(dh2, model.w_hidden_out.T)
    dh1 = matmul(cache.prop.T, dm)
    dz1 = relu_backward(dh1, cache.pre_activation)
    dw0 = matmul(cache.first_input.T, dz1)
    return dw0, dw1


def sage_forward(model: GcnModel, graph_features: Matrix, adjacency: Matrix) -> tuple[Matrix, LayerCache]:
    """GraphSAGE mean aggregator: each layer consumes concat(self features,
    neighbor mean). Takes the raw adjacency; row normalization happens here."""
    if model.architecture_tag != GRAPHSAGE:
        raise UsageError("sage_forward called with a non-GraphSAGE model")
    x = np.asarray(graph_features, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape[0] != a.shape[1] or a.shape[0] != x.shape[0]:
        raise UsageError(f"features {x.shape} incompatible with adjacency {a.shape}")
    deg = a.sum(axis=1, keepdims=True)
    q = np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)
    c1 = np.hstack([x, matmul(q, x)])
    z1 = matmul(c1, model.w_input_hidden)
    h1 = relu(z1)
    c2 = np.hstack([h1, matmul(q, h1)])
    h2 = matmul(c2, model.w_hidden_out)
    logits = h2.mean(axis=0, keepdims=True)
    cache = LayerCache(GRAPHSAGE, c1, z1, c2, q, model.w_input_hidden, model.w_hidden_out)
    return logits, cache


def sage_backward(model: GcnModel, cache: LayerCache, grad_logits) -> tuple[Matrix, Matrix]:
    grad_logits = _check_cache(model, cache, grad_logits)
    n = cache.first_input.shape[0]
    h = model.hidden_channels
    dh2 = np.repeat(grad_logits / n, n, axis=0)
    dw1 = matmul(cache.second_input.T, dh2)
    dc2 = matmul(dh2, model.w_hidden_out.T)
    dh1 = dc2[:, :h] + matmul(cache.prop.T, dc2[:, h:])
    dz1 = relu_backward(dh1, cache.pre_activation)
    dw0 = matmul(cache.first_input.T, dz1)
    return dw0, dw1


# ---------------------------------------------------------------------------
# Batched training path


@dataclass
class GraphEncoding:
    """Per-graph precomputation reused across epochs: the first-layer input
    (already propagated for GCN, already concatenated for SAGE) and the
    propagation operator as CSR."""

    first_input: np.ndarray
    prop: sparse.csr_matrix
    node_count: int


def encode_graph(graph: Graph, vocab_size: int, architecture: str) -> GraphEncoding:
    x = one_hot_features(graph, vocab_size)
    if architecture == GCN:
        a = normalized_adjacency(graph)
        return GraphEncoding(first_input=a @ x, prop=sparse.csr_matrix(a), node_count=graph.node_count)
    q = row_normalized_adjacency(graph)
    return GraphEncoding(first_input=np.hstack([x, q @ x]), prop=sparse.csr_matrix(q),
                         node_count=graph.node_count)


def _block_diag(mats) -> sparse.csr_matrix:
    """Block-diagonal CSR assembled by direct index arithmetic (fast path
    for many small blocks)."""
    total = sum(m.shape[0] for m in mats)
    data = np.concatenate([m.data for m in mats])
    col_offsets = np.cumsum([0] + [m.shape[0] for m in mats[:-1]])
    indices = np.concatenate([m.indices + off for m, off in zip(mats, col_offsets)])
    indptr_parts = [np.zeros(1, dtype=np.int64)]
    nnz = 0
    for m in mats:
        indptr_parts.append(m.indptr[1:].astype(np.int64) + nnz)
        nnz += m.nnz
    return sparse.csr_matrix((data, indices, np.concatenate(indptr_parts)), shape=(total, total))


def _mean_pool_matrix(node_counts) -> sparse.csr_matrix:
    """batch_size x total_nodes matrix averaging each graph's node rows."""
    total = int(np.sum(node_counts))
    data = np.concatenate([np.full(n, 1.0 / n) for n in node_counts])
    indptr = np.concatenate([[0], np.cumsum(node_counts)])
    return sparse.csr_matrix((data, np.arange(total), indptr), shape=(len(node_counts), total))


@dataclass
class Batch:
    first_input: np.ndarray
    prop: sparse.csr_matrix
    pool: sparse.csr_matrix
    labels: np.ndarray


def assemble_batch(encodings, labels) -> Batch:
    counts = [e.node_count for e in encodings]
    return Batch(
        first_input=np.concatenate([e.first_input for e in encodings], axis=0),
        prop=_block_diag([e.prop for e in encodings]),
        pool=_mean_pool_matrix(counts),
        labels=np.asarray(labels, dtype=np.int64),
    )


def batch_forward(model: GcnModel, batch: Batch):
    """Batched version of the per-graph forward; returns logits plus the
    intermediates the batched backward consumes."""
    z1 = batch.first_input @ model.w_input_hidden
    h1 = relu(z1)
    propagated = batch.prop @ h1
    second = propagated if model.architecture_tag == GCN else np.hstack([h1, propagated])
    logits = batch.pool @ (second @ model.w_hidden_out)
    return logits, z1, second


def batch_gradients(model: GcnModel, batch: Batch) -> tuple[float, np.ndarray, Matrix, Matrix]:
    """One batched forward/backward: (mean loss, logits, dW0, dW1). The
    gradients are of the batch-mean cross-entropy, identical (to rounding)
    to averaging the per-graph backward results."""
    logits, z1, second = batch_forward(model, batch)
    loss, dlogits = softmax_cross_entropy(logits, batch.labels)
    dh2 = batch.pool.T @ dlogits
    dw1 = second.T @ dh2
    dsecond = dh2 @ model.w_hidden_out.T
    if model.architecture_tag == GCN:
        dh1 = batch.prop.T @ dsecond
    else:
        h = model.hidden_channels
        dh1 = dsecond[:, :h] + batch.prop.T @ dsecond[:, h:]
    dz1 = relu_backward(dh1, z1)
    dw0 = batch.first_input.T @ dz1
    return loss, logits, dw0, dw1


def train(model_init: GcnModel, dataset: Dataset, indices, config: TrainConfig,
          verbose: bool = False) -> tuple[GcnModel, TrainHistory]:
    """Minibatch Adam for exactly max_epochs epochs; per-epoch shuffling is
    seeded from config.seed, the last partial batch is kept, and the whole
    run is bit-deterministic. Aborts with a diagnostic on non-finite loss.
    """
    indices = [int(i) for i in indices]
    if not indices:
        raise UsageError("train() needs a nonempty index list")
    if model_init.feature_dim != dataset.node_class_vocab_size:
        raise UsageError(
            f"model feature dim {model_init.feature_dim} != node-class vocabulary "
            f"{dataset.node_class_vocab_size}"
        )
    encodings = [encode_graph(dataset.graphs[i], dataset.node_class_vocab_size,
                              model_init.architecture_tag) for i in indices]
    labels = np.array([dataset.graphs[i].label for i in indices], dtype=np.int64)

    w0, w1 = model_init.w_input_hidden, model_init.w_hidden_out
    adam_cfg = config.adam()
    state0, state1 = AdamState.zeros_like(w0), AdamState.zeros_like(w1)
    # own substream so shuffling never aliases the split/init streams that
    # may share the same base seed
    shuffle_rng = np.random.default_rng([config.seed, 11])
    history = TrainHistory()
    model = model_init

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(indices))
        losses, correct = [], 0
        for start in range(0, len(order), config.batch_size):
            chosen = order[start:start + config.batch_size]
            batch = assemble_batch([encodings[i] for i in chosen], labels[chosen])
            loss, logits, dw0, dw1 = batch_gradients(model, batch)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch + 1}, batch {start // config.batch_size + 1}"
                )
            losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
            w0, state0 = adam_update(model.w_input_hidden, dw0, state0, adam_cfg)
            w1, state1 = adam_update(model.w_hidden_out, dw1, state1, adam_cfg)
            model = GcnModel(w_input_hidden=w0, w_hidden_out=w1,
                             hidden_channels=model.hidden_channels,
                             architecture_tag=model.architecture_tag)
        history.epoch_losses.append(float(np.mean(losses)))
        history.epoch_accuracies.append(correct / len(indices))
        if verbose and (epoch + 1) % 10 == 0:
            print(f"  epoch {epoch + 1:3d}  loss {history.epoch_losses[-1]:.4f}  "
                  f"train acc {history.epoch_accuracies[-1]:.4f}")
    return model, history


# ---------------------------------------------------------------------------
# Prediction


def forward_graph(model: GcnModel, graph: Graph) -> Matrix:
    """Logits row for one graph, dispatching on the architecture tag."""
    x = one_hot_features(graph, model.feature_dim)
    if model.architecture_tag == GCN:
        logits, _ = gcn_forward(model, x, normalized_adjacency(graph))
    else:
        logits, _ = sage_forward(model, x, adjacency_matrix(graph))
    return logits

def predict(model: GcnModel, graph: Graph) -> int:
    """Argmax class id; ties go to the lowest class id."""
    return int(np.argmax(forward_graph(model, graph)[0]))


def predict_many(model: GcnModel, graphs, chunk_size: int = 512) -> np.ndarray:
    """Vectorized predict over a sequence of graphs (batched forward in
    chunks); same tie-break as predict."""
    graphs = list(graphs)
    out = np.empty(len(graphs), dtype=np.int64)
    for start in range(0, len(graphs), chunk_size):
        chunk = graphs[start:start + chunk_size]
        encodings = [encode_graph(g, model.feature_dim, model.architecture_tag) for g in chunk]
        batch = assemble_batch(encodings, np.zeros(len(chunk)))
        logits, _, _ = batch_forward(model, batch)
        out[start:start + chunk_size] = np.argmax(logits, axis=1)
    return out


def accuracy(model: GcnModel, dataset: Dataset, indices) -> float:
    """Fraction of graphs at the given dataset indices predicted correctly."""
    indices = [int(i) for i in indices]
    if not indices:
        raise UsageError("accuracy() needs a nonempty index list")
    preds = predict_many(model, [dataset.graphs[i] for i in indices])
    truth = np.array([dataset.graphs[i].label for i in indices])
    return float(np.mean(preds == truth))


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(model: GcnModel, path: str) -> None:
    """Text checkpoint: header lines then one row of %.17g floats per weight
    row. %.17g round-trips float64 exactly."""
    with open(path, "w") as fh:
        fh.write(f"architecture {model.architecture_tag}\n")
        fh.write(f"hidden-channels {model.hidden_channels}\n")
        for name, w in (("w-input-hidden", model.w_input_hidden), ("w-hidden-out", model.w_hidden_out)):
            fh.write(f"{name} {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_model(path: str) -> GcnModel:
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    pos = 0

    def take(expected):
        nonlocal pos
        parts = lines[pos].split()
        pos += 1
        if parts[0] != expected:
            raise UsageError(f"{path}:{pos}: expected {expected!r}, got {lines[pos - 1]!r}")
        return parts[1:]

    architecture = take("architecture")[0]
    hidden = int(take("hidden-channels")[0])
    weights = {}
    for name in ("w-input-hidden", "w-hidden-out"):
        rows, cols = (int(v) for v in take(name))
        block = np.array([[float(v) for v in lines[pos + r].split()] for r in range(rows)])
        pos += rows
        if block.shape != (rows, cols):
            raise UsageError(f"{path}: {name} block is not {rows}x{cols}")
        weights[name] = block
    return GcnModel(w_input_hidden=weights["w-input-hidden"], w_hidden_out=weights["w-hidden-out"],
                    hidden_channels=hidden, architecture_tag=architecture)
