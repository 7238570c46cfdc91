import numpy as np
import pytest

from graphback.datasets import Graph, adjacency_matrix, normalized_adjacency, one_hot_features
from graphback.errors import NumericalError, UsageError
from graphback.models import (
    GCN,
    GRAPHSAGE,
    GcnModel,
    TrainConfig,
    accuracy,
    assemble_batch,
    batch_gradients,
    encode_graph,
    forward_graph,
    gcn_backward,
    gcn_forward,
    init_model,
    load_model,
    predict,
    predict_many,
    sage_backward,
    sage_forward,
    save_model,
    train,
)
from graphback.numerics import relu, softmax, softmax_cross_entropy
from synth import make_synthetic_corpus, random_graph

VOCAB, LABELS, HIDDEN = 5, 2, 8


def ops_for(arch):
    if arch == GCN:
        return gcn_forward, gcn_backward, normalized_adjacency
    return sage_forward, sage_backward, adjacency_matrix


def graph_loss(model, graph, forward, op):
    x = one_hot_features(graph, model.feature_dim)
    logits, cache = forward(model, x, op(graph))
    loss, dlogits = softmax_cross_entropy(logits, [graph.label])
    return loss, dlogits, cache, logits


def test_init_model_shapes():
    gcn = init_model(GCN, VOCAB, LABELS, HIDDEN, seed=0)
    assert gcn.w_input_hidden.shape == (VOCAB, HIDDEN)
    assert gcn.w_hidden_out.shape == (HIDDEN, LABELS)
    assert (gcn.feature_dim, gcn.num_labels) == (VOCAB, LABELS)
    sage = init_model(GRAPHSAGE, VOCAB, LABELS, HIDDEN, seed=0)
    assert sage.w_input_hidden.shape == (2 * VOCAB, HIDDEN)
    assert sage.w_hidden_out.shape == (2 * HIDDEN, LABELS)
    assert (sage.feature_dim, sage.num_labels) == (VOCAB, LABELS)


def test_model_invariants():
    with pytest.raises(UsageError, match="inconsistent"):
        GcnModel(np.zeros((5, 8)), np.zeros((9, 2)), hidden_channels=8, architecture_tag=GCN)
    with pytest.raises(UsageError, match="architecture"):
        GcnModel(np.zeros((5, 8)), np.zeros((8, 2)), hidden_channels=8, architecture_tag="mlp")
    bad = np.zeros((8, 2))
    bad[0, 0] = np.nan
    with pytest.raises(NumericalError):
        GcnModel(np.zeros((5, 8)), bad, hidden_channels=8, architecture_tag=GCN)


def test_gcn_forward_zero_weights_gives_uniform_softmax():
    model = GcnModel(np.zeros((VOCAB, HIDDEN)), np.zeros((HIDDEN, LABELS)), HIDDEN, GCN)
    g = random_graph(np.random.default_rng(0), vocab=VOCAB)
    logits, _ = gcn_forward(model, one_hot_features(g, VOCAB), normalized_adjacency(g))
    assert np.array_equal(logits, np.zeros((1, LABELS)))
    assert np.allclose(softmax(logits), 0.5)


def test_gcn_forward_single_isolated_node():
    model = init_model(GCN, VOCAB, LABELS, HIDDEN, seed=1)
    g = Graph(node_count=1, edges=(), node_classes=(2,), label=0, source_id=1)
    x = one_hot_features(g, VOCAB)
    logits, _ = gcn_forward(model, x, normalized_adjacency(g))
    expected = relu(x @ model.w_input_hidden) @ model.w_hidden_out
    assert np.max(np.abs(logits - expected)) <= 1e-12


def test_gcn_forward_matches_step_by_step_oracle():
    rng = np.random.default_rng(2)
    model = init_model(GCN, VOCAB, LABELS, HIDDEN, seed=2)
    g = random_graph(rng, lo=5, hi=5, vocab=VOCAB)
    x, a = one_hot_features(g, VOCAB), normalized_adjacency(g)
    logits, _ = gcn_forward(model, x, a)
    h1 = relu(a @ x @ model.w_input_hidden)
    oracle = (a @ h1 @ model.w_hidden_out).mean(axis=0, keepdims=True)
    assert np.max(np.abs(logits - oracle)) <= 1e-10


def test_backward_zero_upstream_and_linearity():
    rng = np.random.default_rng(3)
    for arch in (GCN, GRAPHSAGE):
        forward, backward, op = ops_for(arch)
        model = init_model(arch, VOCAB, LABELS, HIDDEN, seed=3)
        g = random_graph(rng, vocab=VOCAB)
        _, cache = forward(model, one_hot_features(g, VOCAB), op(g))
        zero0, zero1 = backward(model, cache, np.zeros((1, LABELS)))
        assert not zero0.any() and not zero1.any()
        up = rng.standard_normal((1, LABELS))
        d0a, d1a = backward(model, cache, up)
        d0b, d1b = backward(model, cache, 2.0 * up)
        assert np.max(np.abs(d0b - 2.0 * d0a)) <= 1e-12
        assert np.max(np.abs(d1b - 2.0 * d1a)) <= 1e-12


def test_backward_rejects_stale_cache():
    g = random_graph(np.random.default_rng(4), vocab=VOCAB)
    model = init_model(GCN, VOCAB, LABELS, HIDDEN, seed=4)
    _, cache = gcn_forward(model, one_hot_features(g, VOCAB), normalized_adjacency(g))
    other = init_model(GCN, VOCAB, LABELS, HIDDEN, seed=5)
    with pytest.raises(UsageError, match="stale"):
        gcn_backward(other, cache, np.zeros((1, LABELS)))
    sage = init_model(GRAPHSAGE, VOCAB, LABELS, HIDDEN, seed=4)
    with pytest.raises(UsageError, match="architecture"):
        sage_backward(sage, cache, np.zeros((1, LABELS)))


def fd_weight_check(arch, seed, rel_tol=1e-5, h=1e-5):
    rng = np.random.default_rng(seed)
    forward, backward, op = ops_for(arch)
    model = init_model(arch, VOCAB, LABELS, HIDDEN, seed=seed)
    g = random_graph(rng, lo=3, hi=10, vocab=VOCAB)
    _, dlogits, cache, _ = graph_loss(model, g, forward, op)
    dw0, dw1 = backward(model, cache, dlogits)
    worst = 0.0
    for widx, analytic in ((0, dw0), (1, dw1)):
        w = (model.w_input_hidden, model.w_hidden_out)[widx]
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                losses = []
                for delta in (h, -h):
                    bumped = [model.w_input_hidden.copy(), model.w_hidden_out.copy()]
                    bumped[widx][i, j] += delta
                    m = GcnModel(bumped[0], bumped[1], model.hidden_channels, arch)
                    losses.append(graph_loss(m, g, forward, op)[0])
                fd = (losses[0] - losses[1]) / (2 * h)
                worst = max(worst, abs(analytic[i, j] - fd) / max(1.0, abs(fd)))
    assert worst <= rel_tol, f"{arch} seed {seed}: worst rel err {worst:.3e}"


@pytest.mark.parametrize("arch", [GCN, GRAPHSAGE])
def test_gradients_match_finite_differences(arch):
    for seed in range(5):
        fd_weight_check(arch, seed)


@pytest.mark.parametrize("arch", [GCN, GRAPHSAGE])
def test_permutation_invariance(arch):
    rng = np.random.default_rng(6)
    forward, _, op = ops_for(arch)
    model = init_model(arch, VOCAB, LABELS, HIDDEN, seed=6)
    for _ in range(10):
        g = random_graph(rng, vocab=VOCAB)
        perm = rng.permutation(g.node_count)
        inverse = np.argsort(perm)
        relabeled = Graph(
            node_count=g.node_count,
            edges=tuple(sorted((min(int(perm[i]), int(perm[j])), max(int(perm[i]), int(perm[j])))
                               for i, j in g.edges)),
            node_classes=tuple(g.node_classes[int(inverse[v])] for v in range(g.node_count)),
            label=g.label,
            source_id=g.source_id,
        )
        a = forward(model, one_hot_features(g, VOCAB), op(g))[0]
        b = forward(model, one_hot_features(relabeled, VOCAB), op(relabeled))[0]
        assert np.max(np.abs(a - b)) <= 1e-10


def test_sage_empty_neighborhood_is_zero_vector():
    model = init_model(GRAPHSAGE, VOCAB, LABELS, HIDDEN, seed=7)
    g = Graph(node_count=2, edges=(), node_classes=(1, 3), label=0, source_id=1)
    x = one_hot_features(g, VOCAB)
    logits, cache = sage_forward(model, x, adjacency_matrix(g))
    assert not cache.first_input[:, VOCAB:].any()  # neighbor-mean block all zero
    h1 = relu(np.hstack([x, np.zeros_like(x)]) @ model.w_input_hidden)
    oracle = (np.hstack([h1, np.zeros_like(h1)]) @ model.w_hidden_out).mean(axis=0, keepdims=True)
    assert np.max(np.abs(logits - oracle)) <= 1e-12


@pytest.mark.parametrize("arch", [GCN, GRAPHSAGE])
def test_batched_route_matches_per_graph_route(arch):
    # the trainer's block-diagonal batch must reproduce the reference
    # per-graph forward/backward exactly (up to rounding)
    rng = np.random.default_rng(8)
    forward, backward, op = ops_for(arch)
    model = init_model(arch, VOCAB, LABELS, HIDDEN, seed=8)
    graphs = [random_graph(rng, vocab=VOCAB) for _ in range(9)]
    labels = np.array([g.label for g in graphs])
    batch = assemble_batch([encode_graph(g, VOCAB, arch) for g in graphs], labels)
    loss_b, logits_b, dw0_b, dw1_b = batch_gradients(model, batch)

    loss_sum, dw0_sum, dw1_sum = 0.0, 0.0, 0.0
    for k, g in enumerate(graphs):
        loss, dlogits, cache, logits = graph_loss(model, g, forward, op)
        assert np.max(np.abs(logits - logits_b[k])) <= 1e-10
        dw0, dw1 = backward(model, cache, dlogits)
        loss_sum += loss
        dw0_sum, dw1_sum = dw0_sum + dw0, dw1_sum + dw1
    n = len(graphs)
    assert abs(loss_b - loss_sum / n) <= 1e-12
    assert np.max(np.abs(dw0_b - dw0_sum / n)) <= 1e-10
    assert np.max(np.abs(dw1_b - dw1_sum / n)) <= 1e-10


def test_train_memorizes_single_graph(synth_dataset):
    cfg = TrainConfig(max_epochs=200, batch_size=32, seed=0)
    init = init_model(GCN, synth_dataset.node_class_vocab_size, 2, 16, seed=0)
    model, history = train(init, synth_dataset, [0], cfg)
    assert history.epoch_losses[-1] < 0.01
    assert len(history.epoch_losses) == 200 and len(history.epoch_accuracies) == 200
    assert predict(model, synth_dataset.graphs[0]) == synth_dataset.graphs[0].label


def test_train_is_deterministic(synth_dataset):
    cfg = TrainConfig(max_epochs=3, seed=5)
    indices = range(40)
    init = init_model(GCN, synth_dataset.node_class_vocab_size, 2, HIDDEN, seed=5)
    m1, h1 = train(init, synth_dataset, indices, cfg)
    m2, h2 = train(init, synth_dataset, indices, cfg)
    assert np.array_equal(m1.w_input_hidden, m2.w_input_hidden)
    assert np.array_equal(m1.w_hidden_out, m2.w_hidden_out)
    assert h1.epoch_losses == h2.epoch_losses


def test_train_fits_shuffled_labels(synth_dataset):
    # optimizer sanity: 20 graphs with shuffled labels still reach
    # below-chance loss
    rng = np.random.default_rng(11)
    graphs = list(synth_dataset.graphs[:20])
    shuffled = rng.permutation([g.label for g in graphs])
    from dataclasses import replace
    relabeled = replace(
        synth_dataset,
        graphs=tuple(replace(g, label=int(l)) for g, l in zip(graphs, shuffled)),
        label_histogram=(int(np.sum(shuffled == 0)), int(np.sum(shuffled == 1))),
    )
    init = init_model(GCN, relabeled.node_class_vocab_size, 2, 16, seed=11)
    _, history = train(init, relabeled, range(20), TrainConfig(max_epochs=100, seed=11))
    assert history.epoch_losses[-1] < np.log(2.0)


def test_train_aborts_on_nonfinite_loss(synth_dataset):
    cfg = TrainConfig(learning_rate=1e154, max_epochs=5, seed=0)
    init = init_model(GCN, synth_dataset.node_class_vocab_size, 2, HIDDEN, seed=0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalError, match=r"epoch \d+, batch \d+"):
            train(init, synth_dataset, range(40), cfg)


def test_train_rejects_empty_indices(synth_dataset):
    init = init_model(GCN, synth_dataset.node_class_vocab_size, 2, HIDDEN, seed=0)
    with pytest.raises(UsageError, match="nonempty"):
        train(init, synth_dataset, [], TrainConfig())


def test_train_config_validation():
    with pytest.raises(UsageError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(UsageError):
        TrainConfig(max_epochs=0)


def test_predict_tie_breaks_to_lowest_class():
    model = GcnModel(np.zeros((VOCAB, HIDDEN)), np.zeros((HIDDEN, 3)), HIDDEN, GCN)
    g = random_graph(np.random.default_rng(12), vocab=VOCAB)
    assert predict(model, g) == 0  # all logits equal


def test_predict_many_matches_predict(synth_dataset):
    model = init_model(GCN, synth_dataset.node_class_vocab_size, 2, HIDDEN, seed=13)
    graphs = synth_dataset.graphs[:30]
    batched = predict_many(model, graphs, chunk_size=7)
    assert list(batched) == [predict(model, g) for g in graphs]


def test_accuracy_all_correct_is_one(synth_dataset):
    cfg = TrainConfig(max_epochs=200, seed=0)
    init = init_model(GCN, synth_dataset.node_class_vocab_size, 2, 16, seed=0)
    model, _ = train(init, synth_dataset, [0, 1], cfg)
    assert accuracy(model, synth_dataset, [0, 1]) == 1.0


@pytest.mark.parametrize("arch", [GCN, GRAPHSAGE])
def test_checkpoint_round_trip_is_bit_exact(arch, tmp_path):
    model = init_model(arch, VOCAB, LABELS, HIDDEN, seed=14)
    path = str(tmp_path / "model.txt")
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.architecture_tag == arch
    assert loaded.hidden_channels == HIDDEN
    assert np.array_equal(loaded.w_input_hidden, model.w_input_hidden)
    assert np.array_equal(loaded.w_hidden_out, model.w_hidden_out)
    g = random_graph(np.random.default_rng(15), vocab=VOCAB)
    assert np.array_equal(forward_graph(loaded, g), forward_graph(model, g))
