import numpy as np
import pytest

import graphem.models as models
from graphem.attention import LabelState
from graphem.graphs import Graph, generate_sbm, laplacian_weights
from graphem.models import (GcnStack, build_p_network, build_q_network,
                            gcn_forward, p_forward, pr_nr_weights, q_forward)
from graphem.tensor import EPS, Tensor
from helpers import check_tensor_grads, random_graph, random_label_state
from oracles import gcn_forward_loops, sigmoid_scalar


def eye_stack(dims):
    rng = np.random.default_rng(0)
    stack = GcnStack(dims, rng, dropout_rate=0.0)
    for w in stack.weights:
        w.data = np.eye(w.shape[0], w.shape[1])
    for b in stack.biases:
        b.data = np.zeros(b.shape)
    return stack


class TestGcnForward:
    def test_self_loop_only_reduces_to_pointwise(self):
        # one node, unit self-loop weight, identity transforms: the hidden
        # layer applies plain ReLU to the input
        stack = eye_stack([3, 3, 3])
        x = np.array([[-1.0, 0.5, 2.0]])
        out = gcn_forward(stack, np.array([[1.0]]), x)
        np.testing.assert_array_equal(out.data, np.maximum(x, 0.0))

    def test_clique_symmetry(self):
        rng = np.random.default_rng(1)
        stack = GcnStack([4, 5, 3], rng, dropout_rate=0.0)
        agg = np.full((3, 3), 1.0 / 3.0)
        x = np.tile(rng.standard_normal(4), (3, 1))
        out = gcn_forward(stack, agg, x).data
        np.testing.assert_allclose(out[0], out[1], atol=1e-12)
        np.testing.assert_allclose(out[0], out[2], atol=1e-12)

    def test_matches_naive_loop_two_layers(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng, n_nodes=6, feature_dim=4)
        stack = GcnStack([4, 5, 3], rng, dropout_rate=0.0)
        agg = laplacian_weights(g)
        got = gcn_forward(stack, agg, g.features).data
        expected = gcn_forward_loops([w.data for w in stack.weights],
                                     [b.data for b in stack.biases],
                                     agg, g.features)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_graphs_match_naive_loop(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        g = random_graph(rng, n_nodes=n, feature_dim=3)
        stack = GcnStack([3, 4, 2], rng, dropout_rate=0.0)
        agg = laplacian_weights(g)
        got = gcn_forward(stack, agg, g.features).data
        expected = gcn_forward_loops([w.data for w in stack.weights],
                                     [b.data for b in stack.biases],
                                     agg, g.features)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_nonfinite_activation_names_layer(self):
        stack = eye_stack([2, 2, 2])
        x = np.array([[1e308, 1e308]])
        agg = np.array([[1e308]])
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError, match="layer 0"):
                gcn_forward(stack, agg, x)

    def test_dropout_requires_rng(self):
        rng = np.random.default_rng(3)
        stack = GcnStack([2, 3, 2], rng, dropout_rate=0.5)
        with pytest.raises(ValueError):
            gcn_forward(stack, np.eye(2), np.ones((2, 2)), training=True)


class TestPForward:
    def test_forced_hard_probs_reduce_to_soft_over_original(self, monkeypatch):
        rng = np.random.default_rng(4)
        g = random_graph(rng, n_nodes=7)
        p = build_p_network(g, 6, rng, temperature=1e-3)
        labels = random_label_state(rng, g)

        from graphem.attention import soft_attention
        forced = Tensor(np.full((g.n_edges, 1), 1.0 - EPS))
        monkeypatch.setattr(models, "hard_attention_probs",
                            lambda *a, **k: forced)
        logits, att = p_forward(p, g, labels, np.random.default_rng(0))
        np.testing.assert_array_equal(att.hard_sample.data,
                                      np.ones((g.n_edges, 1)))
        reference = soft_attention(g, None, g.features, p.attention).data
        np.testing.assert_array_equal(att.soft_weights.data, reference)

    def test_separable_one_hot_labels_order_edge_probs(self):
        rng = np.random.default_rng(5)
        g = generate_sbm(3, 10, 0.5, 0.2, 4, 0.0, rng_seed=1,
                         train_per_class=3, val_per_class=3)
        p = build_p_network(g, 6, rng)
        p.attention.metric.data = np.eye(3)
        state = LabelState.from_graph(g)
        onehot = LabelState(state.onehot.copy(), state.labeled_mask,
                            state.onehot)
        _, att = p_forward(p, g, onehot, np.random.default_rng(0))
        intra = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
        probs = att.hard_probs.data.ravel()
        assert probs[intra].min() > probs[~intra].max()

    def test_scripted_composition_oracle(self):
        rng_init = np.random.default_rng(6)
        g = random_graph(rng_init, n_nodes=6, feature_dim=4, n_classes=3)
        p = build_p_network(g, 5, rng_init)
        labels = random_label_state(rng_init, g)
        seed = 1234

        logits, att = p_forward(p, g, labels, np.random.default_rng(seed),
                                training=True, hard_sampling=True)

        # independent step-by-step reconstruction with the same draws
        rng = np.random.default_rng(seed)
        src, dst = g.edges[:, 0], g.edges[:, 1]
        y = labels.distributions
        metric = p.attention.metric.data
        scores = np.array([
            0.5 * (y[i] @ metric @ y[j] + y[j] @ metric @ y[i])
            for i, j in g.edges])
        probs = np.clip([sigmoid_scalar(s) for s in scores], EPS, 1 - EPS)

        u = np.clip(rng.random((g.n_edges, 1)), EPS, 1 - EPS)
        noise = np.log(u) - np.log1p(-u)
        logit_q = np.log(probs) - np.log1p(-probs)
        relaxed = 1.0 / (1.0 + np.exp(-(logit_q.reshape(-1, 1) + noise)))
        sample = (relaxed > 0.5).astype(float)

        h = np.maximum(g.features @ p.attention.proj.data, 0.0) \
            * p.attention.scale.data
        norms = np.sqrt((h * h).sum(axis=1) + EPS * EPS)
        unit = h / norms[:, None]
        cos_e = (unit[src] * unit[dst]).sum(axis=1).reshape(-1, 1)
        self_cos = (unit * unit).sum(axis=1).reshape(-1, 1)
        mass_e = sample * np.exp(-cos_e)
        keep = (rng.random((g.n_edges, 1)) >= p.attention_dropout)
        mass_e = mass_e * keep
        self_mass = np.exp(-self_cos)
        n = g.n_nodes
        den = self_mass.copy()
        weights = np.diag(self_mass.ravel())
        for e, (i, j) in enumerate(g.edges):
            den[i] += mass_e[e]
            den[j] += mass_e[e]
            weights[i, j] = weights[j, i] = mass_e[e, 0]
        weights = weights / den

        inputs = np.hstack([y, g.features])
        hcur = inputs
        for layer, (w, b) in enumerate(zip(p.stack.weights, p.stack.biases)):
            hcur = weights @ hcur @ w.data + b.data
            if layer != len(p.stack.weights) - 1:
                hcur = np.maximum(hcur, 0.0)
                keep_h = (rng.random(hcur.shape) >= p.stack.dropout_rate) \
                    / (1.0 - p.stack.dropout_rate)
                hcur = hcur * keep_h

        np.testing.assert_allclose(logits.data, hcur, atol=1e-10)

    def test_gradients_reach_all_parameters(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng, n_nodes=6)
        p = build_p_network(g, 5, rng)
        labels = random_label_state(rng, g)
        logits, att = p_forward(p, g, labels, np.random.default_rng(3),
                                training=False, hard_sampling=False)
        logits.sum().backward()
        for t in p.parameters():
            assert t.grad is not None
            assert np.all(np.isfinite(t.grad))


class TestQForward:
    def test_laplacian_equals_plain_gcn(self):
        rng = np.random.default_rng(8)
        g = random_graph(rng, n_nodes=6)
        q = build_q_network(g, 4, rng)
        agg = laplacian_weights(g)
        got = q_forward(q, g, agg).data
        expected = gcn_forward(q.stack, agg, g.features).data
        np.testing.assert_array_equal(got, expected)

    def test_all_ones_hard_fusion_matches_pure_soft(self):
        from graphem.attention import soft_attention, stable_fusion
        rng = np.random.default_rng(9)
        g = random_graph(rng, n_nodes=6)
        q = build_q_network(g, 4, rng)
        p = build_p_network(g, 4, rng)
        labels = random_label_state(rng, g)
        fused = stable_fusion(g, labels, g.features, p.attention,
                              hard_probs=np.ones((g.n_edges, 1)))
        soft = soft_attention(g, None, g.features, p.attention).data
        np.testing.assert_array_equal(q_forward(q, g, fused).data,
                                      q_forward(q, g, soft).data)


class TestPrNrWeights:
    def test_identical_features_both_uniform(self):
        g = Graph(4, [[0, 1], [1, 2], [2, 3]], np.ones((4, 3)),
                  [0, 0, 1, 1], 2, {"train": [0], "val": [], "test": []})
        pr = pr_nr_weights(g, "pr")
        nr = pr_nr_weights(g, "nr")
        np.testing.assert_allclose(pr, nr, atol=1e-12)
        for i in range(4):
            live = pr[i] > 0
            np.testing.assert_allclose(pr[i][live], 1.0 / live.sum())

    def test_ordering_follows_mode(self):
        # node 0 joined to a near-duplicate (node 1) and a near-orthogonal
        # neighbor (node 2)
        x = np.array([[1.0, 0.0], [0.99, 0.1], [0.05, 1.0]])
        g = Graph(3, [[0, 1], [0, 2]], x, [0, 0, 1], 2,
                  {"train": [0], "val": [], "test": []})
        pr = pr_nr_weights(g, "pr")
        nr = pr_nr_weights(g, "nr")
        assert pr[0, 1] > pr[0, 2]
        assert nr[0, 1] < nr[0, 2]

    def test_matches_direct_softmax(self):
        rng = np.random.default_rng(10)
        g = random_graph(rng, n_nodes=5, feature_dim=3)
        for mode, sign in [("pr", 1.0), ("nr", -1.0)]:
            got = pr_nr_weights(g, mode)
            x = g.features
            unit = x / np.sqrt((x * x).sum(axis=1, keepdims=True))
            cos = unit @ unit.T
            np.fill_diagonal(cos, 1.0)
            expected = np.zeros_like(got)
            allowed = g.adjacency() + np.eye(g.n_nodes)
            for i in range(g.n_nodes):
                idx = np.flatnonzero(allowed[i])
                e = np.exp(sign * cos[i, idx])
                expected[i, idx] = e / e.sum()
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_isolated_node_self_weight(self):
        g = Graph(3, [[0, 1]], np.ones((3, 2)), [0, 0, 1], 2,
                  {"train": [0], "val": [], "test": []})
        for mode in ("pr", "nr"):
            w = pr_nr_weights(g, mode)
            assert w[2, 2] == 1.0

    def test_invalid_mode(self):
        rng = np.random.default_rng(11)
        g = random_graph(rng)
        with pytest.raises(ValueError):
            pr_nr_weights(g, "xx")


class TestEquivarianceAndStochasticity:
    @pytest.mark.parametrize("seed", range(5))
    def test_gcn_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n_nodes=8, feature_dim=3)
        stack = GcnStack([3, 4, 2], rng, dropout_rate=0.0)
        perm = rng.permutation(8)
        remap = np.empty(8, dtype=int)
        remap[perm] = np.arange(8)  # node i becomes remap[i]
        g2 = Graph(8, remap[g.edges], g.features[perm], g.labels[perm],
                   g.n_classes, {k: np.sort(remap[v]) for k, v in
                                 g.splits.items()})
        out1 = gcn_forward(stack, laplacian_weights(g), g.features).data
        out2 = gcn_forward(stack, laplacian_weights(g2), g2.features).data
        np.testing.assert_allclose(out2, out1[perm], atol=1e-9)

    def test_attention_weights_row_stochastic(self):
        from graphem.attention import soft_attention, stable_fusion
        rng = np.random.default_rng(12)
        g = random_graph(rng, n_nodes=9)
        p = build_p_network(g, 5, rng)
        labels = random_label_state(rng, g)
        for w in [soft_attention(g, None, g.features, p.attention).data,
                  stable_fusion(g, labels, g.features, p.attention),
                  pr_nr_weights(g, "pr"), pr_nr_weights(g, "nr")]:
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
