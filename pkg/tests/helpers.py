"""Shared test utilities: finite differences and tiny random graphs."""

import numpy as np

from graphem.graphs import Graph


def numerical_gradient(loss_fn, param, h=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. one Tensor's data."""
    data = param.data
    grad = np.zeros_like(data)
    for idx in np.ndindex(*data.shape):
        orig = data[idx]
        data[idx] = orig + h
        f_plus = loss_fn()
        data[idx] = orig - h
        f_minus = loss_fn()
        data[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7, label=""):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    tol = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    if not np.all(err <= tol):
        worst = np.unravel_index(np.argmax(err - tol), err.shape)
        raise AssertionError(
            f"gradient mismatch {label} at {worst}: "
            f"analytic={analytic[worst]!r} numeric={numeric[worst]!r}")


def check_tensor_grads(loss_builder, params, rtol=1e-4, atol=1e-7):
    """Compare backward() grads with finite differences for each param."""
    loss = loss_builder()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    for i, p in enumerate(params):
        numeric = numerical_gradient(lambda: loss_builder().item(), p)
        assert_grad_close(analytic[i], numeric, rtol, atol, label=f"param{i}")


def random_graph(rng, n_nodes=6, feature_dim=5, n_classes=3,
                 edge_prob=0.5, ensure_edges=True):
    """Small random graph with random features/labels and a 3-way split."""
    while True:
        upper = np.triu(rng.random((n_nodes, n_nodes)) < edge_prob, k=1)
        edges = np.argwhere(upper)
        if edges.shape[0] > 0 or not ensure_edges:
            break
    features = rng.standard_normal((n_nodes, feature_dim))
    labels = rng.integers(0, n_classes, size=n_nodes)
    perm = rng.permutation(n_nodes)
    n_train = max(1, n_nodes // 3)
    n_val = max(1, n_nodes // 3)
    splits = {"train": np.sort(perm[:n_train]),
              "val": np.sort(perm[n_train:n_train + n_val]),
              "test": np.sort(perm[n_train + n_val:])}
    return Graph(n_nodes, edges, features, labels, n_classes, splits)


def random_label_state(rng, g):
    """Row-stochastic pseudo-labels with labeled rows pinned to truth."""
    from graphem.attention import LabelState
    base = LabelState.from_graph(g)
    raw = rng.random((g.n_nodes, g.n_classes)) + 0.05
    return base.refreshed(raw / raw.sum(axis=1, keepdims=True))
