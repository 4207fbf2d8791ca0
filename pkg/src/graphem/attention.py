"""Decoupled edge attention: label-driven structure and feature-driven weights.

Hard attention turns pairwise label-distribution similarity into per-edge
existence probabilities; a Bernoulli prior built from label cosine
similarity regularizes them through a KL term; binary-concrete sampling
draws differentiable structure samples; soft attention assigns aggregation
weights from feature dissimilarity over whichever support it is given.
The stable fusion multiplies hard probabilities into the soft weights so
downstream propagation can skip sampling altogether.

Per-edge quantities (probabilities, priors, samples) are (E, 1) tensors
aligned row-for-row with ``g.edges``; one value covers both directions of
an undirected edge, which makes symmetry structural. Dense (n, n)
matrices appear only where aggregation needs them, with weight exactly 0
off the support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph
from .tensor import (EPS, Tensor, as_tensor, embed_diag, gather_rows,
                     scatter_add_rows, scatter_edges,
                     straight_through_threshold)


class SupportMismatchError(ValueError):
    """Posterior and prior edge probabilities live on different supports."""


@dataclass
class LabelState:
    """Row-stochastic class distributions with pinned ground-truth rows."""

    distributions: np.ndarray    # (n, C), rows sum to 1
    labeled_mask: np.ndarray     # (n,) bool
    onehot: np.ndarray           # (n, C), ground truth where labeled

    @classmethod
    def from_graph(cls, g: Graph) -> "LabelState":
        onehot = np.zeros((g.n_nodes, g.n_classes))
        onehot[np.arange(g.n_nodes), g.labels] = 1.0
        labeled = np.zeros(g.n_nodes, dtype=bool)
        labeled[g.splits["train"]] = True
        dist = np.full((g.n_nodes, g.n_classes), 1.0 / g.n_classes)
        dist[labeled] = onehot[labeled]
        return cls(dist, labeled, onehot)

    def refreshed(self, new_distributions: np.ndarray) -> "LabelState":
        """New pseudo-labels for unlabeled nodes; labeled rows stay truth."""
        dist = np.array(new_distributions, dtype=np.float64)
        dist = dist / dist.sum(axis=1, keepdims=True)
        dist[self.labeled_mask] = self.onehot[self.labeled_mask]
        return LabelState(dist, self.labeled_mask, self.onehot)

    def validate(self) -> None:
        if np.any(self.distributions < 0):
            raise ValueError("negative label probability")
        if not np.allclose(self.distributions.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("label rows must sum to 1")


@dataclass
class AttentionParams:
    """Trainable pieces of both attention stages."""

    metric: Tensor      # (C, C) bilinear label-similarity metric
    proj: Tensor        # (d, m) feature projection
    scale: Tensor       # (1, m) per-dimension re-scaling
    temperature: float = 1.0   # concrete-relaxation sharpness

    def parameters(self) -> list[Tensor]:
        return [self.metric, self.proj, self.scale]


@dataclass
class AttentionState:
    """Everything one encoder/decoder pass produced about the edges."""

    hard_probs: Tensor           # (E, 1) existence probabilities
    hard_sample: Tensor          # (E, 1) sampled structure (binary or relaxed)
    soft_weights: Tensor         # (n, n) row-normalized aggregation weights


def _dist_of(labels) -> np.ndarray:
    return labels.distributions if isinstance(labels, LabelState) else \
        np.asarray(labels, dtype=np.float64)


def hard_attention_probs(g: Graph, labels: LabelState | np.ndarray,
                         params: AttentionParams) -> Tensor:
    """Per-edge existence probabilities from bilinear label similarity.

    The two directed scores of each edge are averaged so one probability
    covers the undirected pair; values are clamped to [EPS, 1 - EPS].
    Non-edges carry no probability at all: they are simply absent.
    """
    y = _dist_of(labels)
    src, dst = g.edges[:, 0], g.edges[:, 1]
    yq = Tensor(y) @ params.metric
    fwd = (gather_rows(yq, src) * Tensor(y[dst])).sum(axis=1)
    bwd = (gather_rows(yq, dst) * Tensor(y[src])).sum(axis=1)
    sym = (fwd + bwd) * 0.5
    return sym.sigmoid().clamp(EPS, 1.0 - EPS)


def structure_prior(g: Graph, labels: LabelState | np.ndarray) -> np.ndarray:
    """Bernoulli edge prior: cosine similarity of the label distributions.

    Nonnegative row-stochastic rows keep the cosine in [0, 1]; values are
    clamped to [EPS, 1 - EPS]. Shape (E, 1), aligned with g.edges.
    """
    dist = _dist_of(labels)
    norms = np.sqrt((dist * dist).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = dist / safe[:, None]
    cos = (unit[g.edges[:, 0]] * unit[g.edges[:, 1]]).sum(axis=1)
    return np.clip(cos, EPS, 1.0 - EPS).reshape(-1, 1)


def kl_bernoulli(posterior: Tensor | np.ndarray, prior: np.ndarray):
    """Sum over edges of KL(Bernoulli(q) || Bernoulli(p)).

    Inputs are aligned (E, 1) vectors clamped inside (0, 1). Returns a
    Tensor when the posterior is one, else a float.
    """
    q_data = posterior.data if isinstance(posterior, Tensor) else \
        np.asarray(posterior, dtype=np.float64).reshape(-1, 1)
    p = np.asarray(prior, dtype=np.float64).reshape(-1, 1)
    if q_data.shape != p.shape:
        raise SupportMismatchError(
            f"posterior has {q_data.shape[0]} edges, prior {p.shape[0]}")
    if q_data.size and (q_data.min() <= 0 or q_data.max() >= 1
                        or p.min() <= 0 or p.max() >= 1):
        raise SupportMismatchError(
            "edge probabilities must be clamped inside (0, 1)")
    if isinstance(posterior, Tensor):
        q = posterior
        term = q * (q / Tensor(p)).log() \
            + (1.0 - q) * ((1.0 - q) / Tensor(1.0 - p)).log()
        return term.sum()
    q = q_data
    term = q * np.log(q / p) + (1.0 - q) * np.log((1.0 - q) / (1.0 - p))
    return float(term.sum())


def gumbel_sample_structure(probs: Tensor | np.ndarray, temperature: float,
                            rng: np.random.Generator | int,
                            hard: bool = True) -> Tensor:
    """Differentiable per-edge structure sample from Bernoulli parameters.

    Each edge is relaxed as a two-category concrete variable driven by one
    logistic noise draw; the result is the exist-coordinate in (0, 1).
    With ``hard`` the forward value is thresholded at 0.5 (which makes the
    draw exactly Bernoulli(p)) and the gradient flows through the relaxed
    value.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    probs = as_tensor(probs)
    u = np.clip(rng.random(probs.shape), EPS, 1.0 - EPS)
    noise = np.log(u) - np.log1p(-u)

    q = probs.clamp(EPS, 1.0 - EPS)
    logits = q.log() - (1.0 - q).log()
    relaxed = ((logits + Tensor(noise)) * (1.0 / temperature)).sigmoid()
    if hard:
        return straight_through_threshold(relaxed, 0.5)
    return relaxed


def _projected_units(features: np.ndarray, params: AttentionParams) -> Tensor:
    """Unit-normalized re-scaled projections; all-zero rows stay zero."""
    h = (Tensor(features) @ params.proj).relu() * params.scale
    sq = (h * h).sum(axis=1)
    norms = (sq + EPS * EPS).sqrt()
    return h / norms


def _edge_masses(g: Graph, features: np.ndarray, params: AttentionParams
                 ) -> tuple[Tensor, Tensor]:
    """Unnormalized soft-attention mass per edge and per self-loop.

    The per-edge mass is exp of the feature dissimilarity (negative
    cosine); it is symmetric, so one value serves both directions.
    """
    unit = _projected_units(features, params)
    src, dst = g.edges[:, 0], g.edges[:, 1]
    cos_e = (gather_rows(unit, src) * gather_rows(unit, dst)).sum(axis=1)
    self_cos = (unit * unit).sum(axis=1)
    return (-cos_e).exp(), (-self_cos).exp()


def _assemble_weights(g: Graph, edge_mass: Tensor, self_mass: Tensor
                      ) -> Tensor:
    """Scatter edge masses into a dense row-normalized weight matrix."""
    src, dst = g.edges[:, 0], g.edges[:, 1]
    n = g.n_nodes
    den = self_mass \
        + scatter_add_rows(edge_mass, src, n) \
        + scatter_add_rows(edge_mass, dst, n)
    dense = scatter_edges(edge_mass, src, dst, n) + embed_diag(self_mass)
    return dense / den


def soft_attention(g: Graph, support: Tensor | np.ndarray | None,
                   features: np.ndarray, params: AttentionParams,
                   attention_dropout: float = 0.0,
                   rng: np.random.Generator | None = None,
                   training: bool = False) -> Tensor:
    """Row-normalized aggregation weights from feature dissimilarity.

    ``support`` scales each edge's mass: None (or all ones) keeps the
    whole original edge set, a (relaxed) structure sample restricts or
    reweights it. The self-loop always participates with factor 1, so no
    row can empty out. Attention dropout removes whole edges during
    training; the normalization re-balances the survivors.
    """
    edge_mass, self_mass = _edge_masses(g, features, params)
    if support is not None:
        edge_mass = edge_mass * as_tensor(support)
    if training and attention_dropout > 0.0:
        if rng is None:
            raise ValueError("attention dropout needs an rng")
        keep = (rng.random((g.n_edges, 1)) >= attention_dropout).astype(float)
        edge_mass = edge_mass * Tensor(keep)
    return _assemble_weights(g, edge_mass, self_mass)


def stable_fusion(g: Graph, labels: LabelState, features: np.ndarray,
                  params: AttentionParams,
                  hard_probs: np.ndarray | None = None) -> np.ndarray:
    """Sampling-free propagation weights: hard probabilities times soft mass.

    Soft attention runs over the original edge set; the hard factor is 1
    on self-loops; rows are normalized to sum 1. When every hard
    probability is 1 this reproduces plain soft attention exactly.
    ``hard_probs`` overrides the label-derived probabilities (one value
    per edge), mainly for diagnostics and ablations.
    """
    if hard_probs is None:
        hard = hard_attention_probs(g, labels, params)
    else:
        hard = Tensor(np.asarray(hard_probs, dtype=np.float64)
                      .reshape(-1, 1))
    edge_mass, self_mass = _edge_masses(g, features, params)
    return _assemble_weights(g, edge_mass * hard, self_mass).data


def sampled_fusion(g: Graph, labels: LabelState, features: np.ndarray,
                   params: AttentionParams, n_samples: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo counterpart of stable_fusion.

    The hard factor is the average of ``n_samples`` binary structure
    samples instead of the exact probability; as the sample count grows
    this converges to the stable weights.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    probs = hard_attention_probs(g, labels, params)
    acc = np.zeros((g.n_edges, 1))
    for _ in range(n_samples):
        acc += gumbel_sample_structure(probs, params.temperature, rng,
                                       hard=True).data
    edge_mass, self_mass = _edge_masses(g, features, params)
    return _assemble_weights(g, edge_mass * Tensor(acc / n_samples),
                             self_mass).data


def dense_edge_matrix(g: Graph, values: Tensor | np.ndarray,
                      diag: np.ndarray | None = None) -> np.ndarray:
    """Spread per-edge values into a dense symmetric (n, n) array."""
    vals = values.data if isinstance(values, Tensor) else \
        np.asarray(values, dtype=np.float64)
    vals = vals.reshape(-1)
    dense = np.zeros((g.n_nodes, g.n_nodes))
    dense[g.edges[:, 0], g.edges[:, 1]] = vals
    dense[g.edges[:, 1], g.edges[:, 0]] = vals
    if diag is not None:
        np.fill_diagonal(dense, np.asarray(diag).reshape(-1))
    return dense


def connectivity_strength(weights: np.ndarray, labels: np.ndarray,
                          n_classes: int) -> tuple[np.ndarray, float]:
    """Mean edge weight per ordered class pair, plus diagonal concentration.

    Entry (a, b) averages the nonzero off-diagonal weights between class-a
    and class-b endpoints (then the matrix is symmetrized); pairs with no
    edges stay 0. The ratio is diag sum over off-diagonal sum of the mean
    matrix, +inf when the off-diagonal is empty.
    """
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n = w.shape[0]
    offdiag = ~np.eye(n, dtype=bool)
    live = (w != 0) & offdiag

    sums = np.zeros((n_classes, n_classes))
    counts = np.zeros((n_classes, n_classes))
    rows, cols = np.nonzero(live)
    np.add.at(sums, (labels[rows], labels[cols]), w[rows, cols])
    np.add.at(counts, (labels[rows], labels[cols]), 1.0)
    means = np.divide(sums, counts, out=np.zeros_like(sums),
                      where=counts > 0)
    means = 0.5 * (means + means.T)

    diag = float(np.trace(means))
    off = float(means.sum() - diag)
    ratio = float("inf") if off == 0 else diag / off
    return means, ratio


def weight_mass_ratio(weights: np.ndarray, labels: np.ndarray) -> float:
    """Total intra-class weight over total inter-class weight (diag excluded)."""
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels)
    offdiag = ~np.eye(w.shape[0], dtype=bool)
    same = labels[:, None] == labels[None, :]
    intra = float(w[offdiag & same].sum())
    inter = float(w[offdiag & ~same].sum())
    return float("inf") if inter == 0 else intra / inter


def export_edge_weights(weights: np.ndarray, path) -> None:
    """Write nonzero entries of a dense weight matrix as i,j,weight CSV."""
    w = np.asarray(weights)
    rows, cols = np.nonzero(w)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("i,j,weight\n")
        for i, j in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{i},{j},{float(w[i, j])!r}\n")
