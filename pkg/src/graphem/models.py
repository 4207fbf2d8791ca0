"""GCN stacks and the two propagators built on top of them.

The label propagator (P) runs the full encode/sample/decode pipeline:
hard attention on label distributions, a structure sample, soft attention
on features over that sample, then a GCN over the concatenated
labels-and-features input. The feature propagator (Q) is a plain GCN over
features under whatever aggregation weights it is handed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (AttentionParams, AttentionState, LabelState,
                        gumbel_sample_structure, hard_attention_probs,
                        soft_attention)
from .graphs import Graph
from .tensor import (Tensor, as_tensor, concat_cols, dropout,
                     scatter_add_rows, scatter_edges)


def kaiming_uniform(rows: int, cols: int,
                    rng: np.random.Generator) -> np.ndarray:
    """He-style uniform init, fan-in mode: U(-sqrt(6/fan_in), +)."""
    bound = np.sqrt(6.0 / rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


class GcnStack:
    """A chain of aggregate-then-transform layers.

    Hidden layers use ReLU and optional dropout on their activations; the
    final layer emits one logit per class. Callers apply softmax.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator,
                 dropout_rate: float = 0.5):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.dropout_rate = dropout_rate
        self.weights = [Tensor(kaiming_uniform(d_in, d_out, rng),
                               requires_grad=True)
                        for d_in, d_out in zip(dims[:-1], dims[1:])]
        self.biases = [Tensor(np.zeros((1, d_out)), requires_grad=True)
                       for d_out in dims[1:]]

    def parameters(self) -> list[Tensor]:
        return self.weights + self.biases


def gcn_forward(stack: GcnStack, agg_weights: Tensor | np.ndarray,
                inputs: Tensor | np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Propagate inputs through the stack under fixed aggregation weights.

    Each layer aggregates every node's neighborhood (self-loop included in
    the weights) and then applies its affine transform. Raises on the
    first non-finite activation, naming the layer.
    """
    agg = as_tensor(agg_weights)
    h = as_tensor(inputs)
    last = len(stack.weights) - 1
    for idx, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        # transform before aggregating: same map, far cheaper when the
        # feature width exceeds the hidden width
        h = agg @ (h @ w) + b
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError(f"non-finite activation in layer {idx}")
        if idx != last:
            h = h.relu()
            if training and stack.dropout_rate > 0.0:
                if rng is None:
                    raise ValueError("training dropout needs an rng")
                h = dropout(h, stack.dropout_rate, rng, training)
    return h


@dataclass
class PNetwork:
    """Label propagator: decoupled attention feeding a GCN over [labels || X].

    ``use_hard``/``use_soft`` switch off either attention stage for
    ablations: without hard attention the original adjacency is kept and
    no structure is sampled; without soft attention the aggregation is
    uniform over the sampled support.
    """

    attention: AttentionParams
    stack: GcnStack
    use_hard: bool = True
    use_soft: bool = True
    attention_dropout: float = 0.2

    def parameters(self) -> list[Tensor]:
        return self.attention.parameters() + self.stack.parameters()


@dataclass
class QNetwork:
    """Feature propagator: a GCN over the raw feature matrix."""

    stack: GcnStack

    def parameters(self) -> list[Tensor]:
        return self.stack.parameters()


def build_p_network(g: Graph, hidden_dim: int, rng: np.random.Generator,
                    proj_dim: int | None = None, temperature: float = 1.0,
                    dropout_rate: float = 0.5, attention_dropout: float = 0.2,
                    use_hard: bool = True, use_soft: bool = True) -> PNetwork:
    m = hidden_dim if proj_dim is None else proj_dim
    params = AttentionParams(
        metric=Tensor(kaiming_uniform(g.n_classes, g.n_classes, rng),
                      requires_grad=True),
        proj=Tensor(kaiming_uniform(g.feature_dim, m, rng),
                    requires_grad=True),
        scale=Tensor(np.ones((1, m)), requires_grad=True),
        temperature=temperature)
    stack = GcnStack([g.n_classes + g.feature_dim, hidden_dim, g.n_classes],
                     rng, dropout_rate)
    return PNetwork(params, stack, use_hard, use_soft, attention_dropout)


def build_q_network(g: Graph, hidden_dim: int, rng: np.random.Generator,
                    dropout_rate: float = 0.5) -> QNetwork:
    return QNetwork(GcnStack([g.feature_dim, hidden_dim, g.n_classes],
                             rng, dropout_rate))


def p_forward(p: PNetwork, g: Graph, labels: LabelState,
              rng: np.random.Generator, training: bool = False,
              hard_sampling: bool = True) -> tuple[Tensor, AttentionState]:
    """Run encoder, structure sample, and decoder; return logits and state.

    The rng is consumed in a fixed order: structure noise, attention
    dropout, then hidden dropout layer by layer. Gradients flow through
    the relaxed sample (straight-through when ``hard_sampling``).
    """
    if p.use_hard:
        probs = hard_attention_probs(g, labels, p.attention)
        sample = gumbel_sample_structure(probs, p.attention.temperature, rng,
                                         hard=hard_sampling)
    else:
        ones = Tensor(np.ones((g.n_edges, 1)))
        probs, sample = ones, ones

    if p.use_soft:
        weights = soft_attention(g, sample, g.features, p.attention,
                                 attention_dropout=p.attention_dropout,
                                 rng=rng, training=training)
    else:
        n, (src, dst) = g.n_nodes, (g.edges[:, 0], g.edges[:, 1])
        den = 1.0 + scatter_add_rows(sample, src, n) \
            + scatter_add_rows(sample, dst, n)
        dense = scatter_edges(sample, src, dst, n) + Tensor(np.eye(n))
        weights = dense / den

    inputs = concat_cols(Tensor(labels.distributions), Tensor(g.features))
    logits = gcn_forward(p.stack, weights, inputs, training, rng)
    return logits, AttentionState(hard_probs=probs, hard_sample=sample,
                                  soft_weights=weights)


def q_forward(q: QNetwork, g: Graph, agg_weights: Tensor | np.ndarray,
              training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """Class logits from the feature propagator under the given weights."""
    return gcn_forward(q.stack, agg_weights, g.features, training, rng)


def pr_nr_weights(g: Graph, mode: str) -> np.ndarray:
    """Fixed attention baselines from raw-feature cosine similarity.

    ``pr`` weighs similar neighbors up (scores +cos), ``nr`` weighs them
    down (scores -cos); both are row-softmaxed over the neighborhood plus
    a self-loop whose cosine is taken as 1.
    """
    if mode not in ("pr", "nr"):
        raise ValueError("mode must be 'pr' or 'nr'")
    x = g.features
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    cos = unit @ unit.T
    np.fill_diagonal(cos, 1.0)

    scores = cos if mode == "pr" else -cos
    mask = g.adjacency() + np.eye(g.n_nodes)
    shifted = scores - np.max(np.where(mask > 0, scores, -np.inf),
                              axis=1, keepdims=True)
    weights = np.exp(np.where(mask > 0, shifted, 0.0)) * mask
    return weights / weights.sum(axis=1, keepdims=True)
