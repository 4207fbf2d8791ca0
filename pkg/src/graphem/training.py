"""Alternating-phase training of the two propagators.

The loop is: pretrain the feature propagator under degree-normalized
weights with an entropy sharpener, then alternate a label-propagation
phase (structure-regularized reconstruction of the current pseudo-labels)
with a feature-propagation phase (re-train the feature propagator under
fused stable weights against the label propagator's marginal
predictions). Final predictions always come from the feature propagator.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .attention import (LabelState, dense_edge_matrix, hard_attention_probs,
                        kl_bernoulli, sampled_fusion, soft_attention,
                        stable_fusion, structure_prior)
from .dataio import EpochMetric, ResultRecord
from .graphs import Graph, inter_class_ratio, laplacian_weights
from .models import (PNetwork, QNetwork, build_p_network, build_q_network,
                     p_forward, q_forward)
from .tensor import EPS, Adam, Tensor, as_tensor, dropout, \
    rowwise_softmax_masked


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; the message names the phase and epoch."""


@dataclass
class Hyperparams:
    entropy_weight: float = 0.5          # sharpening pressure on predictions
    unlabeled_loss_weight: float = 0.8   # pseudo-target term in the E phase
    pretrain_entropy_weight: float = 0.5
    temperature: float = 1.0
    structure_samples: int = 5           # samples for the marginal targets
    reweight_samples: int = 0            # 0 = stable fusion weights
    lr: float = 0.05
    weight_decay_first: float = 5e-4
    weight_decay_later: float = 5e-4
    dropout_hidden: float = 0.5
    dropout_attention: float = 0.2
    epochs_per_phase: int = 200
    pretrain_epochs: int = 200
    em_iterations: int = 2
    hidden_dim: int = 32
    proj_dim: int | None = None
    hard_sampling: bool = True
    use_hard: bool = True
    use_soft: bool = True
    seed: int = 0

    @classmethod
    def citation(cls, **overrides) -> "Hyperparams":
        """Defaults used for the citation-scale datasets."""
        base = dict(hidden_dim=16, weight_decay_first=5e-4,
                    weight_decay_later=1e-4)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        checks = [
            ("entropy_weight", self.entropy_weight >= 0),
            ("unlabeled_loss_weight", self.unlabeled_loss_weight >= 0),
            ("pretrain_entropy_weight", self.pretrain_entropy_weight >= 0),
            ("temperature", self.temperature > 0),
            ("structure_samples", self.structure_samples >= 1),
            ("reweight_samples", self.reweight_samples >= 0),
            ("lr", self.lr > 0),
            ("epochs_per_phase", self.epochs_per_phase >= 1),
            ("pretrain_epochs", self.pretrain_epochs >= 1),
            ("em_iterations", self.em_iterations >= 0),
            ("hidden_dim", self.hidden_dim >= 1),
            ("dropout_hidden", 0.0 <= self.dropout_hidden < 1.0),
            ("dropout_attention", 0.0 <= self.dropout_attention < 1.0),
            ("weight_decay_first", self.weight_decay_first >= 0),
            ("weight_decay_later", self.weight_decay_later >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid hyperparameter: {name}")

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainerState:
    q: QNetwork
    labels: LabelState
    q_weights: np.ndarray                 # aggregation Q currently runs under
    rng: np.random.Generator
    p: PNetwork | None = None
    prior: np.ndarray | None = None
    em_iter: int = 0
    phase: str = "pretrain"
    epoch: int = 0                        # global epoch counter
    history: list = field(default_factory=list)


def softmax_rows(logits: Tensor) -> Tensor:
    return rowwise_softmax_masked(logits, np.ones(logits.shape))


def _row_mask(n: int, ids: np.ndarray) -> np.ndarray:
    mask = np.zeros((n, 1))
    mask[np.asarray(ids, dtype=np.int64)] = 1.0
    return mask


def mean_cross_entropy(probs: Tensor, targets: np.ndarray,
                       row_mask: np.ndarray) -> Tensor:
    """Mean over masked rows of -sum_c target * log prob."""
    logp = probs.clamp(EPS, 1.0).log()
    per_row = -(Tensor(targets) * logp).sum(axis=1)
    total = (per_row * Tensor(row_mask)).sum()
    return total / float(row_mask.sum())


def mean_entropy(probs: Tensor, row_mask: np.ndarray) -> Tensor:
    """Mean over masked rows of the prediction entropy (natural log)."""
    logp = probs.clamp(EPS, 1.0).log()
    per_row = -(probs * logp).sum(axis=1)
    total = (per_row * Tensor(row_mask)).sum()
    return total / float(row_mask.sum())


def accuracy(logits: np.ndarray, labels: np.ndarray,
             ids: np.ndarray) -> float:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return float("nan")
    return float((logits[ids].argmax(axis=1) == labels[ids]).mean())


def _snapshot_params(params) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _restore_params(params, snap) -> None:
    for p, s in zip(params, snap):
        p.data = s.copy()


def _check_finite(value: float, phase: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{phase} epoch {epoch}: non-finite loss")


def _q_train_forward(q: QNetwork, agg_inputs: np.ndarray,
                     agg: np.ndarray, training: bool,
                     rng: np.random.Generator | None) -> Tensor:
    """Feature-propagator forward with the constant first aggregation cached.

    Matches gcn_forward(q.stack, agg, features) because the aggregation is
    fixed within a phase and the input carries no gradient.
    """
    stack = q.stack
    h = as_tensor(agg_inputs)
    last = len(stack.weights) - 1
    for idx, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        if idx > 0:
            h = as_tensor(agg) @ (h @ w) + b
        else:
            h = h @ w + b
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError(f"non-finite activation in layer {idx}")
        if idx != last:
            h = h.relu()
            if training and stack.dropout_rate > 0.0:
                h = dropout(h, stack.dropout_rate, rng, training)
    return h


def train_feature_phase(q: QNetwork, g: Graph, agg: np.ndarray,
                        hp: Hyperparams, rng: np.random.Generator,
                        epochs: int, weight_decay: float,
                        phase: str, history: list, epoch_offset: int,
                        entropy_weight: float = 0.0,
                        unlabeled_targets: np.ndarray | None = None,
                        unlabeled_loss_weight: float = 0.0,
                        track_test: bool = False,
                        select_best: bool = True) -> int:
    """One feature-propagation training phase with best-val selection.

    Loss = labeled cross-entropy, plus an optional entropy sharpener over
    unlabeled predictions, plus an optional weighted cross-entropy against
    fixed pseudo-targets on unlabeled nodes. Returns the next global epoch
    index; the propagator is left at its best-validation checkpoint
    (or at the final epoch when ``select_best`` is off).
    """
    n = g.n_nodes
    labeled = _row_mask(n, g.splits["train"])
    unlabeled_ids = np.setdiff1d(np.arange(n), g.splits["train"])
    unlabeled = _row_mask(n, unlabeled_ids)
    onehot = LabelState.from_graph(g).onehot
    agg_inputs = agg @ g.features

    optimizer = Adam(q.parameters(), hp.lr, weight_decay)
    best_val, best_snap = -1.0, _snapshot_params(q.parameters())
    for e in range(epochs):
        logits = _q_train_forward(q, agg_inputs, agg, True, rng)
        probs = softmax_rows(logits)
        loss = mean_cross_entropy(probs, onehot, labeled)
        if entropy_weight > 0.0 and unlabeled_ids.size:
            loss = loss + entropy_weight * mean_entropy(probs, unlabeled)
        if unlabeled_loss_weight > 0.0 and unlabeled_targets is not None \
                and unlabeled_ids.size:
            loss = loss + unlabeled_loss_weight * mean_cross_entropy(
                probs, unlabeled_targets, unlabeled)
        loss_value = loss.item()
        _check_finite(loss_value, phase, e)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        eval_logits = _q_train_forward(q, agg_inputs, agg, False, None).data
        val_acc = accuracy(eval_logits, g.labels, g.splits["val"]) \
            if "val" in g.splits and g.splits["val"].size else 0.0
        test_acc = accuracy(eval_logits, g.labels, g.splits["test"]) \
            if track_test else None
        history.append(EpochMetric(epoch_offset + e, loss_value,
                                   val_acc, test_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_snap = _snapshot_params(q.parameters())
    if select_best:
        _restore_params(q.parameters(), best_snap)
    return epoch_offset + epochs


def pretrain_q(g: Graph, q: QNetwork, hp: Hyperparams,
               rng: np.random.Generator) -> TrainerState:
    """Warm up the feature propagator and seed the pseudo-labels.

    Trains under degree-normalized weights on labeled cross-entropy plus
    the entropy sharpener, then initializes the label state from the
    propagator's predictions (labeled rows pinned to ground truth).
    """
    weights = laplacian_weights(g)
    state = TrainerState(q=q, labels=LabelState.from_graph(g),
                         q_weights=weights, rng=rng)
    state.epoch = train_feature_phase(
        q, g, weights, hp, rng, hp.pretrain_epochs, hp.weight_decay_first,
        "pretrain", state.history, 0,
        entropy_weight=hp.pretrain_entropy_weight)
    logits = q_forward(q, g, weights, training=False).data
    dist = softmax_rows(Tensor(logits)).data
    state.labels = state.labels.refreshed(dist)
    state.phase = "m"
    return state


def m_step(state: TrainerState, g: Graph, hp: Hyperparams) -> TrainerState:
    """Structure-regularized label propagation phase.

    Pseudo-labels are re-annotated by the feature propagator once at
    entry, the structure prior is rebuilt from them, and the label
    propagator is trained on reconstruction + structure KL + weighted
    prediction entropy against those fixed targets.
    """
    p, q = state.p, state.q
    logits = q_forward(q, g, state.q_weights, training=False).data
    state.labels = state.labels.refreshed(softmax_rows(Tensor(logits)).data)
    if p.use_hard:
        state.prior = structure_prior(g, state.labels)
    state.phase = "m"

    targets = state.labels.distributions
    all_rows = np.ones((g.n_nodes, 1))
    wd = hp.weight_decay_first if state.em_iter == 0 else \
        hp.weight_decay_later
    optimizer = Adam(p.parameters(), hp.lr, wd)
    best_val, best_snap = -1.0, _snapshot_params(p.parameters())
    for e in range(hp.epochs_per_phase):
        logits, att = p_forward(p, g, state.labels, state.rng,
                                training=True, hard_sampling=hp.hard_sampling)
        probs = softmax_rows(logits)
        loss = mean_cross_entropy(probs, targets, all_rows)
        if p.use_hard:
            loss = loss + kl_bernoulli(att.hard_probs, state.prior)
        if hp.entropy_weight > 0.0:
            loss = loss + hp.entropy_weight * mean_entropy(probs, all_rows)
        loss_value = loss.item()
        _check_finite(loss_value, f"m-step[{state.em_iter}]", e)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        val_acc = accuracy(logits.data, g.labels, g.splits["val"]) \
            if "val" in g.splits and g.splits["val"].size else 0.0
        state.history.append(
            EpochMetric(state.epoch + e, loss_value, val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_snap = _snapshot_params(p.parameters())
    _restore_params(p.parameters(), best_snap)
    state.epoch += hp.epochs_per_phase
    state.phase = "e"
    return state


def marginal_predictions(p: PNetwork, g: Graph, labels: LabelState,
                         n_samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Average label-propagator softmax over structure samples (eval mode)."""
    acc = np.zeros((g.n_nodes, g.n_classes))
    for _ in range(n_samples):
        logits, _ = p_forward(p, g, labels, rng, training=False,
                              hard_sampling=True)
        acc += softmax_rows(logits).data
    return acc / n_samples


def propagation_weights(p: PNetwork, g: Graph, labels: LabelState,
                        reweight_samples: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Aggregation weights handed to the feature propagator.

    Full model: stable fusion (or its Monte-Carlo variant when
    ``reweight_samples`` >= 1). Ablated variants drop the corresponding
    factor: without hard attention the soft weights over the original
    adjacency; without soft attention the hard probabilities alone,
    row-normalized with a unit self-loop.
    """
    if p.use_hard and p.use_soft:
        if reweight_samples >= 1:
            return sampled_fusion(g, labels, g.features, p.attention,
                                  reweight_samples, rng)
        return stable_fusion(g, labels, g.features, p.attention)
    if p.use_soft:
        return soft_attention(g, None, g.features, p.attention).data
    if p.use_hard:
        hard = hard_attention_probs(g, labels, p.attention)
        fused = dense_edge_matrix(g, hard, diag=np.ones(g.n_nodes))
        return fused / fused.sum(axis=1, keepdims=True)
    fused = g.adjacency() + np.eye(g.n_nodes)
    return fused / fused.sum(axis=1, keepdims=True)


def e_step(state: TrainerState, g: Graph, hp: Hyperparams) -> TrainerState:
    """Stable re-weighting and feature propagation phase.

    Targets are the label propagator's sample-averaged marginal; the
    pseudo-labels are refreshed from it; the feature propagator then
    trains under the fused weights on labeled cross-entropy plus the
    weighted pseudo-target term.
    """
    p, q = state.p, state.q
    marginal = marginal_predictions(p, g, state.labels,
                                    hp.structure_samples, state.rng)
    state.labels = state.labels.refreshed(marginal)
    weights = propagation_weights(p, g, state.labels, hp.reweight_samples,
                                  state.rng)
    state.q_weights = weights
    wd = hp.weight_decay_first if state.em_iter == 0 else \
        hp.weight_decay_later
    state.epoch = train_feature_phase(
        q, g, weights, hp, state.rng, hp.epochs_per_phase, wd,
        f"e-step[{state.em_iter}]", state.history, state.epoch,
        unlabeled_targets=marginal,
        unlabeled_loss_weight=hp.unlabeled_loss_weight)
    state.phase = "m"
    return state


@dataclass
class RunResult:
    p: PNetwork | None
    q: QNetwork
    state: TrainerState
    record: ResultRecord
    predictions: np.ndarray
    weights: np.ndarray
    test_accuracy: float


def run(g: Graph, hp: Hyperparams, experiment: str = "run") -> RunResult:
    """Full training: pretrain, then alternate the two phases.

    With zero alternations this is exactly the pretrained baseline. The
    reported predictions always come from the feature propagator under
    its final aggregation weights.
    """
    hp.validate()
    init_seed, train_seed = np.random.SeedSequence(hp.seed).spawn(2)
    rng_init = np.random.default_rng(init_seed)
    rng_train = np.random.default_rng(train_seed)

    p = build_p_network(g, hp.hidden_dim, rng_init, proj_dim=hp.proj_dim,
                        temperature=hp.temperature,
                        dropout_rate=hp.dropout_hidden,
                        attention_dropout=hp.dropout_attention,
                        use_hard=hp.use_hard, use_soft=hp.use_soft)
    q = build_q_network(g, hp.hidden_dim, rng_init, hp.dropout_hidden)

    state = pretrain_q(g, q, hp, rng_train)
    state.p = p
    for it in range(hp.em_iterations):
        state.em_iter = it
        m_step(state, g, hp)
        e_step(state, g, hp)

    logits = q_forward(q, g, state.q_weights, training=False).data
    predictions = logits.argmax(axis=1)
    test_acc = accuracy(logits, g.labels, g.splits["test"]) \
        if "test" in g.splits and g.splits["test"].size else None
    record = ResultRecord(
        experiment=experiment, seed=hp.seed, hyperparams=hp.snapshot(),
        history=state.history, test_accuracy=test_acc,
        derived={"inter_class_ratio": inter_class_ratio(g)}
        if g.n_edges else {})
    return RunResult(p=p, q=q, state=state, record=record,
                     predictions=predictions, weights=state.q_weights,
                     test_accuracy=float("nan") if test_acc is None
                     else test_acc)


def train_gcn(g: Graph, hp: Hyperparams, agg: np.ndarray | None = None,
              experiment: str = "gcn",
              track_test: bool = False) -> RunResult:
    """Train a plain feature propagator under fixed aggregation weights.

    This is the pretraining path with the entropy sharpener switched off;
    it serves as the baseline and as the re-training harness for frozen
    learned weights.
    """
    hp.validate()
    init_seed, train_seed = np.random.SeedSequence(hp.seed).spawn(2)
    rng_init = np.random.default_rng(init_seed)
    rng_train = np.random.default_rng(train_seed)
    if agg is None:
        agg = laplacian_weights(g)

    q = build_q_network(g, hp.hidden_dim, rng_init, hp.dropout_hidden)
    history: list = []
    train_feature_phase(q, g, agg, hp, rng_train, hp.pretrain_epochs,
                        hp.weight_decay_first, "gcn", history, 0,
                        track_test=track_test)
    logits = q_forward(q, g, agg, training=False).data
    predictions = logits.argmax(axis=1)
    test_acc = accuracy(logits, g.labels, g.splits["test"]) \
        if "test" in g.splits and g.splits["test"].size else None
    state = TrainerState(q=q, labels=LabelState.from_graph(g),
                         q_weights=agg, rng=rng_train,
                         history=history, phase="done")
    record = ResultRecord(
        experiment=experiment, seed=hp.seed, hyperparams=hp.snapshot(),
        history=history, test_accuracy=test_acc,
        derived={"inter_class_ratio": inter_class_ratio(g)}
        if g.n_edges else {})
    return RunResult(p=None, q=q, state=state, record=record,
                     predictions=predictions, weights=agg,
                     test_accuracy=float("nan") if test_acc is None
                     else test_acc)
