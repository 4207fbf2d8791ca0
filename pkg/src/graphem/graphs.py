"""Graph topology, features, labels, splits, and structure analytics.

Graphs are undirected and simple: the edge list stores each pair once with
i < j, never a self-loop. Aggregation code adds self-loops logically.
Instances are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UndefinedRatioError(ValueError):
    """Inter-class ratio requested on a graph with no edges."""


class InfeasibleTargetError(ValueError):
    """Requested inter-class ratio cannot be reached on this graph."""


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: np.ndarray            # (E, 2) int64, i < j, unique
    features: np.ndarray         # (n_nodes, d) float64
    labels: np.ndarray           # (n_nodes,) int64 in [0, n_classes)
    n_classes: int
    splits: dict                 # {"train": ids, "val": ids, "test": ids}
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            if np.any(lo == hi):
                raise ValueError("self-loops are not stored")
            edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise ValueError("edge endpoint out of range")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(
            self, "features",
            np.ascontiguousarray(self.features, dtype=np.float64))
        object.__setattr__(
            self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.shape[0] != self.n_nodes:
            raise ValueError("feature row count != n_nodes")
        if self.labels.shape != (self.n_nodes,):
            raise ValueError("labels must be one per node")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

        splits = {k: np.asarray(v, dtype=np.int64)
                  for k, v in self.splits.items()}
        seen: set[int] = set()
        for name, ids in splits.items():
            overlap = seen.intersection(ids.tolist())
            if overlap:
                raise ValueError(f"split '{name}' overlaps another split")
            seen.update(ids.tolist())
        if "train" not in splits or splits["train"].size == 0:
            raise ValueError("train split must be nonempty")
        object.__setattr__(self, "splits", splits)

        # CSR mirror of the symmetric closure, for neighbor analytics.
        both = np.concatenate([edges, edges[:, ::-1]]) if edges.size else \
            np.empty((0, 2), dtype=np.int64)
        order = np.lexsort((both[:, 1], both[:, 0])) if both.size else []
        both = both[order] if both.size else both
        counts = np.bincount(both[:, 0], minlength=self.n_nodes) if both.size \
            else np.zeros(self.n_nodes, dtype=np.int64)
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices",
                           both[:, 1].copy() if both.size else
                           np.empty(0, dtype=np.int64))
        for arr in (self.edges, self.features, self.labels,
                    self.indptr, self.indices):
            arr.setflags(write=False)
        for ids in splits.values():
            ids.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency with a zero diagonal."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        if self.edges.size:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def with_edges(self, edges: np.ndarray) -> "Graph":
        """Same nodes/features/labels/splits over a different edge set."""
        return Graph(self.n_nodes, edges, self.features, self.labels,
                     self.n_classes, self.splits)


def laplacian_weights(g: Graph) -> np.ndarray:
    """Dense degree-normalized aggregation weights with self-loops.

    Entry (i, j) is 1/sqrt((deg_i + 1)(deg_j + 1)) on edges and the
    diagonal, zero elsewhere; symmetric and strictly positive on support.
    """
    aug = g.degrees() + 1.0
    inv = 1.0 / np.sqrt(np.outer(aug, aug))
    w = g.adjacency() * inv
    np.fill_diagonal(w, np.diagonal(inv))
    return w


def inter_class_ratio(g: Graph, labels: np.ndarray | None = None) -> float:
    """Fraction of edges whose endpoints carry different labels."""
    labels = g.labels if labels is None else np.asarray(labels)
    if g.n_edges == 0:
        raise UndefinedRatioError("graph has no edges")
    differ = labels[g.edges[:, 0]] != labels[g.edges[:, 1]]
    return float(differ.sum()) / g.n_edges


def oracle_graph(g: Graph) -> Graph:
    """Drop every inter-class edge, keeping everything else fixed."""
    keep = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return g.with_edges(g.edges[keep])


def perturb_inter_class(g: Graph, target_ratio: float,
                        rng_seed: int, tolerance: float = 0.02) -> Graph:
    """Return a graph whose inter-class ratio is within tolerance of target.

    Lowering the ratio removes randomly chosen inter-class edges; raising
    it rewires intra-class edges onto inter-class non-edges so the edge
    count is preserved. Deterministic under the seed.
    """
    if not 0.0 <= target_ratio <= 1.0:
        raise ValueError("target_ratio must be in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    current = inter_class_ratio(g)
    if abs(current - target_ratio) <= tolerance:
        return g
    if target_ratio == 0.0:
        return oracle_graph(g)

    labels = g.labels
    edges = [tuple(e) for e in g.edges.tolist()]
    edge_set = set(edges)

    def ratio_of(edge_list):
        inter = sum(1 for i, j in edge_list if labels[i] != labels[j])
        return inter / len(edge_list) if edge_list else float("nan")

    if target_ratio < current:
        inter_edges = [e for e in edges if labels[e[0]] != labels[e[1]]]
        rng.shuffle(inter_edges)
        removable = set()
        n_edges, n_inter = len(edges), len(inter_edges)
        for e in inter_edges:
            if n_inter / n_edges <= target_ratio:
                break
            removable.add(e)
            n_edges -= 1
            n_inter -= 1
        new_edges = [e for e in edges if e not in removable]
        achieved = ratio_of(new_edges)
        if abs(achieved - target_ratio) > tolerance:
            raise InfeasibleTargetError(
                f"closest reachable ratio {achieved:.4f} misses "
                f"target {target_ratio:.4f}")
        return g.with_edges(np.array(new_edges, dtype=np.int64))

    # Raising the ratio: swap intra-class edges for new inter-class ones.
    intra = [e for e in edges if labels[e[0]] == labels[e[1]]]
    rng.shuffle(intra)
    n_edges = len(edges)
    n_inter = n_edges - len(intra)
    max_tries = 50 * n_edges + 1000
    while n_inter / n_edges < target_ratio and intra:
        victim = intra.pop()
        added = None
        for _ in range(max_tries):
            i = int(rng.integers(g.n_nodes))
            j = int(rng.integers(g.n_nodes))
            if i == j or labels[i] == labels[j]:
                continue
            pair = (min(i, j), max(i, j))
            if pair in edge_set:
                continue
            added = pair
            break
        if added is None:
            raise InfeasibleTargetError("no inter-class pair left to add")
        edge_set.remove(victim)
        edge_set.add(added)
        n_inter += 1
    achieved = n_inter / n_edges
    if abs(achieved - target_ratio) > tolerance:
        raise InfeasibleTargetError(
            f"closest reachable ratio {achieved:.4f} misses "
            f"target {target_ratio:.4f}")
    new_edges = np.array(sorted(edge_set), dtype=np.int64)
    return g.with_edges(new_edges)


def generate_sbm(blocks: int, nodes_per_block: int, p_in: float,
                 p_out: float, feature_dim: int, feature_noise: float,
                 rng_seed: int, train_per_class: int = 20,
                 val_per_class: int = 30) -> Graph:
    """Stochastic block model with orthogonal class-mean features.

    Node features are the class basis vector e_k plus isotropic Gaussian
    noise; labels are block ids. Splits mirror the sparse-label setting:
    a few labeled nodes per class for training, a small validation pool,
    everything else test.
    """
    if blocks < 2:
        raise ValueError("need at least two blocks")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("edge probabilities must be in [0, 1]")
    if feature_dim < blocks:
        raise ValueError("feature_dim must be >= blocks for orthogonal means")
    per_class = train_per_class + val_per_class
    if per_class > nodes_per_block:
        raise ValueError("train + val per class exceeds block size")

    rng = np.random.default_rng(rng_seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)

    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draws = rng.random((n, n))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    hit = (draws < prob) & upper
    edges = np.argwhere(hit).astype(np.int64)

    means = np.eye(feature_dim)[labels]
    features = means + feature_noise * rng.standard_normal((n, feature_dim))

    train, val, test = [], [], []
    for c in range(blocks):
        ids = np.flatnonzero(labels == c)
        ids = rng.permutation(ids)
        train.extend(ids[:train_per_class])
        val.extend(ids[train_per_class:per_class])
        test.extend(ids[per_class:])
    splits = {"train": np.sort(np.array(train)),
              "val": np.sort(np.array(val)),
              "test": np.sort(np.array(test))}
    return Graph(n, edges, features, labels, blocks, splits)
