"""Dataset ingestion and result persistence.

Two on-disk graph forms are supported:

* a JSON bundle: ``{n_nodes, C, edges, features, labels, splits}``;
* separate files named by a manifest: a plain-text edge list
  (one ``i j`` pair per line, 0-indexed) plus JSON features/labels/splits.

Results go to a long-format CSV (experiment,seed,epoch,split,metric,value)
with a JSON sidecar holding the full records; the sidecar round-trips
losslessly. All files are UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .graphs import Graph


class IntegrityError(ValueError):
    """Loaded dataset disagrees with the manifest's expected statistics."""


@dataclass
class DatasetManifest:
    name: str
    bundle: str | None = None
    edges: str | None = None
    features: str | None = None
    labels: str | None = None
    splits: str | None = None
    expected_stats: dict | None = None

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        base = Path(path).parent

        def resolve(key):
            value = raw.get(key)
            return str(base / value) if value is not None else None

        return cls(name=raw["name"],
                   bundle=resolve("bundle"),
                   edges=resolve("edges"),
                   features=resolve("features"),
                   labels=resolve("labels"),
                   splits=resolve("splits"),
                   expected_stats=raw.get("expected_stats"))


def read_edge_list(path: str | Path) -> np.ndarray:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j'")
            pairs.append((int(parts[0]), int(parts[1])))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def write_edge_list(edges: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in np.asarray(edges).reshape(-1, 2):
            fh.write(f"{i} {j}\n")


def _decode_features(spec, n_nodes: int) -> np.ndarray:
    """Dense rows, or a sparse triplet dict {shape, rows, cols, vals}."""
    if isinstance(spec, dict):
        shape = tuple(spec["shape"])
        x = np.zeros(shape)
        x[np.asarray(spec["rows"]), np.asarray(spec["cols"])] = \
            np.asarray(spec["vals"], dtype=np.float64)
        return x
    x = np.asarray(spec, dtype=np.float64)
    if x.shape[0] != n_nodes:
        raise ValueError("feature rows != n_nodes")
    return x


def load_bundle(path: str | Path) -> Graph:
    """Read a JSON graph bundle without any preprocessing."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    n_nodes = int(raw["n_nodes"])
    features = _decode_features(raw["features"], n_nodes)
    return Graph(n_nodes=n_nodes,
                 edges=np.asarray(raw["edges"], dtype=np.int64).reshape(-1, 2),
                 features=features,
                 labels=np.asarray(raw["labels"], dtype=np.int64),
                 n_classes=int(raw["C"]),
                 splits={k: np.asarray(v, dtype=np.int64)
                         for k, v in raw["splits"].items()})


def save_bundle(g: Graph, path: str | Path) -> None:
    payload = {
        "n_nodes": g.n_nodes,
        "C": g.n_classes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
        "splits": {k: v.tolist() for k, v in g.splits.items()},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to sum 1; all-zero rows stay zero."""
    sums = features.sum(axis=1, keepdims=True)
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return features * scale


def load_citation(manifest: DatasetManifest) -> Graph:
    """Load a citation-style dataset with row-normalized features.

    When the manifest carries expected statistics, every stated field is
    checked exactly and a mismatch raises IntegrityError naming the field.
    """
    if manifest.bundle is not None:
        g = load_bundle(manifest.bundle)
    else:
        missing = [k for k in ("edges", "features", "labels", "splits")
                   if getattr(manifest, k) is None]
        if missing:
            raise ValueError(f"manifest '{manifest.name}' missing {missing}")
        with open(manifest.labels, encoding="utf-8") as fh:
            labels = np.asarray(json.load(fh), dtype=np.int64)
        with open(manifest.features, encoding="utf-8") as fh:
            features = _decode_features(json.load(fh), len(labels))
        with open(manifest.splits, encoding="utf-8") as fh:
            splits = {k: np.asarray(v, dtype=np.int64)
                      for k, v in json.load(fh).items()}
        g = Graph(n_nodes=len(labels),
                  edges=read_edge_list(manifest.edges),
                  features=features,
                  labels=labels,
                  n_classes=int(labels.max()) + 1,
                  splits=splits)

    g = Graph(g.n_nodes, g.edges, row_normalize(g.features), g.labels,
              g.n_classes, g.splits)

    expected = manifest.expected_stats or {}
    actual = {
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "d": g.feature_dim,
        "C": g.n_classes,
        "train": int(g.splits["train"].size),
        "val": int(g.splits.get("val", np.empty(0)).size),
        "test": int(g.splits.get("test", np.empty(0)).size),
    }
    for key, want in expected.items():
        if key not in actual:
            raise IntegrityError(f"unknown expected_stats field '{key}'")
        if actual[key] != want:
            raise IntegrityError(
                f"{manifest.name}: field '{key}' is {actual[key]}, "
                f"manifest expects {want}")
    return g


@dataclass
class EpochMetric:
    epoch: int
    train_loss: float
    val_accuracy: float
    test_accuracy: float | None = None


@dataclass
class ResultRecord:
    experiment: str
    seed: int
    hyperparams: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    test_accuracy: float | None = None
    derived: dict = field(default_factory=dict)

    def validate(self) -> None:
        last = None
        for m in self.history:
            if last is not None and m.epoch <= last:
                raise ValueError("epochs must be strictly increasing")
            last = m.epoch
            if not 0.0 <= m.val_accuracy <= 1.0:
                raise ValueError("accuracy outside [0, 1]")
        if self.test_accuracy is not None \
                and not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]")


CSV_COLUMNS = ["experiment", "seed", "epoch", "split", "metric", "value"]


def _record_rows(rec: ResultRecord):
    for m in rec.history:
        yield [rec.experiment, rec.seed, m.epoch, "train", "loss",
               repr(m.train_loss)]
        yield [rec.experiment, rec.seed, m.epoch, "val", "accuracy",
               repr(m.val_accuracy)]
        if m.test_accuracy is not None:
            yield [rec.experiment, rec.seed, m.epoch, "test", "accuracy",
                   repr(m.test_accuracy)]
    final_epoch = rec.history[-1].epoch if rec.history else 0
    if rec.test_accuracy is not None:
        yield [rec.experiment, rec.seed, final_epoch, "test", "accuracy",
               repr(rec.test_accuracy)]
    for key in sorted(rec.derived):
        yield [rec.experiment, rec.seed, final_epoch, "derived", key,
               repr(rec.derived[key])]


def write_results(records: list[ResultRecord], path: str | Path) -> None:
    """Write the CSV view plus a lossless JSON sidecar next to it."""
    path = Path(path)
    for rec in records:
        rec.validate()
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                writer.writerows(_record_rows(rec))
        sidecar = path.with_suffix(".json")
        payload = [asdict(rec) for rec in records]
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"writing results to {path}: {exc}") from exc


def read_results(path: str | Path) -> list[ResultRecord]:
    """Rebuild records from the JSON sidecar of write_results."""
    sidecar = Path(path).with_suffix(".json")
    with open(sidecar, encoding="utf-8") as fh:
        payload = json.load(fh)
    records = []
    for raw in payload:
        history = [EpochMetric(**m) for m in raw.pop("history")]
        records.append(ResultRecord(history=history, **raw))
    return records
