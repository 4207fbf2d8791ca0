"""Command-line harness for the diagnostic experiments.

Each subcommand runs a seed sweep, writes plot-ready CSV plus a JSON
sidecar of full records, renders matching PNG figures, and drops a
config snapshot that makes the invocation exactly reproducible.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .attention import (connectivity_strength, export_edge_weights,
                        weight_mass_ratio)
from .dataio import (DatasetManifest, ResultRecord, load_bundle,
                     load_citation, write_results)
from .graphs import (Graph, InfeasibleTargetError, generate_sbm,
                     inter_class_ratio, laplacian_weights, oracle_graph,
                     perturb_inter_class)
from .models import pr_nr_weights
from .training import Hyperparams, TrainingDivergedError, run, train_gcn

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ROOT_ENV = "GRAPHEM_OUT_ROOT"

# Default synthetic benchmark: four communities, mid-80s vanilla-GCN
# accuracy, enough inter-class edges to leave headroom for refinement.
SBM_DEFAULTS = {
    "blocks": 4,
    "nodes_per_block": 100,
    "p_in": 0.1,
    "p_out": 0.02,
    "feature_dim": 32,
    "feature_noise": 2.5,
    "train_per_class": 20,
    "val_per_class": 30,
}

# The weight-influence comparison needs clearly separable feature cosines
# plus room below saturation, so it ships its own graph defaults.
FIG1B_SBM_DEFAULTS = dict(SBM_DEFAULTS, p_in=0.05, p_out=0.03,
                          feature_dim=16, feature_noise=1.5)


class ConfigError(ValueError):
    pass


def _coerce(text: str):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()


def read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                values[key.strip()] = _coerce(raw)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


HP_FIELDS = {f.name for f in dataclasses.fields(Hyperparams)}


def split_config(values: dict, sbm_defaults: dict) -> tuple[dict, dict]:
    """Partition key=value pairs into hyperparameter and graph settings."""
    hp_over, sbm = {}, dict(sbm_defaults)
    for key, val in values.items():
        if key in HP_FIELDS:
            hp_over[key] = val
        elif key.startswith("sbm_") and key[4:] in sbm:
            sbm[key[4:]] = val
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return hp_over, sbm


def build_hyperparams(overrides: dict, seed: int) -> Hyperparams:
    try:
        hp = Hyperparams(**overrides)
        hp = dataclasses.replace(hp, seed=seed)
        hp.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return hp


def load_graph_file(path: str) -> Graph:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load graph {path}: {exc}") from exc
    if "name" in raw:
        return load_citation(DatasetManifest.from_json(path))
    return load_bundle(path)


class GraphSource:
    """Per-seed graph supplier: a fixed file or a seeded synthetic family."""

    def __init__(self, graph_path: str | None, sbm: dict):
        self.sbm = sbm
        self.fixed = load_graph_file(graph_path) if graph_path else None

    def for_seed(self, seed: int) -> Graph:
        if self.fixed is not None:
            return self.fixed
        return generate_sbm(rng_seed=seed, **self.sbm)


def prepare_out_dir(args) -> Path:
    out = args.out
    if out is None:
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        out = str(Path(root) / args.command)
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_snapshot(out: Path, args, hp_over: dict, sbm: dict) -> None:
    lines = [f"command={args.command}",
             f"seeds={','.join(str(s) for s in args.seeds)}",
             f"graph={args.graph or 'sbm'}"]
    if getattr(args, "ratios", None) is not None:
        lines.append(f"ratios={','.join(repr(r) for r in args.ratios)}")
    if getattr(args, "samples", None) is not None:
        lines.append(f"samples={','.join(str(s) for s in args.samples)}")
    hp = Hyperparams(**hp_over)
    for key in sorted(HP_FIELDS - {"seed"}):
        lines.append(f"{key}={getattr(hp, key)}")
    for key in sorted(sbm):
        lines.append(f"sbm_{key}={sbm[key]}")
    (out / "config.txt").write_text("\n".join(lines) + "\n",
                                    encoding="utf-8")


def write_table(path: Path, columns: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


# ---------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------

def cmd_train(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records, accs = [], []
    for seed in args.seeds:
        g = source.for_seed(seed)
        hp = build_hyperparams(hp_over, seed)
        result = run(g, hp, experiment="train")
        records.append(result.record)
        accs.append(result.test_accuracy)
        export_edge_weights(result.weights, out / f"weights_seed{seed}.csv")
    write_results(records, out / "results.csv")
    mean, std = mean_std(accs)
    write_table(out / "aggregate.csv",
                ["experiment", "n_seeds", "mean_test_accuracy",
                 "std_test_accuracy"],
                [["train", len(accs), mean, std]])
    if not args.no_figures:
        plotting.line_plot(list(args.seeds), {"test accuracy": accs},
                           "seed", "test accuracy",
                           f"per-seed accuracy (mean {mean:.3f})",
                           out / "train.png")
        plotting.training_curves({"seed " + str(args.seeds[0]):
                                  records[0].history},
                                 out / "curves.png")


def cmd_fig1a(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records, rows = [], []
    means, stds, plotted = [], [], []
    for ratio in args.ratios:
        accs, achieved, edges = [], [], []
        skipped = False
        for seed in args.seeds:
            g = source.for_seed(seed)
            try:
                gp = perturb_inter_class(g, ratio, rng_seed=seed + 7919)
            except InfeasibleTargetError:
                skipped = True
                break
            hp = build_hyperparams(hp_over, seed)
            result = train_gcn(gp, hp, experiment=f"ratio={ratio}")
            records.append(result.record)
            accs.append(result.test_accuracy)
            achieved.append(inter_class_ratio(gp))
            edges.append(gp.n_edges)
        if skipped:
            rows.append([ratio, float("nan"), float("nan"),
                         float("nan"), float("nan"), "skipped"])
            continue
        mean, std = mean_std(accs)
        rows.append([ratio, float(np.mean(achieved)), float(np.mean(edges)),
                     mean, std, "ok"])
        plotted.append(ratio)
        means.append(mean)
        stds.append(std)
    write_results(records, out / "results.csv")
    write_table(out / "summary.csv",
                ["target_ratio", "achieved_ratio", "mean_edges",
                 "mean_accuracy", "std_accuracy", "status"], rows)
    if not args.no_figures and plotted:
        plotting.line_plot(plotted, {"vanilla GCN": (means, stds)},
                           "inter-class edge ratio", "test accuracy",
                           "accuracy vs structure noise", out / "fig1a.png")


def cmd_fig1b(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records = []
    cells = {("pr", "original"): [], ("nr", "original"): [],
             ("pr", "oracle"): [], ("nr", "oracle"): []}
    for seed in args.seeds:
        g = source.for_seed(seed)
        graphs = {"original": g, "oracle": oracle_graph(g)}
        for adj_name, gg in graphs.items():
            for mode in ("pr", "nr"):
                hp = build_hyperparams(hp_over, seed)
                result = train_gcn(gg, hp, agg=pr_nr_weights(gg, mode),
                                   experiment=f"{mode}-{adj_name}")
                records.append(result.record)
                cells[(mode, adj_name)].append(result.test_accuracy)
    write_results(records, out / "results.csv")
    rows = []
    for (mode, adj_name), accs in cells.items():
        mean, std = mean_std(accs)
        rows.append([mode, adj_name, mean, std])
    write_table(out / "summary.csv",
                ["weighting", "adjacency", "mean_accuracy", "std_accuracy"],
                rows)
    if not args.no_figures:
        plotting.grouped_bars(
            ["original", "oracle"],
            {"pr": [np.mean(cells[("pr", a)]) for a in
                    ("original", "oracle")],
             "nr": [np.mean(cells[("nr", a)]) for a in
                    ("original", "oracle")]},
            "test accuracy", "similarity vs dissimilarity weighting",
            out / "fig1b.png")


def cmd_fig4(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records, rows = [], []
    means, stds = [], []
    for samples in args.samples:
        if samples < 0:
            raise ConfigError("sample counts must be >= 0")
        accs = []
        for seed in args.seeds:
            g = source.for_seed(seed)
            hp = build_hyperparams(
                dict(hp_over, reweight_samples=int(samples)), seed)
            result = run(g, hp, experiment=f"samples={samples}")
            records.append(result.record)
            accs.append(result.test_accuracy)
        mean, std = mean_std(accs)
        rows.append([samples, mean, std])
        means.append(mean)
        stds.append(std)
    write_results(records, out / "results.csv")
    write_table(out / "summary.csv",
                ["samples", "mean_accuracy", "std_accuracy"], rows)
    if not args.no_figures:
        plotting.line_plot(list(args.samples),
                           {"accuracy": (means, stds)},
                           "structure samples (0 = stable weights)",
                           "test accuracy", "re-weighting stability",
                           out / "fig4.png")


def cmd_connectivity(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records = []
    ratios = {"uniform": [], "laplacian": [], "learned": []}
    mass = {"uniform": [], "laplacian": [], "learned": []}
    matrices = {}
    for seed in args.seeds:
        g = source.for_seed(seed)
        hp = build_hyperparams(hp_over, seed)
        result = run(g, hp, experiment="connectivity")
        records.append(result.record)
        weightings = {"uniform": g.adjacency(),
                      "laplacian": laplacian_weights(g),
                      "learned": result.weights}
        for name, w in weightings.items():
            matrix, ratio = connectivity_strength(w, g.labels, g.n_classes)
            ratios[name].append(ratio)
            mass[name].append(weight_mass_ratio(w, g.labels))
            matrices.setdefault(name, []).append(matrix)
    write_results(records, out / "results.csv")
    rows = []
    for name in ratios:
        mean_matrix = np.mean(matrices[name], axis=0)
        write_table(out / f"connectivity_{name}.csv",
                    [f"class_{c}" for c in range(mean_matrix.shape[1])],
                    [list(map(float, row)) for row in mean_matrix])
        r_mean, r_std = mean_std(ratios[name])
        rows.append([name, r_mean, r_std, float(np.mean(mass[name]))])
        if not args.no_figures:
            plotting.heatmap(mean_matrix,
                             f"{name} (diag/offdiag {r_mean:.2f})",
                             out / f"connectivity_{name}.png")
    write_table(out / "summary.csv",
                ["weighting", "mean_diag_offdiag_ratio",
                 "std_diag_offdiag_ratio", "mean_intra_inter_mass_ratio"],
                rows)


def _epochs_to_fraction(history, final: float, fraction: float = 0.9) -> int:
    target = fraction * final
    for m in history:
        if m.test_accuracy is not None and m.test_accuracy >= target:
            return m.epoch
    return history[-1].epoch if history else 0


def _load_weights_csv(path: str, n: int) -> np.ndarray:
    dense = np.zeros((n, n))
    try:
        with open(path, encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                dense[int(row["i"]), int(row["j"])] = float(row["weight"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load weights {path}: {exc}") from exc
    return dense


def cmd_retrain(args, out: Path, hp_over: dict, sbm: dict) -> None:
    source = GraphSource(args.graph, sbm)
    records = []
    finals = {"original": [], "oracle": [], "learned": []}
    speeds = {"original": [], "oracle": [], "learned": []}
    first_histories = {}
    for seed in args.seeds:
        g = source.for_seed(seed)
        if args.weights is not None:
            learned = _load_weights_csv(args.weights, g.n_nodes)
        else:
            hp = build_hyperparams(hp_over, seed)
            learned = run(g, hp, experiment="retrain-source").weights
        settings = {
            "original": (g, laplacian_weights(g)),
            "oracle": (oracle_graph(g),
                       laplacian_weights(oracle_graph(g))),
            "learned": (g, learned),
        }
        for name, (gg, agg) in settings.items():
            hp = build_hyperparams(hp_over, seed)
            result = train_gcn(gg, hp, agg=agg, track_test=True,
                               experiment=f"retrain-{name}")
            records.append(result.record)
            finals[name].append(result.test_accuracy)
            speeds[name].append(_epochs_to_fraction(
                result.record.history, result.test_accuracy))
            if seed == args.seeds[0]:
                first_histories[name] = result.record.history
    write_results(records, out / "results.csv")
    rows = []
    for name in finals:
        mean, std = mean_std(finals[name])
        rows.append([name, mean, std, float(np.mean(speeds[name]))])
    write_table(out / "summary.csv",
                ["weighting", "mean_accuracy", "std_accuracy",
                 "mean_epochs_to_90pct"], rows)
    if not args.no_figures and first_histories:
        plotting.training_curves(first_histories, out / "retrain.png")


# ---------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphem",
        description="Decoupled-attention graph learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--graph", default=None,
                       help="graph bundle or dataset manifest (JSON); "
                            "default: seeded synthetic benchmark")
        p.add_argument("--config", default=None,
                       help="key=value file overriding defaults")
        p.add_argument("--seeds", type=_int_list, default=[0],
                       help="comma-separated seed list")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ROOT_ENV}"
                            "/<command>)")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    common(sub.add_parser("train", help="train the full model per seed"))

    p = sub.add_parser("fig1a", help="accuracy vs inter-class edge ratio")
    common(p)
    p.add_argument("--ratios", type=_float_list,
                   default=[0.0, 0.2, 0.4, 0.6, 0.8])

    common(sub.add_parser("fig1b",
                          help="similarity vs dissimilarity weighting"))

    p = sub.add_parser("fig4", help="stable vs sampled re-weighting")
    common(p)
    p.add_argument("--samples", type=_int_list,
                   default=[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10])

    common(sub.add_parser("connectivity",
                          help="class-pair weight concentration"))

    p = sub.add_parser("retrain",
                       help="plain GCN under original/oracle/learned weights")
    common(p)
    p.add_argument("--weights", default=None,
                   help="i,j,weight CSV of learned weights "
                        "(default: train in place)")

    return parser


COMMANDS = {
    "train": cmd_train,
    "fig1a": cmd_fig1a,
    "fig1b": cmd_fig1b,
    "fig4": cmd_fig4,
    "connectivity": cmd_connectivity,
    "retrain": cmd_retrain,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        defaults = FIG1B_SBM_DEFAULTS if args.command == "fig1b" \
            else SBM_DEFAULTS
        hp_over, sbm = split_config(file_cfg, defaults)
        if not args.seeds:
            raise ConfigError("at least one seed is required")
        build_hyperparams(hp_over, args.seeds[0])  # fail fast on bad values
        ratios = getattr(args, "ratios", None)
        if ratios is not None and any(not 0.0 <= r <= 1.0 for r in ratios):
            raise ConfigError("ratios must lie in [0, 1]")
        out = prepare_out_dir(args)
        write_snapshot(out, args, hp_over, sbm)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args, out, hp_over, sbm)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
