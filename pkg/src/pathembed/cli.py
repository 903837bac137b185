"""Batch command-line driver: prepare | train | eval | sweep.

All commands are config-file driven and non-interactive. A training run
owns its output directory (guarded by a lockfile) and leaves behind
everything needed to reproduce it: the resolved config, the seed, the
edge split, the checkpoint, per-epoch history, and final metrics.

Exit codes: 0 success, 2 configuration error, 3 runtime/numerical error.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path as FilePath

import numpy as np

from pathembed.config import RunConfig, load_config
from pathembed.datasets import (
    DatasetError,
    load_prepared,
    prepare_dataset,
    synthetic_citation_graph,
    toy_graph,
)
from pathembed.evaluation import (
    SWEEP_COLUMNS,
    classify_nodes,
    evaluate_split,
    sweep,
    write_sweep_csv,
)
from pathembed.graph import (
    GraphError,
    LabeledDataset,
    load_dataset,
    load_split,
    save_split,
    split_edges,
)
from pathembed.paths import build_multipath_pool, build_singlepath_pool
from pathembed.training import (
    ConfigError,
    TrainingError,
    load_checkpoint,
    save_checkpoint,
    save_history,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# -- plumbing ----------------------------------------------------------------


def _git_describe() -> str:
    """Best-effort build identifier for run metadata."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=FilePath(__file__).parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    if out.returncode != 0:
        return "unknown"
    return out.stdout.strip() or "unknown"


class RunLock:
    """One run directory is owned by one process at a time."""

    def __init__(self, run_dir: FilePath):
        self.path = FilePath(run_dir) / ".lock"
        self._held = False

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"run directory {self.path.parent} is locked by another "
                f"process (remove {self.path} if that run is dead)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self._held = True
        return self

    def __exit__(self, *exc):
        if self._held:
            self.path.unlink(missing_ok=True)
        return False


def resolve_dataset(ds_cfg: dict) -> LabeledDataset:
    """Materialize the dataset a config section describes."""
    kind = ds_cfg["kind"]
    if kind == "toy":
        return toy_graph()
    if kind == "synthetic":
        graph, labels = synthetic_citation_graph(
            seed=int(ds_cfg["seed"]),
            num_nodes=int(ds_cfg["num_nodes"]),
            num_edges=int(ds_cfg["num_edges"]),
            num_classes=int(ds_cfg["num_classes"]),
            homophily=float(ds_cfg["homophily"]),
        )
        return LabeledDataset(graph=graph, labels=labels)
    if kind == "prepared":
        return load_prepared(ds_cfg["path"])
    if kind == "edgelist":
        dataset, _ = load_dataset(ds_cfg["edges"], ds_cfg["labels"])
        return dataset
    raise ConfigError(f"unsupported dataset kind {kind!r}")


def _write_json(path: FilePath, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save_labels(path: FilePath, dataset: LabeledDataset) -> None:
    names = dataset.class_names or [
        str(c) for c in range(dataset.num_classes)
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for node in range(dataset.graph.num_nodes):
            label = int(dataset.labels[node])
            if label >= 0:
                fh.write(f"{node}\t{names[label]}\n")


def _load_run_labels(path: FilePath, num_nodes: int) -> np.ndarray:
    """Read the dense-id labels file a training run writes."""
    labels = np.full(num_nodes, -1, dtype=np.int64)
    name_to_id: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            node_str, name = line.split("\t")
            node = int(node_str)
            if not 0 <= node < num_nodes:
                raise DatasetError(f"label row for unknown node {node}")
            labels[node] = name_to_id.setdefault(name, len(name_to_id))
    return labels


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        cfg.train.seed = int(args.seed)
        cfg.split["seed"] = int(args.seed)
    return cfg


def _set_threads(threads: int) -> None:
    """Advisory knob: caps any BLAS pools and sizes the sweep work pool."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


# -- subcommands -------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> int:
    report = prepare_dataset(args.raw_dir, args.out, name=args.name)
    print(f"prepared dataset: {report['name']}")
    print(f"  nodes:  {report['num_nodes']}")
    print(f"  edges:  {report['num_edges']}")
    print(f"  labels: {report['num_labels']}")
    if report["warnings"]:
        for warning in report["warnings"]:
            print(f"  warning: {warning}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = FilePath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.time()

    with RunLock(out_dir):
        dataset = resolve_dataset(cfg.dataset)
        split = split_edges(
            dataset.graph,
            cfg.split["val_fraction"],
            cfg.split["test_fraction"],
            cfg.split_seed,
        )
        tcfg = cfg.train
        max_pairs = (
            tcfg.max_pairs
            if tcfg.max_pairs is not None
            else 10 * max(split.train_graph.num_edges, 1)
        )
        multi_pool = build_multipath_pool(
            split.train_graph, tcfg.max_len, tcfg.max_paths, max_pairs,
            tcfg.seed, min_hops=tcfg.multi_min_hops,
            exhaustive_limit=tcfg.exhaustive_limit,
            path_budget=tcfg.path_budget,
        )
        single_pool = build_singlepath_pool(
            split.train_graph, tcfg.max_len, max_pairs, tcfg.seed,
            min_hops=tcfg.single_min_hops,
            exhaustive_limit=tcfg.exhaustive_limit,
        )
        result = train(
            split.train_graph, tcfg,
            multi_pool=multi_pool, single_pool=single_pool,
            val_pos=split.val_pos, val_neg=split.val_neg,
        )

        save_checkpoint(result.state, tcfg, out_dir / "checkpoint.npz")
        save_history(result.history, out_dir / "history.csv")
        save_split(split, out_dir / "split")
        if dataset.labels is not None:
            _save_labels(out_dir / "labels.tsv", dataset)
        metrics = evaluate_split(result.state, split, tcfg.backend)
        _write_json(out_dir / "metrics.json", metrics)

        components, _ = split.train_graph.connected_components()
        meta = {
            "config": cfg.to_dict(),
            "seed": tcfg.seed,
            "split_seed": cfg.split_seed,
            "dataset": {
                "kind": cfg.dataset["kind"],
                "num_nodes": dataset.graph.num_nodes,
                "num_edges": dataset.graph.num_edges,
                "num_classes": dataset.num_classes,
            },
            "train_graph": {
                "num_nodes": split.train_graph.num_nodes,
                "num_edges": split.train_graph.num_edges,
                "components": components,
            },
            "pools": {
                "multipath_sets": len(multi_pool),
                "singlepath_entries": len(single_pool.entries),
            },
            "epochs_run": len(result.history),
            "best_val_auc": result.best_val_auc,
            "wall_time_s": round(time.time() - start, 3),
            "build": _git_describe(),
        }
        _write_json(out_dir / "run_meta.json", meta)

    print(f"run complete: {out_dir}")
    print(f"  epochs: {meta['epochs_run']}  wall: {meta['wall_time_s']}s")
    for key in ("val_auc", "test_auc", "test_ap"):
        if key in metrics:
            print(f"  {key}: {metrics[key]:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    state, tcfg = load_checkpoint(args.checkpoint)
    if args.config is not None:
        requested = load_config(args.config).train
        for field_name in ("backend", "embedding_dim", "hidden_dim"):
            have = getattr(tcfg, field_name)
            want = getattr(requested, field_name)
            if have != want:
                raise ConfigError(
                    f"checkpoint/config mismatch: checkpoint has "
                    f"{field_name}={have!r} but config asks for {want!r}"
                )
    split = load_split(args.split)
    num_nodes = state.embeddings.values.shape[0]
    if split.train_graph.num_nodes != num_nodes:
        raise ConfigError(
            f"checkpoint/split mismatch: checkpoint embeds {num_nodes} "
            f"nodes but the split graph has {split.train_graph.num_nodes}"
        )

    metrics = evaluate_split(state, split, tcfg.backend)
    labels_path = (
        FilePath(args.labels)
        if args.labels
        else FilePath(args.split).parent / "labels.tsv"
    )
    if labels_path.is_file():
        labels = _load_run_labels(labels_path, num_nodes)
        dataset = LabeledDataset(graph=split.train_graph, labels=labels)
        try:
            report = classify_nodes(
                state, dataset, train_fraction=0.1, seed=tcfg.seed
            )
        except (ValueError, RuntimeError) as exc:
            print(f"warning: skipping classification ({exc})", file=sys.stderr)
        else:
            metrics["micro_f1"] = report.micro_f1
            metrics["macro_f1"] = report.macro_f1

    payload = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    sys.stdout.write(payload)
    return EXIT_OK


def _read_sweep_rows(path: FilePath, param: str) -> list[dict]:
    """Load previously computed grid points from an interrupted sweep."""
    rows: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ",".join(SWEEP_COLUMNS):
            raise ConfigError(
                f"existing sweep file {path} has unexpected columns {header!r}"
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if fields[0] != param:
                raise ConfigError(
                    f"existing sweep file {path} holds param {fields[0]!r}, "
                    f"config asks for {param!r}"
                )
            rows.append({
                "param": fields[0],
                "value": fields[1],
                "trial": int(fields[2]),
                "auc": float(fields[3]),
                "ap": float(fields[4]),
                "micro_f1": float(fields[5]),
            })
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.sweep is None:
        raise ConfigError("the sweep command needs a sweep: section")
    out_path = FilePath(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    dataset = resolve_dataset(cfg.dataset)
    old_rows = _read_sweep_rows(out_path, cfg.sweep["param"]) if out_path.exists() else []
    completed = {(row["value"], row["trial"]) for row in old_rows}
    if completed:
        print(f"resuming: {len(completed)} grid points already on disk")

    new_rows, errors = sweep(
        dataset.graph,
        cfg.train,
        cfg.sweep["param"],
        cfg.sweep["values"],
        trials=cfg.sweep["trials"],
        labels=dataset.labels,
        threads=args.threads,
        val_fraction=cfg.split["val_fraction"],
        test_fraction=cfg.split["test_fraction"],
        completed=completed,
    )

    value_order = {str(v): i for i, v in enumerate(cfg.sweep["values"])}
    merged = old_rows + new_rows
    merged.sort(key=lambda r: (value_order[str(r["value"])], r["trial"]))
    write_sweep_csv(merged, out_path)
    print(f"sweep complete: {len(merged)} rows -> {out_path}")
    if errors:
        _write_json(out_path.with_suffix(".errors.json"), {"errors": errors})
        print(f"  {len(errors)} grid points failed (see .errors.json)")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathembed",
        description="Graph node embeddings constrained by path consistency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="normalize a raw dataset directory")
    p.add_argument("raw_dir", help="directory with the raw dataset files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default=None, help="dataset name for stat checks")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train embeddings from a config file")
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None, help="override all seeds")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a saved split")
    p.add_argument("--checkpoint", required=True, help="checkpoint.npz path")
    p.add_argument("--split", required=True, help="split directory")
    p.add_argument("--config", default=None,
                   help="optional config to cross-check against the checkpoint")
    p.add_argument("--labels", default=None,
                   help="labels.tsv for classification metrics")
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a parameter grid, resumable")
    p.add_argument("--config", required=True, help="YAML config with sweep:")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override all seeds")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        _set_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, GraphError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
