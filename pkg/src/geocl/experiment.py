"""Experiment execution and report emission around the harness."""

from __future__ import annotations

import csv
import json
import platform
import time
from pathlib import Path

import numpy as np

from . import gis as gis_mod
from . import harness, model as mdl
from .errors import ConfigurationError


def build_stream(cfg: dict, seed: int) -> list[harness.StreamTask]:
    s = cfg["stream"]
    if s["csv_path"]:
        x, y = read_dataset_csv(s["csv_path"])
        if x.shape[1] != s["ambient_dim"]:
            raise ConfigurationError(
                f"CSV feature dim {x.shape[1]} != stream.ambient_dim {s['ambient_dim']}")
        return harness.stream_from_arrays(x, y, s["steps"], s["train_ratio"], seed)
    return harness.generate_synthetic_stream(
        classes=s["classes"], steps=s["steps"], samples_per_class=s["samples_per_class"],
        test_per_class=s["test_per_class"], ambient_dim=s["ambient_dim"],
        tree_fraction=s["tree_fraction"], noise=s["noise"], seed=seed)


def run_experiment(cfg: dict, out_dir: str | Path | None = None) -> dict:
    """Run the full stream described by ``cfg``; write report files if an
    output directory is given; return the report dict."""
    seed = cfg["seed"]
    started = time.time()
    tasks = build_stream(cfg, seed)
    backbone = mdl.Backbone(
        in_dim=tasks[0].x_train.shape[1],
        hidden_dim=cfg["backbone"]["hidden_dim"],
        feature_dim=cfg["backbone"]["feature_dim"])
    pool = gis_mod.build_pool(cfg["backbone"]["feature_dim"], cfg["pool"]["sizes"],
                              mode=cfg["pool"]["mode"])
    state, record = harness.run_stream(tasks, cfg, seed, backbone, pool)
    metrics = harness.summary_metrics(record)
    report = {
        "config": cfg,
        "metrics": metrics,
        "gis_trace": state.gis_trace,
        "wall_clock_seconds": round(time.time() - started, 3),
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_accuracy_matrix(out / "accuracy_matrix.csv", record)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def write_accuracy_matrix(path, record: harness.MetricsRecord):
    steps = len(record.accuracy)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"task_{j+1}" for j in range(steps)])
        for t, row in enumerate(record.accuracy, start=1):
            writer.writerow([t] + [f"{a:.10f}" for a in row] + [""] * (steps - len(row)))


def write_dataset_csv(cfg: dict, out_dir: str | Path) -> dict:
    """Emit the synthetic stream as one CSV plus a manifest."""
    seed = cfg["seed"]
    tasks = build_stream(cfg, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dim = tasks[0].x_train.shape[1]
    data_path = out / "dataset.csv"
    with open(data_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i+1}" for i in range(dim)])
        for task in tasks:
            for x, y in [(task.x_train, task.y_train), (task.x_test, task.y_test)]:
                for row, lab in zip(x, y):
                    writer.writerow([int(lab)] + [f"{v:.9g}" for v in row])
    manifest = {
        "config": cfg,
        "file": data_path.name,
        "classes": sorted(int(l) for t in tasks for l in t.labels),
        "rows": sum(len(t.y_train) + len(t.y_test) for t in tasks),
        "per_step_labels": [list(t.labels) for t in tasks],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise ConfigurationError("dataset CSV must start with a 'label' column")
        rows = list(reader)
    y = np.array([int(r[0]) for r in rows])
    x = np.array([[float(v) for v in r[1:]] for r in rows])
    return x, y


def aggregate_reports(run_dirs: list[str | Path]) -> dict:
    """Merge completed runs into mean/std tables, grouped by config
    (everything except seed and output directory must match)."""
    if not run_dirs:
        raise ConfigurationError("no run directories given")
    reports = []
    for d in run_dirs:
        path = Path(d) / "report.json"
        if not path.exists():
            raise ConfigurationError(f"{d} has no report.json")
        reports.append(json.loads(path.read_text()))

    def config_key(rep):
        cfg = json.loads(json.dumps(rep["config"]))
        cfg.pop("seed", None)
        cfg.pop("out_dir", None)
        return json.dumps(cfg, sort_keys=True)

    keys = {config_key(r) for r in reports}
    if len(keys) > 1 and len({json.dumps(r["config"]["stream"], sort_keys=True)
                              for r in reports}) > 1:
        raise ConfigurationError("runs use incompatible stream configs; refusing to merge")

    groups: dict[str, list[dict]] = {}
    for rep in reports:
        groups.setdefault(config_key(rep), []).append(rep)
    rows = []
    for key, members in sorted(groups.items()):
        metric_names = ["final_accuracy", "average_accuracy",
                        "average_incremental_accuracy", "average_forgetting"]
        row = {"runs": len(members), "label": _group_label(members[0]["config"])}
        for name in metric_names:
            vals = [m["metrics"][name] for m in members if m["metrics"][name] is not None]
            row[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))} if vals else None
        rows.append(row)
    return {"groups": rows}


def _group_label(cfg: dict) -> str:
    gis_on = cfg["pool"]["mode"] == "mixed"
    losses_on = cfg["lambda1"] > 0 or cfg["lambda2"] > 0
    if gis_on and losses_on:
        return "full"
    if gis_on:
        return "search-only"
    if losses_on:
        return "structure-only"
    return "euclidean-baseline"


def write_aggregate(report: dict, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "runs", "metric", "mean", "std"])
        for group in report["groups"]:
            for name in ("final_accuracy", "average_accuracy",
                         "average_incremental_accuracy", "average_forgetting"):
                cell = group[name]
                if cell is None:
                    writer.writerow([group["label"], group["runs"], name, "", ""])
                else:
                    writer.writerow([group["label"], group["runs"], name,
                                     f"{cell['mean']:.6f}", f"{cell['std']:.6f}"])
    lines = []
    for group in report["groups"]:
        cells = []
        for name in ("final_accuracy", "average_forgetting"):
            cell = group[name]
            cells.append("n/a" if cell is None else f"{cell['mean']:.4f}+/-{cell['std']:.4f}")
        lines.append(f"{group['label']:>22}  runs={group['runs']}  "
                     f"final={cells[0]}  forgetting={cells[1]}")
    (out / "aggregate.txt").write_text("\n".join(lines) + "\n")


def write_accuracy_curve(run_dirs: list[str | Path], out_dir: str | Path):
    """Per-run (step, all-seen accuracy) points for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "accuracy_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "step", "accuracy"])
        for d in run_dirs:
            matrix_path = Path(d) / "accuracy_matrix.csv"
            if not matrix_path.exists():
                continue
            with open(matrix_path, newline="") as mfh:
                reader = csv.reader(mfh)
                next(reader)
                for row in reader:
                    accs = [float(v) for v in row[1:] if v != ""]
                    writer.writerow([Path(d).name, row[0], f"{np.mean(accs):.10f}"])
