"""
File outputs for experiment runs: trajectory CSV, metrics JSON, SVG plots.

CSV and JSON are byte-identical for identical seeds. SVGs are written with
a fixed hash salt and no date stamp so they are reproducible too.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .experiments import ExperimentSpec, MetricsReport, OfflineResult, OnlineResult
from .stimulus import Stimulus
from .trajectory import TrajectoryLog

TRAJECTORY_SCHEMA = "tactile-trajectory/1"
METRICS_SCHEMA = "tactile-metrics/1"
TRAJECTORY_COLUMNS = ("index", "timestamp", "kind", "x", "y", "theta", "payload")
OFFLINE_COLUMNS = ("r_true", "angle_deg", "phi_true", "r_pred", "phi_pred",
                   "r_error", "phi_error", "anomaly")
SVG_SALT = "tactile-gplvm"


class OutputError(OSError):
    """The output directory cannot be created or written."""


def _prepare_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    if not out.is_dir() or not os.access(out, os.W_OK):
        raise OutputError(f"output directory {out} is not writable")
    return out


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def trajectory_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for i, e in enumerate(log.events):
        w.writerow([i, e.timestamp, e.kind, _fmt(e.x), _fmt(e.y), _fmt(e.theta),
                    json.dumps(e.payload, sort_keys=True, separators=(",", ":"))])
    return buf.getvalue()


def read_trajectory_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("x", "y", "theta"):
            r[k] = float(r[k])
        r["payload"] = json.loads(r["payload"])
    return rows


def offline_csv(result: OfflineResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OFFLINE_COLUMNS)
    for rec in result.records:
        w.writerow([_fmt(rec.r_true), _fmt(rec.angle_deg), _fmt(rec.phi_true),
                    _fmt(rec.r_pred), _fmt(rec.phi_pred), _fmt(rec.r_error),
                    _fmt(rec.phi_error), int(rec.anomaly)])
    return buf.getvalue()


def metrics_json(report: MetricsReport, spec: ExperimentSpec) -> str:
    doc = {
        "schema": METRICS_SCHEMA,
        "trajectory_schema": TRAJECTORY_SCHEMA,
        "spec": spec.to_dict(),
        "metrics": report.to_dict(),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _save_svg(fig: Figure, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc


def plot_trajectory(log: TrajectoryLog, stimulus: Stimulus | None, title: str = "") -> Figure:
    """Taps as red crosses, motion in blue, the traced edge in black, true contour in grey."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    if stimulus is not None:
        c = stimulus.samples
        ax.plot(np.r_[c[:, 0], c[0, 0]], np.r_[c[:, 1], c[0, 1]], color="0.6", lw=1.0,
                label="true contour")
    moves = np.array([(e.x, e.y) for e in log.of_kind("move")]).reshape(-1, 2)
    taps = np.array([(e.x, e.y) for e in log.of_kind("tap")]).reshape(-1, 2)
    edge = np.array(log.edge_estimates).reshape(-1, 2)
    if len(moves) > 1:
        ax.plot(moves[:, 0], moves[:, 1], color="tab:blue", lw=0.6, alpha=0.7, label="movement")
    if len(taps):
        ax.plot(taps[:, 0], taps[:, 1], "x", color="tab:red", ms=3, mew=0.8, label="taps")
    if len(edge):
        if log.status == "closed":
            edge = np.vstack([edge, edge[:1]])
        ax.plot(edge[:, 0], edge[:, 1], "-", color="k", lw=1.6, label="traced edge")
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title(title or f"{log.status}: {len(log.edge_estimates)} edge estimates")
    ax.legend(loc="upper right", fontsize=7, frameon=False)
    fig.tight_layout()
    return fig


def plot_offline(result: OfflineResult, title: str = "") -> Figure:
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    recs = result.records
    r_true = np.array([r.r_true for r in recs])
    r_pred = np.array([r.r_pred for r in recs])
    ang = np.array([r.angle_deg for r in recs])
    bad = np.array([r.anomaly for r in recs], dtype=bool)
    sc = ax.scatter(r_true[~bad], r_pred[~bad], c=ang[~bad], s=8, cmap="viridis")
    if bad.any():
        ax.scatter(r_true[bad], r_pred[bad], marker="x", color="tab:red", s=12, label="anomaly")
        ax.legend(loc="upper left", fontsize=7, frameon=False)
    lim = [r_true.min() - 1, r_true.max() + 1]
    ax.plot(lim, lim, color="0.5", lw=0.8)
    ax.set_xlabel("true r (mm)")
    ax.set_ylabel("predicted r (mm)")
    fig.colorbar(sc, ax=ax, label="orientation (deg)")
    ax.set_title(title or f"{result.model.line_count} training line(s)")
    fig.tight_layout()
    return fig


def export_outputs(result: OnlineResult | OfflineResult, spec: ExperimentSpec,
                   out_dir=None) -> dict[str, Path]:
    """Write every artifact of a run into ``out_dir`` and return the paths by role."""
    out = _prepare_dir(out_dir if out_dir is not None else spec.out_dir or ".")
    paths = {"metrics": out / "metrics.json"}
    _write_text(paths["metrics"], metrics_json(result.report, spec))
    if isinstance(result, OnlineResult):
        paths["trajectory"] = out / "trajectory.csv"
        paths["plot"] = out / "trajectory.svg"
        _write_text(paths["trajectory"], trajectory_csv(result.log))
        _save_svg(plot_trajectory(result.log, result.stimulus), paths["plot"])
    else:
        paths["predictions"] = out / "offline_predictions.csv"
        paths["plot"] = out / "offline_predictions.svg"
        _write_text(paths["predictions"], offline_csv(result))
        _save_svg(plot_offline(result), paths["plot"])
    return paths
