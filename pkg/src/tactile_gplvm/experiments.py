"""
Experiment harness: the offline latent-recovery test and online contour runs.

Both modes are driven by an ``ExperimentSpec`` and are fully determined by
its seed. Results come back as a ``MetricsReport``; writing files is left to
``tactile_gplvm.reporting``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .controller import ControlConfig, default_max_steps, run_contour_following
from .gp import NoiseLevel
from .model import GplvmModel, augment_model, infer_latent, line_points
from .sensor import Pose2D, SensorModel, VirtualRobot, simulate_tap, theta_for_lateral
from .stimulus import Stimulus, stimulus_from_spec
from .trajectory import TrajectoryLog

MODES = ("offline", "online")
# anomaly thresholds for offline predictions
R_ANOMALY = 12.0
PHI_ANOMALY = 3.0
# orientation (deg) that maps onto phi = +/-2
PHI_SCALE_DEG = 45.0
PHI_SCALE = 2.0


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str = "online"
    stimulus: Any = None  # None: "circle" online, "edge" offline
    config: ControlConfig = field(default_factory=ControlConfig)
    training_lines: int = 1
    seed: int = 0
    out_dir: str | None = None
    sensor: SensorModel = field(default_factory=SensorModel)
    sigma_n: float = NoiseLevel().sigma_n  # noise level the model assumes
    start_offset: float = 8.5  # online start, mm outside the edge
    r_range: tuple[float, float] = (-10.0, 10.0)
    r_step: float = 1.0
    angle_range: tuple[float, float] = (-45.0, 45.0)  # degrees
    angle_step: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.config, ControlConfig):
            raise TypeError("config must be a ControlConfig")
        NoiseLevel(self.sigma_n)
        if self.training_lines < 1:
            raise ValueError("training_lines must be >= 1")
        if self.r_step <= 0 or self.angle_step <= 0:
            raise ValueError("grid steps must be > 0")
        if self.r_range[1] <= self.r_range[0]:
            raise ValueError("degenerate r range")
        if self.angle_range[1] < self.angle_range[0]:
            raise ValueError("angle range is reversed")

    def with_overrides(self, **kw) -> "ExperimentSpec":
        """Copy with top-level or ``ControlConfig`` fields replaced (``None`` ignored)."""
        cfg_names = {f.name for f in fields(ControlConfig)}
        cfg_kw = {k: v for k, v in kw.items() if k in cfg_names and v is not None}
        top_kw = {k: v for k, v in kw.items() if k not in cfg_names and v is not None}
        unknown = set(top_kw) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        spec = replace(self, **top_kw)
        if cfg_kw:
            spec = replace(spec, config=replace(spec.config, **cfg_kw))
        return spec

    @property
    def stimulus_or_default(self):
        if self.stimulus is not None:
            return self.stimulus
        return "edge" if self.mode == "offline" else "circle"

    def to_dict(self) -> dict:
        stim = self.stimulus_or_default
        if isinstance(stim, Stimulus):
            stim = stim.to_dict()
        return {
            "mode": self.mode,
            "stimulus": stim,
            "config": asdict(self.config),
            "training_lines": self.training_lines,
            "seed": self.seed,
            "sensor": {"contact_gain": self.sensor.contact_gain,
                       "noise_sd": self.sensor.noise_sd,
                       "footprint_sd": self.sensor.footprint_sd,
                       "n_pins": self.sensor.n_pins},
            "sigma_n": self.sigma_n,
            "start_offset": self.start_offset,
            "r_range": list(self.r_range),
            "r_step": self.r_step,
            "angle_range": list(self.angle_range),
            "angle_step": self.angle_step,
        }


@dataclass
class MetricsReport:
    mode: str
    stimulus: str
    mean_edge_distance: float | None = None
    sd_edge_distance: float | None = None
    max_edge_distance: float | None = None
    edge_estimates: int = 0
    total_taps: int = 0
    model_taps: int = 0
    lines_collected: int = 0
    loop_closed: bool = False
    steps: int = 0
    failure_reason: str | None = None
    # offline only
    mean_r_error: float | None = None
    sd_r_error: float | None = None
    mean_phi_error: float | None = None
    sd_phi_error: float | None = None
    anomalies_r: int | None = None
    anomalies_phi: int | None = None
    excluded: int | None = None
    grid_points: int | None = None
    grid_shape: list | None = None

    def __post_init__(self):
        if self.model_taps > self.total_taps:
            raise ValueError("model_taps cannot exceed total_taps")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OfflineRecord:
    r_true: float
    angle_deg: float
    phi_true: float
    r_pred: float
    phi_pred: float
    anomaly: bool

    @property
    def r_error(self) -> float:
        return abs(self.r_pred - self.r_true)

    @property
    def phi_error(self) -> float:
        return abs(self.phi_pred - self.phi_true)


@dataclass
class OfflineResult:
    report: MetricsReport
    records: list[OfflineRecord]
    model: GplvmModel


@dataclass
class OnlineResult:
    report: MetricsReport
    log: TrajectoryLog
    stimulus: Stimulus


def _stimulus_name(stimulus) -> str:
    if isinstance(stimulus, str):
        return stimulus
    if isinstance(stimulus, Stimulus):
        return stimulus.kind
    if isinstance(stimulus, dict):
        return str(stimulus.get("kind", "custom"))
    return "custom"


def angle_to_phi(angle_deg):
    return np.asarray(angle_deg, dtype=float) * (PHI_SCALE / PHI_SCALE_DEG)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


class _EdgeRig:
    """Taps at a displacement ``r`` along a sensor axis rotated by ``angle`` off the edge normal."""

    def __init__(self, stimulus: Stimulus, sensor: SensorModel, seed: int):
        self.stimulus = stimulus
        self.sensor = sensor
        self.origin = stimulus.point(stimulus.start_s)
        self.normal = stimulus.outward_normal(stimulus.start_s)
        self._rng = np.random.default_rng(seed)

    def tap(self, r: float, angle_deg: float) -> np.ndarray:
        a = math.radians(angle_deg)
        c, s = math.cos(a), math.sin(a)
        n = self.normal
        u = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1]])
        p = self.origin + r * u
        pose = Pose2D(p[0], p[1], theta_for_lateral(u))
        return simulate_tap(pose, self.stimulus, self.sensor, int(self._rng.integers(2**63)))


def run_offline_eval(spec: ExperimentSpec) -> OfflineResult:
    """Train on a few labelled lines, then infer (r, phi) over a test grid.

    Training lines sit at orientations evenly spread over ``angle_range``
    (one line sits at the range midpoint) and carry ground-truth latents.
    Predictions with ``|r| > 12`` or ``|phi| > 3`` are anomalies: counted,
    kept in the records, and left out of the error statistics.
    """
    stim = stimulus_from_spec(spec.stimulus_or_default)
    rig = _EdgeRig(stim, spec.sensor, spec.seed)
    cfg = spec.config
    reference = rig.tap(0.0, 0.0)

    lo, hi = spec.angle_range
    k = spec.training_lines
    train_angles = np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2.0])
    offsets = np.linspace(-cfg.line_halfwidth, cfg.line_halfwidth, cfg.taps_per_line)
    model = GplvmModel.empty(reference, NoiseLevel(spec.sigma_n))
    for i, ang in enumerate(train_angles):
        frames = [rig.tap(float(r), float(ang)) for r in offsets]
        pts = line_points(offsets, frames, float(angle_to_phi(ang)), f"train{i + 1}")
        model = augment_model(model, pts, reoptimize=(i == k - 1))

    r_vals = _grid(*spec.r_range, spec.r_step)
    a_vals = _grid(*spec.angle_range, spec.angle_step)
    if len(r_vals) < 2 or len(a_vals) < 1:
        raise ValueError("degenerate test grid")
    records = []
    for ang in a_vals:
        for r in r_vals:
            est = infer_latent(rig.tap(float(r), float(ang)), model)
            anomaly = abs(est.r) > R_ANOMALY or abs(est.phi) > PHI_ANOMALY
            records.append(OfflineRecord(float(r), float(ang), float(angle_to_phi(ang)),
                                         est.r, est.phi, anomaly))

    kept = [rec for rec in records if not rec.anomaly]
    r_err = np.array([rec.r_error for rec in kept])
    p_err = np.array([rec.phi_error for rec in kept])
    report = MetricsReport(
        mode="offline",
        stimulus=_stimulus_name(spec.stimulus_or_default),
        total_taps=1 + k * len(offsets) + len(records),
        model_taps=model.n,
        lines_collected=model.line_count,
        mean_r_error=float(r_err.mean()) if len(kept) else None,
        sd_r_error=float(r_err.std()) if len(kept) else None,
        mean_phi_error=float(p_err.mean()) if len(kept) else None,
        sd_phi_error=float(p_err.std()) if len(kept) else None,
        anomalies_r=sum(abs(rec.r_pred) > R_ANOMALY for rec in records),
        anomalies_phi=sum(abs(rec.phi_pred) > PHI_ANOMALY for rec in records),
        excluded=len(records) - len(kept),
        grid_points=len(records),
        grid_shape=[len(r_vals), len(a_vals)],
    )
    return OfflineResult(report, records, model)


def edge_distances(stimulus: Stimulus, log: TrajectoryLog) -> np.ndarray:
    est = np.array(log.edge_estimates, dtype=float).reshape(-1, 2)
    if len(est) == 0:
        return np.zeros(0)
    return np.abs(stimulus.closest(est).distance)


def run_online_experiment(spec: ExperimentSpec,
                          remove_object_after: int | None = None) -> OnlineResult:
    """One contour-following run from ``start_offset`` mm outside the stimulus.

    The reference tap is taken on the edge at the stimulus start point with
    the sensor's lateral axis along the outward normal; the robot then backs
    off along that normal and the controller takes over.
    """
    stim = stimulus_from_spec(spec.stimulus_or_default)
    cfg = spec.config
    if cfg.max_steps is None:
        cfg = replace(cfg, max_steps=default_max_steps(stim.perimeter, cfg.step_length))
    edge = stim.point(stim.start_s)
    normal = stim.outward_normal(stim.start_s)
    theta = theta_for_lateral(normal)
    robot = VirtualRobot(stim, spec.sensor, seed=spec.seed, start=Pose2D(edge[0], edge[1], theta),
                         remove_object_after=remove_object_after)
    robot.move_to(Pose2D(edge[0], edge[1], theta))
    reference = robot.tap()
    start = edge + spec.start_offset * normal
    robot.move_to(Pose2D(start[0], start[1], theta))

    model = GplvmModel.from_reference(reference, NoiseLevel(spec.sigma_n))
    log = run_contour_following(robot, model, cfg)
    d = edge_distances(stim, log)
    model = log.final_model
    report = MetricsReport(
        mode="online",
        stimulus=_stimulus_name(spec.stimulus_or_default),
        mean_edge_distance=float(d.mean()) if len(d) else None,
        sd_edge_distance=float(d.std()) if len(d) else None,
        max_edge_distance=float(d.max()) if len(d) else None,
        edge_estimates=len(d),
        total_taps=log.tap_count,
        model_taps=model.n,
        lines_collected=model.line_count,
        loop_closed=log.status == "closed",
        steps=log.steps,
        failure_reason=log.failure_reason,
    )
    return OnlineResult(report, log, stim)


def load_spec(path) -> ExperimentSpec:
    """Read an ``ExperimentSpec`` from a flat JSON config file."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> ExperimentSpec:
    raw = dict(raw)
    if "out" in raw:
        raw["out_dir"] = raw.pop("out")
    for key in ("r_range", "angle_range"):
        if key in raw:
            raw[key] = tuple(float(v) for v in raw[key])
    if "sensor" in raw:
        s = raw.pop("sensor")
        raw["sensor"] = SensorModel(**{k: v for k, v in s.items() if k != "n_pins"})
    cfg = raw.pop("config", None) or {}
    spec = ExperimentSpec().with_overrides(**cfg)
    return spec.with_overrides(**raw)
