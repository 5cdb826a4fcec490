"""
Closed-loop contour following with online model growth.

Bootstrap finds the first two edge points from a triangle of taps and one
labelled line. After that the robot alternates Exploration (extrapolate the
last two edge points) and Localisation (two model-guided taps; if they
disagree by more than the tolerance, collect and label a fresh line and add
it to the model).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dissimilarity import LabellingError, euclidean_dissim, label_line, profile_against
from .model import GplvmModel, augment_model, infer_latent, infer_phi_for_line, line_points
from .sensor import Pose2D, VirtualRobot, theta_for_lateral
from .trajectory import TrajectoryLog

log = logging.getLogger(__name__)


class RunAborted(RuntimeError):
    """The controller cannot continue (labelling failed twice, degenerate geometry)."""


@dataclass(frozen=True)
class ControlConfig:
    step_length: float = 5.0
    taps_per_line: int = 21
    line_halfwidth: float = 10.0
    tolerance: float = 2.0
    max_steps: int | None = None  # None: derive from the contour length
    min_steps: int = 3

    def __post_init__(self):
        if not self.step_length > 0:
            raise ValueError("step_length must be > 0")
        if self.taps_per_line < 4:
            raise ValueError("taps_per_line must be >= 4")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.line_halfwidth > 0:
            raise ValueError("line_halfwidth must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.min_steps < 0:
            raise ValueError("min_steps must be >= 0")


FALLBACK_MAX_STEPS = 500


def default_max_steps(circumference: float, step_length: float) -> int:
    return math.ceil(4.0 * circumference / step_length)


@dataclass(frozen=True)
class EdgeEstimate:
    position: np.ndarray
    along_line: tuple  # (origin xy, unit direction) of the Localisation line
    source: str = "model"

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if not np.all(np.isfinite(pos)):
            raise ValueError("edge estimate must be finite")
        object.__setattr__(self, "position", pos)


def _record_edge(robot: VirtualRobot, est: EdgeEstimate, **payload) -> None:
    theta = robot.current_pose().theta
    robot.log.append("edge_estimate", Pose2D(est.position[0], est.position[1], theta),
                     {"source": est.source, **payload})


def _collect_line(robot: VirtualRobot, origin: np.ndarray, theta: float,
                  offsets: np.ndarray) -> list[tuple[float, np.ndarray]]:
    lateral = Pose2D(0.0, 0.0, theta).lateral
    taps = []
    for o in offsets:
        p = origin + o * lateral
        robot.move_to(Pose2D(p[0], p[1], theta))
        taps.append((float(o), robot.tap()))
    return taps


def _add_line(robot: VirtualRobot, model: GplvmModel, labelled, phi: float | None,
              name: str) -> GplvmModel:
    if phi is None:
        phi = infer_phi_for_line(labelled.pairs, model)
    pts = line_points(labelled.r, labelled.frames, phi, name)
    model = augment_model(model, pts)
    pose = robot.current_pose()
    robot.log.append("line_collection", pose, {
        "line": name, "taps": len(pts), "edge_offset": labelled.edge_offset, "phi": phi})
    robot.log.append("model_update", pose, {
        "n": model.n, "line_count": model.line_count, "sigma_f": model.params.sigma_f,
        "l_r": model.params.l_r, "l_phi": model.params.l_phi})
    return model


def exploration_step(e_prev2: EdgeEstimate, e_prev1: EdgeEstimate,
                     config: ControlConfig) -> Pose2D:
    """Next pose one step along the ray from ``e_prev2`` through ``e_prev1``."""
    a = np.asarray(getattr(e_prev2, "position", e_prev2), dtype=float)
    b = np.asarray(getattr(e_prev1, "position", e_prev1), dtype=float)
    d = b - a
    norm = float(np.hypot(*d))
    if norm < 1e-9:
        raise ValueError("coincident edge estimates give no exploration direction")
    d /= norm
    p = b + config.step_length * d
    return Pose2D(p[0], p[1], math.atan2(d[1], d[0]))


def localisation_step(robot: VirtualRobot, model: GplvmModel,
                      config: ControlConfig) -> tuple[EdgeEstimate, GplvmModel]:
    """Correct the exploration pose onto the edge along the perpendicular line."""
    start = robot.current_pose()
    origin, theta, lateral = start.xy, start.theta, start.lateral
    line = (origin, lateral)

    first = infer_latent(robot.tap(), model)
    moved = origin - first.r * lateral
    robot.move_to(Pose2D(moved[0], moved[1], theta))
    second = infer_latent(robot.tap(), model)

    if abs(second.r) <= config.tolerance and not (first.low_confidence or second.low_confidence):
        est = EdgeEstimate(moved - second.r * lateral, line, "model")
        _record_edge(robot, est, r_first=first.r, r_second=second.r)
        return est, model

    log.debug("model inconsistent (r1=%.2f, r2=%.2f); collecting a line", first.r, second.r)
    name = f"line{model.line_count + 1}"
    h = config.line_halfwidth
    for width in (h, 1.5 * h):
        offsets = np.linspace(-width, width, config.taps_per_line)
        taps = _collect_line(robot, origin, theta, offsets)
        try:
            labelled = label_line(taps, model.reference_tap, model.noise)
            break
        except LabellingError as exc:
            log.debug("labelling failed over +/-%.1f mm: %s", width, exc)
            failure = exc
    else:
        raise RunAborted(f"localisation line could not be labelled: {failure}")

    model = _add_line(robot, model, labelled, None, name)
    est = EdgeEstimate(origin + labelled.edge_offset * lateral, line, "line")
    _record_edge(robot, est, r_first=first.r, r_second=second.r)
    return est, model


def bootstrap(robot: VirtualRobot, model: GplvmModel,
              config: ControlConfig) -> tuple[EdgeEstimate, EdgeEstimate, GplvmModel]:
    """Find the first two edge points starting from the robot's current pose."""
    p0 = robot.current_pose()
    L = config.step_length
    ref = model.reference_tap
    corners = [p0.xy, p0.xy + L * p0.lateral, p0.xy + L * p0.travel]
    d = []
    for c in corners:
        robot.move_to(Pose2D(c[0], c[1], p0.theta))
        d.append(euclidean_dissim(robot.tap(), ref))
    grad = (d[1] - d[0]) / L * p0.lateral + (d[2] - d[0]) / L * p0.travel
    if np.hypot(*grad) == 0:
        raise RunAborted("triangle taps show no dissimilarity gradient")
    descent = -grad / np.hypot(*grad)

    # The descent direction is taken to point into the object, so the
    # Localisation axis (sensor local x) is its reverse.
    lateral = -descent
    theta = theta_for_lateral(lateral)
    h = config.line_halfwidth
    offsets = np.linspace(-2 * h, 0.0, config.taps_per_line)
    taps = _collect_line(robot, p0.xy, theta, offsets)
    try:
        labelled = label_line(taps, ref, model.noise)
    except LabellingError as exc:
        log.debug("bootstrap line failed (%s); re-centring on its least dissimilar tap", exc)
        centre = offsets[int(np.argmin(profile_against(offsets, [t[1] for t in taps], ref).values))]
        offsets = centre + np.linspace(-h, h, config.taps_per_line)
        try:
            labelled = label_line(_collect_line(robot, p0.xy, theta, offsets), ref, model.noise)
        except LabellingError as exc2:
            raise RunAborted(f"bootstrap line could not be labelled: {exc2}") from exc2
    model = _add_line(robot, model, labelled, 0.0, "line1")
    e1 = EdgeEstimate(p0.xy + labelled.edge_offset * lateral, (p0.xy, lateral), "line")
    robot.move_to(Pose2D(e1.position[0], e1.position[1], theta))
    _record_edge(robot, e1, bootstrap=True)

    nxt = e1.position + L * Pose2D(0.0, 0.0, theta).travel
    robot.move_to(Pose2D(nxt[0], nxt[1], theta))
    e2, model = localisation_step(robot, model, config)
    return e1, e2, model


def run_contour_following(robot: VirtualRobot, model: GplvmModel,
                          config: ControlConfig) -> TrajectoryLog:
    """Bootstrap, then explore and localise until the loop closes.

    The loop is closed once the newest edge estimate is within one step of
    the first one and at least ``config.min_steps`` steps have been taken.
    Failures end the run with ``log.status == "failed"``; nothing is raised.
    """
    trace = robot.log
    trace.final_model = model
    max_steps = config.max_steps
    if max_steps is None:
        stim = robot.stimulus
        max_steps = (default_max_steps(stim.perimeter, config.step_length)
                     if stim is not None else FALLBACK_MAX_STEPS)
    try:
        e1, e2, model = bootstrap(robot, model, config)
    except (RunAborted, ValueError) as exc:
        trace.fail(f"bootstrap: {exc}")
        return trace
    trace.final_model = model
    prev2, prev1 = e1, e2
    steps = 0
    while True:
        if steps >= config.min_steps and np.hypot(*(prev1.position - e1.position)) <= config.step_length:
            trace.status = "closed"
            break
        if steps >= max_steps:
            trace.fail(f"max_steps ({max_steps}) reached without closing the loop")
            break
        try:
            robot.move_to(exploration_step(prev2, prev1, config))
            est, model = localisation_step(robot, model, config)
        except (RunAborted, ValueError) as exc:
            trace.fail(f"step {steps + 1}: {exc}")
            break
        trace.final_model = model
        prev2, prev1 = prev1, est
        steps += 1
    trace.steps = steps
    return trace
