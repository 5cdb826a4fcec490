"""
Forward model of a pin-array tactile sensor and a virtual robot carrying it.

Sensor frame: the local x axis is the Localisation direction (positive
points away from the object when tracking anticlockwise) and the local y
axis is the direction of travel. ``Pose2D.theta`` is the world angle of
travel, so the local x axis sits at ``theta - pi/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .stimulus import Stimulus
from .trajectory import TrajectoryLog

SHEAR_FRACTION = 0.3
BULGE_FRACTION = 0.7


def wrap_angle(a: float) -> float:
    """Map an angle onto (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError(f"pose must be finite, got {self}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def travel(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def lateral(self) -> np.ndarray:
        """World direction of the sensor's local x axis (Localisation line)."""
        return np.array([math.sin(self.theta), -math.cos(self.theta)])

    def moved(self, delta) -> "Pose2D":
        return Pose2D(self.x + float(delta[0]), self.y + float(delta[1]), self.theta)


def theta_for_lateral(lateral) -> float:
    """Pose angle whose local x axis points along ``lateral``."""
    return math.atan2(lateral[1], lateral[0]) + math.pi / 2


def hex_pin_layout(rings: int = 6, radius: float = 20.0) -> np.ndarray:
    """Centred hexagonal pin grid; ``rings=6`` gives 127 pins."""
    spacing = radius / rings
    pts = []
    for q in range(-rings, rings + 1):
        for r in range(max(-rings, -q - rings), min(rings, -q + rings) + 1):
            pts.append((spacing * (q + r / 2.0), spacing * r * math.sqrt(3) / 2.0))
    pts = np.array(pts)
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return pts[order]


@dataclass(frozen=True)
class SensorModel:
    pin_positions: np.ndarray = field(default_factory=hex_pin_layout)
    contact_gain: float = 12.0
    noise_sd: float = 1.14
    # sd (mm) of the Gaussian fall-off of indentation with pin radius; the
    # dome only presses fully near its centre. None gives a uniform disc.
    footprint_sd: float | None = 11.0

    def __post_init__(self):
        if self.footprint_sd is not None and not self.footprint_sd > 0:
            raise ValueError("footprint_sd must be > 0 or None")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    @property
    def n_pins(self) -> int:
        return len(self.pin_positions)

    @property
    def dim(self) -> int:
        return 2 * self.n_pins

    def without_noise(self) -> "SensorModel":
        return SensorModel(self.pin_positions, self.contact_gain, 0.0, self.footprint_sd)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def pin_world_positions(pose: Pose2D, sensor: SensorModel) -> np.ndarray:
    a = pose.theta - math.pi / 2
    c, s = math.cos(a), math.sin(a)
    return sensor.pin_positions @ np.array([[c, s], [-s, c]]) + pose.xy


def _contact(pose: Pose2D, stimulus: Stimulus, sensor: SensorModel):
    world = pin_world_positions(pose, sensor)
    cp = stimulus.closest(world)
    sig = _sigmoid(-cp.distance / stimulus.sharpness(cp.s))
    depth = stimulus.height * stimulus.compliance(cp.s)
    if sensor.footprint_sd is not None:
        rad = np.linalg.norm(sensor.pin_positions, axis=1)
        depth = depth * np.exp(-0.5 * (rad / sensor.footprint_sd) ** 2)
    return cp, sig, depth


def pin_indentation(pose: Pose2D, stimulus: Stimulus | None, sensor: SensorModel) -> np.ndarray:
    """Indentation (mm) of every pin; zero everywhere without a stimulus."""
    if stimulus is None:
        return np.zeros(sensor.n_pins)
    _, sig, depth = _contact(pose, stimulus, sensor)
    return depth * sig


def tap_signal(pose: Pose2D, stimulus: Stimulus | None, sensor: SensorModel) -> np.ndarray:
    """Noise-free pin deflections as ``(P, 2)`` in the sensor frame."""
    P = sensor.pin_positions
    if stimulus is None:
        return np.zeros_like(P)
    cp, sig, depth = _contact(pose, stimulus, sensor)
    indentation = depth * sig

    # bulge: radially away from the sensor centre, proportional to indentation
    rad = np.linalg.norm(P, axis=1, keepdims=True)
    radial = np.divide(P, rad, out=np.zeros_like(P), where=rad > 0)
    # shear: along the outward contour normal, concentrated in the edge transition
    a = -(pose.theta - math.pi / 2)
    c, s = math.cos(a), math.sin(a)
    n_local = cp.normal @ np.array([[c, s], [-s, c]])
    edge_weight = depth * 4.0 * sig * (1.0 - sig)

    return sensor.contact_gain * (
        BULGE_FRACTION * indentation[:, None] * radial
        + SHEAR_FRACTION * edge_weight[:, None] * n_local
    )


def simulate_tap(pose: Pose2D, stimulus: Stimulus | None, sensor: SensorModel,
                 rng_seed) -> np.ndarray:
    """One tap: flat ``(2P,)`` frame ``[x0, y0, x1, y1, ...]`` with sensor noise."""
    frame = tap_signal(pose, stimulus, sensor).reshape(-1)
    if sensor.noise_sd > 0:
        rng = np.random.default_rng(rng_seed)
        frame = frame + rng.normal(0.0, sensor.noise_sd, frame.shape)
    return frame


class VirtualRobot:
    """Stateful stand-in for the arm: exact moves, seeded taps, everything logged.

    ``remove_object_after`` makes the stimulus vanish once that many taps
    have been taken, which is how the failsafe scenario is staged.
    """

    def __init__(self, stimulus: Stimulus | None, sensor: SensorModel | None = None,
                 seed: int = 0, start: Pose2D | None = None,
                 position_noise_sd: float = 0.0, log: TrajectoryLog | None = None,
                 remove_object_after: int | None = None):
        self.stimulus = stimulus
        self.sensor = sensor or SensorModel()
        self.log = log if log is not None else TrajectoryLog()
        self.position_noise_sd = position_noise_sd
        self.remove_object_after = remove_object_after
        self._rng = np.random.default_rng(seed)
        self._pose = start or Pose2D(0.0, 0.0, 0.0)
        self.taps = 0

    def current_pose(self) -> Pose2D:
        return self._pose

    def move_to(self, pose: Pose2D) -> None:
        if self.position_noise_sd > 0:
            jitter = self._rng.normal(0.0, self.position_noise_sd, 2)
            pose = pose.moved(jitter)
        self._pose = pose
        self.log.append("move", pose)

    def tap(self) -> np.ndarray:
        if self.remove_object_after is not None and self.taps >= self.remove_object_after:
            self.stimulus = None
        seed = int(self._rng.integers(2**63))
        frame = simulate_tap(self._pose, self.stimulus, self.sensor, seed)
        self.taps += 1
        self.log.append("tap", self._pose, {"index": self.taps})
        return frame
