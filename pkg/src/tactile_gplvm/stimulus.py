"""Planar stimuli: closed parametric contours with edge-profile properties."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

N_CONTOUR_SAMPLES = 10_000
_OVERSAMPLE = 8

KINDS = ("circle", "flower", "rounded_rect", "banana")

# Geometry defaults are configuration choices, not measurements of real objects.
DEFAULTS = {
    "circle": {"radius": 50.0},
    "flower": {"radius": 50.0, "amplitude": 10.0, "petals": 5},
    "rounded_rect": {"size_x": 75.0, "size_y": 50.0, "corner_radius": 6.0},
    "banana": {"length": 150.0, "width": 60.0, "bend": 25.0},
}
PROFILE_DEFAULTS = {"sharpness": 1.0, "compliance": 1.0, "height": 3.0}


@dataclass(frozen=True)
class ClosestPoints:
    distance: np.ndarray  # signed, negative inside
    point: np.ndarray  # (m, 2) closest contour point
    normal: np.ndarray  # (m, 2) outward unit normal there
    s: np.ndarray  # contour parameter of the closest point


@dataclass
class Stimulus:
    """Closed counter-clockwise contour ``p(s), s in [0, 1)`` plus edge profile.

    ``sharpness`` and ``compliance`` are functions of ``s``; ``height`` is a
    constant. ``start_s`` marks where experiments begin by default.
    """

    kind: str
    params: dict
    contour: Callable[[np.ndarray], np.ndarray]
    sharpness: Callable[[np.ndarray], np.ndarray]
    compliance: Callable[[np.ndarray], np.ndarray]
    height: float
    start_s: float = 0.0
    _samples: np.ndarray = field(init=False, repr=False)
    _s_samples: np.ndarray = field(init=False, repr=False)
    _length: float = field(init=False, repr=False)
    _tree: cKDTree = field(init=False, repr=False)
    _seg_normals: np.ndarray = field(init=False, repr=False)
    _vertex_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("height must be > 0")
        s_fine = np.linspace(0.0, 1.0, N_CONTOUR_SAMPLES * _OVERSAMPLE + 1)
        pts = self.contour(s_fine)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self._length = float(cum[-1])
        # resample at equal arc length
        targets = np.linspace(0.0, self._length, N_CONTOUR_SAMPLES, endpoint=False)
        self._s_samples = np.interp(targets, cum, s_fine)
        self._samples = self.contour(self._s_samples)
        self._tree = cKDTree(self._samples)
        seg = np.roll(self._samples, -1, axis=0) - self._samples
        seg_n = np.column_stack([seg[:, 1], -seg[:, 0]])
        self._seg_normals = seg_n / np.linalg.norm(seg_n, axis=1, keepdims=True)
        vn = self._seg_normals + np.roll(self._seg_normals, 1, axis=0)
        self._vertex_normals = vn / np.linalg.norm(vn, axis=1, keepdims=True)
        sh = self.sharpness(self._s_samples)
        co = self.compliance(self._s_samples)
        if np.any(sh <= 0):
            raise ValueError("edge sharpness must be > 0")
        if np.any((co <= 0) | (co > 1)):
            raise ValueError("compliance must lie in (0, 1]")

    @property
    def perimeter(self) -> float:
        return self._length

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    def point(self, s: float) -> np.ndarray:
        return self.contour(np.array([s % 1.0]))[0]

    def outward_normal(self, s: float) -> np.ndarray:
        h = 1e-6
        a, b = self.contour(np.array([(s - h) % 1.0, (s + h) % 1.0]))
        t = b - a
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    def closest(self, points) -> ClosestPoints:
        """Closest contour points with signed distances (negative inside)."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        _, idx = self._tree.query(P)
        m = N_CONTOUR_SAMPLES
        best_d2 = np.full(len(P), np.inf)
        best_q = np.empty_like(P)
        best_n = np.empty_like(P)
        best_sign_n = np.empty_like(P)
        best_s = np.empty(len(P))
        for lo in (idx - 1, idx):
            i0, i1 = lo % m, (lo + 1) % m
            a = self._samples[i0]
            ab = self._samples[i1] - a
            u = np.clip(np.sum((P - a) * ab, axis=1) / np.sum(ab * ab, axis=1), 0.0, 1.0)
            q = a + u[:, None] * ab
            d2 = np.sum((P - q) ** 2, axis=1)
            better = d2 < best_d2
            best_d2[better] = d2[better]
            best_q[better] = q[better]
            seg_n = self._seg_normals[i0]
            best_n[better] = seg_n[better]
            # at a vertex the side test needs the vertex pseudo-normal
            sign_n = np.where((u <= 0.0)[:, None], self._vertex_normals[i0],
                              np.where((u >= 1.0)[:, None], self._vertex_normals[i1], seg_n))
            best_sign_n[better] = sign_n[better]
            s0 = self._s_samples[i0]
            s1 = self._s_samples[i1]
            s1 = np.where(s1 < s0, s1 + 1.0, s1)
            best_s[better] = ((s0 + u * (s1 - s0)) % 1.0)[better]
        side = np.sum((P - best_q) * best_sign_n, axis=1)
        dist = np.sqrt(best_d2)
        dist = np.where(side < 0, -dist, dist)
        normal = best_n
        return ClosestPoints(dist, best_q, normal, best_s)

    def transformed(self, angle: float, pivot=(0.0, 0.0), shift=(0.0, 0.0)) -> "Stimulus":
        """Copy rotated by ``angle`` about ``pivot`` and then translated by ``shift``."""
        c, s_ = math.cos(angle), math.sin(angle)
        R = np.array([[c, -s_], [s_, c]])
        pv = np.asarray(pivot, dtype=float)
        sh = np.asarray(shift, dtype=float)
        base = self.contour

        def contour(s):
            return (base(s) - pv) @ R.T + pv + sh

        params = dict(self.params)
        params["rotation"] = params.get("rotation", 0.0) + angle
        return Stimulus(self.kind, params, contour, self.sharpness, self.compliance,
                        self.height, self.start_s)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}


def signed_edge_distance(stimulus: Stimulus, point) -> float | np.ndarray:
    """Shortest distance to the contour; negative inside the object."""
    p = np.asarray(point, dtype=float)
    d = stimulus.closest(p).distance
    return float(d[0]) if p.ndim == 1 else d


def _const(v: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda s: np.full(np.shape(s), float(v))


def _positive(params: dict, *names: str):
    for name in names:
        if not params[name] > 0:
            raise ValueError(f"{name} must be > 0, got {params[name]}")


def _circle(p):
    _positive(p, "radius")
    R = p["radius"]
    return lambda s: R * np.column_stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)])


def _flower(p):
    _positive(p, "radius", "petals")
    R, A, k = p["radius"], p["amplitude"], int(p["petals"])
    if not 0 <= A < R:
        raise ValueError("flower amplitude must be in [0, radius)")

    def contour(s):
        a = 2 * np.pi * s
        rho = R + A * np.cos(k * a)
        return np.column_stack([rho * np.cos(a), rho * np.sin(a)])

    return contour


def _rounded_rect(p):
    _positive(p, "size_x", "size_y", "corner_radius")
    W, H, c = p["size_x"], p["size_y"], p["corner_radius"]
    if 2 * c > min(W, H):
        raise ValueError("corner radius too large for rectangle")
    hx, hy = W / 2 - c, H / 2 - c
    # arc-length pieces starting at the middle of the right side, counter-clockwise
    pieces = [
        ("line", (W / 2, 0.0), (0.0, 1.0), hy),
        ("arc", (hx, hy), 0.0, c * np.pi / 2),
        ("line", (hx, H / 2), (-1.0, 0.0), 2 * hx),
        ("arc", (-hx, hy), np.pi / 2, c * np.pi / 2),
        ("line", (-W / 2, hy), (0.0, -1.0), 2 * hy),
        ("arc", (-hx, -hy), np.pi, c * np.pi / 2),
        ("line", (-hx, -H / 2), (1.0, 0.0), 2 * hx),
        ("arc", (hx, -hy), 1.5 * np.pi, c * np.pi / 2),
        ("line", (W / 2, -hy), (0.0, 1.0), hy),
    ]
    lengths = np.array([pc[3] for pc in pieces])
    bounds = np.concatenate([[0.0], np.cumsum(lengths)])
    total = bounds[-1]

    def contour(s):
        t = (np.asarray(s, dtype=float) % 1.0) * total
        out = np.empty((t.size, 2))
        which = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(pieces) - 1)
        for i, (kind, origin, arg, _) in enumerate(pieces):
            sel = which == i
            if not np.any(sel):
                continue
            u = t[sel] - bounds[i]
            if kind == "line":
                out[sel] = np.asarray(origin) + u[:, None] * np.asarray(arg)
            else:
                ang = arg + u / c
                out[sel] = np.asarray(origin) + c * np.column_stack([np.cos(ang), np.sin(ang)])
        # s = 1 must close onto s = 0 exactly
        out[np.isclose(t, total)] = pieces[0][1]
        return out

    return contour


def _banana(p):
    _positive(p, "length", "width")
    a, b, bend = p["length"] / 2, p["width"] / 2, p["bend"]

    def contour(s):
        t = 2 * np.pi * s
        x = a * np.cos(t)
        return np.column_stack([x, b * np.sin(t) + bend * (x / a) ** 2])

    return contour


_BUILDERS = {"circle": _circle, "flower": _flower, "rounded_rect": _rounded_rect, "banana": _banana}


def make_stimulus(kind: str, params: dict | None = None) -> Stimulus:
    """Build a built-in stimulus.

    Geometry keys per kind (see ``DEFAULTS``) plus optional ``sharpness``,
    ``compliance``, ``height``, ``start_s``, ``rotation`` (rad) and
    ``center`` ([x, y]). The banana also takes ``smooth_sharpness`` for its
    rounded top side.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown stimulus kind {kind!r}; expected one of {KINDS}")
    merged = {**DEFAULTS[kind], **PROFILE_DEFAULTS, **(params or {})}
    _positive(merged, "sharpness", "height")
    if not 0 < merged["compliance"] <= 1:
        raise ValueError("compliance must lie in (0, 1]")
    contour = _BUILDERS[kind](merged)

    sharpness = _const(merged["sharpness"])
    start_s = merged.get("start_s", 0.0)
    if kind == "banana":
        smooth = merged.setdefault("smooth_sharpness", 4.0)
        sharp = merged["sharpness"]
        _positive(merged, "smooth_sharpness")

        def sharpness(s):
            w = ((1.0 + np.sin(2 * np.pi * np.asarray(s))) / 2.0) ** 2
            return sharp + (smooth - sharp) * w

        start_s = merged.get("start_s", 0.75)

    stim = Stimulus(kind, merged, contour, sharpness, _const(merged["compliance"]),
                    float(merged["height"]), float(start_s))
    rot = float(merged.get("rotation", 0.0))
    center = merged.get("center", (0.0, 0.0))
    if rot or any(center):
        stim = stim.transformed(rot, shift=center)
        stim.params = merged
    return stim


# Named scenarios used by the experiment harness.
# The scenario flower and banana are gentler than the kind defaults: with
# 10 mm petals the tips curve tighter (11.6 mm radius) than the sensor is wide.
SCENARIOS = {
    "circle": ("circle", {}),
    "flower": ("flower", {"amplitude": 5.0}),
    "brick": ("rounded_rect", {"compliance": 0.5}),
    "banana": ("banana", {"width": 80.0, "bend": 15.0}),
    # long straight edge for the offline protocol; start_s sits mid-side
    "edge": ("rounded_rect", {"size_x": 200.0, "size_y": 200.0, "corner_radius": 8.0}),
}


def stimulus_from_spec(spec) -> Stimulus:
    """Accept a scenario name, a ``{"kind", "params"}`` dict, or a JSON file path."""
    if isinstance(spec, Stimulus):
        return spec
    if isinstance(spec, str):
        if spec in SCENARIOS:
            kind, params = SCENARIOS[spec]
            return make_stimulus(kind, params)
        if spec in KINDS:
            return make_stimulus(spec)
        spec = json.loads(Path(spec).read_text())
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    return make_stimulus(spec["kind"], spec.get("params", {}))
