"""
Auto-labelling of tap lines by their dissimilarity to the reference tap.

A line of taps at known spacing is compared against the on-edge reference
frame; the least dissimilar offset is taken as the edge and every tap is
labelled by its displacement from it. The minimum is refined below the tap
spacing with a one-dimensional GP fitted to the profile alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gp import KernelParams, NoiseLevel, fit_kernel_params, gp_posterior

GRID_STEP = 0.01  # mm
# Profiles whose total contrast is below this many noise sd carry no edge.
FLAT_CONTRAST = 6.0


class LabellingError(ValueError):
    """A line of taps could not be labelled."""


class EdgeOutsideWindowError(LabellingError):
    """The least dissimilar tap is at an end of the line."""


class FlatProfileError(LabellingError):
    """Dissimilarity barely changes along the line (e.g. all taps over free space)."""


def euclidean_dissim(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"frame length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class DissimilarityProfile:
    offsets: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "offsets", o)
        object.__setattr__(self, "values", v)
        if o.shape != v.shape or o.ndim != 1:
            raise ValueError("offsets and values must be 1-D and the same length")
        if len(o) >= 2:
            d = np.diff(o)
            if np.any(d <= 0):
                raise ValueError("offsets must be strictly increasing")
            if not np.allclose(d, d[0], rtol=1e-6, atol=1e-9):
                raise ValueError("offsets must be evenly spaced")
        if np.any(v < 0):
            raise ValueError("dissimilarities must be non-negative")

    @property
    def spacing(self) -> float:
        return float(self.offsets[1] - self.offsets[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["offset_mm", "dissimilarity"])
            for o, v in zip(self.offsets, self.values):
                w.writerow([f"{o:.6f}", f"{v:.6f}"])

    @classmethod
    def from_csv(cls, path) -> "DissimilarityProfile":
        rows = list(csv.DictReader(open(path, newline="")))
        return cls(np.array([float(r["offset_mm"]) for r in rows]),
                   np.array([float(r["dissimilarity"]) for r in rows]))


def profile_against(offsets, frames, reference) -> DissimilarityProfile:
    return DissimilarityProfile(np.asarray(offsets, dtype=float),
                                np.array([euclidean_dissim(f, reference) for f in frames]))


@dataclass(frozen=True)
class ProfileFit:
    minimum: float
    params: KernelParams
    grid: np.ndarray
    mean: np.ndarray  # posterior mean on grid, in the profile's own units


def fit_profile(profile: DissimilarityProfile, noise: NoiseLevel = NoiseLevel()) -> ProfileFit:
    """GP regression of the profile and the argmin of its posterior mean.

    Values are centred before fitting, so the result does not move when a
    constant is added to the whole profile.
    """
    o, v = profile.offsets, profile.values
    if len(o) < 4:
        raise ValueError("need at least 4 samples to locate a minimum")
    k = int(np.argmin(v))
    if k == 0 or k == len(v) - 1:
        raise EdgeOutsideWindowError(
            f"least dissimilar tap is at the {'start' if k == 0 else 'end'} of the line")
    if np.ptp(v) < FLAT_CONTRAST * noise.sigma_n:
        raise FlatProfileError(f"profile contrast {np.ptp(v):.2f} is below the noise floor")

    centred = v - v.mean()
    span = o[-1] - o[0]
    h = profile.spacing
    X = np.column_stack([o, np.zeros_like(o)])
    init = KernelParams(max(float(centred.std()), 1.0), max(span / 4.0, h), 1.0)
    fit = fit_kernel_params(X, centred, noise, init,
                            bounds=((1e-2, 1e5), (h, 10.0 * span), (1.0, 1.0)))
    grid = np.arange(o[0], o[-1] + GRID_STEP / 2, GRID_STEP)
    mean, _ = gp_posterior(X, centred, grid, fit.params, noise)
    j = int(np.argmin(mean))
    if j == 0 or j == len(grid) - 1:
        raise EdgeOutsideWindowError("smoothed dissimilarity is lowest at an end of the line")
    return ProfileFit(float(grid[j]), fit.params, grid, mean + v.mean())


def locate_minimum(profile: DissimilarityProfile, noise: NoiseLevel = NoiseLevel()) -> float:
    """Offset (mm) of the dissimilarity minimum, resolved to 0.01 mm."""
    return fit_profile(profile, noise).minimum


@dataclass(frozen=True)
class LabelledLine:
    offsets: np.ndarray
    r: np.ndarray
    frames: np.ndarray
    edge_offset: float
    profile: DissimilarityProfile

    @property
    def pairs(self) -> list[tuple[float, np.ndarray]]:
        return [(float(r), f) for r, f in zip(self.r, self.frames)]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.r)


def label_line(taps: Sequence[tuple[float, np.ndarray]], reference,
               noise: NoiseLevel = NoiseLevel()) -> LabelledLine:
    """Label each tap with its displacement ``offset - edge_offset`` from the edge."""
    offsets = np.array([t[0] for t in taps], dtype=float)
    frames = np.array([np.asarray(t[1], dtype=float) for t in taps])
    profile = profile_against(offsets, frames, reference)
    m = locate_minimum(profile, noise)
    return LabelledLine(offsets, offsets - m, frames, m, profile)
