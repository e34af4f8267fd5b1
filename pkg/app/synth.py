# ───────────────────────────────────────────────────────────────────────────────
# app/synth.py
"""2D Gaussian-mixture data and the sample-quality metrics used in place of
visual inspection: mode coverage, high-quality fraction, histogram JS."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import rel_entr

from app.core import ContractViolation, DimensionError

Bounds = Tuple[Tuple[float, float], Tuple[float, float]]

HIST_SMOOTHING = 1e-9
DEFAULT_RADIUS_MULT = 3.0


@dataclass(frozen=True)
class GaussianMixture2D:
    centers: np.ndarray
    std: float
    weights: np.ndarray

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if centers.shape[0] < 1:
            raise ContractViolation("GaussianMixture2D needs at least one center")
        if not self.std > 0:
            raise ContractViolation(f"GaussianMixture2D std must be > 0, got {self.std}")
        if weights.shape[0] != centers.shape[0]:
            raise DimensionError("GaussianMixture2D.weights", weights.shape, (centers.shape[0],))
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ContractViolation("GaussianMixture2D weights must be >= 0 and sum to 1")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "std", float(self.std))

    @classmethod
    def ring(cls, n_modes: int = 8, radius: float = 2.0, std: float = 0.02) -> "GaussianMixture2D":
        angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
        centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return cls(centers=centers, std=std, weights=np.full(n_modes, 1.0 / n_modes))

    def shifted(self, offset: Union[float, Sequence[float]]) -> "GaussianMixture2D":
        return GaussianMixture2D(self.centers + np.asarray(offset, dtype=np.float64), self.std, self.weights)

    @property
    def n_modes(self) -> int:
        return self.centers.shape[0]

    def bounds(self, pad: Optional[float] = None) -> Bounds:
        """Bounding box of the centers, padded by max(0.5, 6·std) unless given."""
        pad = max(0.5, 6.0 * self.std) if pad is None else pad
        lo = self.centers.min(axis=0) - pad
        hi = self.centers.max(axis=0) + pad
        return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise DimensionError("SampleSet", points.shape, ("n", 2))
        if not np.all(np.isfinite(points)):
            raise ContractViolation("SampleSet points must be finite")
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def to_csv(self, path: Union[str, os.PathLike]) -> None:
        np.savetxt(path, self.points, fmt="%.17g", delimiter=",", header="x,y", comments="")

    @classmethod
    def from_csv(cls, path: Union[str, os.PathLike], seed: Optional[int] = None) -> "SampleSet":
        points = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(points.reshape(-1, 2), seed=seed)


def sample_mixture(
    mix: GaussianMixture2D,
    n: int,
    seed: Union[int, np.random.Generator],
) -> SampleSet:
    """Pick a center by weight, add N(0, std² I). A Generator may be passed to
    continue an existing stream; the SampleSet then carries no seed."""
    if n < 1:
        raise ContractViolation(f"sample_mixture needs n >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(mix.n_modes, size=n, p=mix.weights)
    points = mix.centers[idx] + mix.std * rng.standard_normal((n, 2))
    return SampleSet(points, seed=None if isinstance(seed, np.random.Generator) else int(seed))


@dataclass(frozen=True)
class ModeReport:
    counts: np.ndarray
    covered: int
    hq_fraction: float

    @property
    def n_modes(self) -> int:
        return self.counts.size

    def to_dict(self) -> Dict[str, Any]:
        return {
            "counts": self.counts.tolist(),
            "covered": self.covered,
            "n_modes": self.n_modes,
            "hq_fraction": self.hq_fraction,
        }


def default_min_count(n: int, n_modes: int) -> int:
    return max(1, n // (10 * n_modes))


def mode_report(
    samples: Union[SampleSet, np.ndarray],
    mix: GaussianMixture2D,
    radius_mult: float = DEFAULT_RADIUS_MULT,
    min_count: Optional[int] = None,
) -> ModeReport:
    """Each sample goes to its nearest center and counts there only if it lies
    within radius_mult·std. A mode is covered at >= min_count such samples."""
    points = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=np.float64)
    if radius_mult <= 0:
        raise ContractViolation(f"radius_mult must be > 0, got {radius_mult}")
    if min_count is None:
        min_count = default_min_count(points.shape[0], mix.n_modes)
    if min_count < 1:
        raise ContractViolation(f"min_count must be >= 1, got {min_count}")
    if points.shape[0] == 0:
        return ModeReport(np.zeros(mix.n_modes, dtype=np.int64), 0, 0.0)

    dist = cdist(points, mix.centers)
    nearest = dist.argmin(axis=1)
    within = dist[np.arange(points.shape[0]), nearest] <= radius_mult * mix.std
    counts = np.bincount(nearest[within], minlength=mix.n_modes)
    return ModeReport(
        counts=counts,
        covered=int(np.sum(counts >= min_count)),
        hq_fraction=float(within.mean()),
    )


def _joint_bounds(a: np.ndarray, b: np.ndarray) -> Bounds:
    both = np.vstack([a, b])
    lo, hi = both.min(axis=0), both.max(axis=0)
    # degenerate axis (all points equal) still needs a non-empty range
    hi = np.where(hi > lo, hi, lo + 1.0)
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def _binned(points: np.ndarray, grid: int, bounds: Bounds) -> np.ndarray:
    (x0, x1), (y0, y1) = bounds
    x = np.clip(points[:, 0], x0, x1)
    y = np.clip(points[:, 1], y0, y1)
    hist, _, _ = np.histogram2d(x, y, bins=grid, range=[[x0, x1], [y0, y1]])
    hist = hist.ravel() + HIST_SMOOTHING
    return hist / hist.sum()


def histogram_js(
    a: Union[SampleSet, np.ndarray],
    b: Union[SampleSet, np.ndarray],
    grid: int = 32,
    bounds: Optional[Bounds] = None,
) -> float:
    """½KL(p‖m) + ½KL(q‖m) between grid×grid histograms; points outside
    `bounds` are clipped onto the border bins."""
    pa = a.points if isinstance(a, SampleSet) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, SampleSet) else np.asarray(b, dtype=np.float64)
    if grid < 2:
        raise ContractViolation(f"histogram grid must be >= 2, got {grid}")
    bounds = bounds or _joint_bounds(pa, pb)
    p = _binned(pa, grid, bounds)
    q = _binned(pb, grid, bounds)
    m = 0.5 * (p + q)
    js = 0.5 * float(np.sum(rel_entr(p, m))) + 0.5 * float(np.sum(rel_entr(q, m)))
    return min(max(js, 0.0), math.log(2.0))
