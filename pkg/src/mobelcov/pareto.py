"""Solution-set machinery for two maximization objectives.

All functions treat points as rows of an (n, 2) array in maximization
orientation (the environment's rewards are negative costs, so "better" means
closer to zero). Everything here is pure and reentrant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point set, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point sets must be finite")
    return arr


def dominates(p: np.ndarray, q: np.ndarray) -> bool:
    """Weak Pareto dominance: p >= q everywhere and p != q."""
    return bool(np.all(p >= q) and np.any(p > q))


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of points not weakly dominated by any other point.

    Duplicate points keep exactly one representative (the first occurrence).
    """
    pts = as_points(points)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=bool)
    ge = np.all(pts[:, None, :] >= pts[None, :, :], axis=2)
    gt = np.any(pts[:, None, :] > pts[None, :, :], axis=2)
    dominated = np.any(ge & gt, axis=0)
    mask = ~dominated
    # Collapse exact duplicates among the survivors.
    seen = set()
    for i in np.flatnonzero(mask):
        key = (pts[i, 0], pts[i, 1])
        if key in seen:
            mask[i] = False
        else:
            seen.add(key)
    return mask


def nondominated_filter(points) -> np.ndarray:
    pts = as_points(points)
    return pts[nondominated_mask(pts)]


def hypervolume_2d(points, ref) -> float:
    """Area jointly dominated by the set and bounded below by `ref`.

    Points that do not weakly dominate the reference point are ignored.
    Computed by sorting the non-dominated survivors and sweeping rectangles.
    """
    pts = as_points(points)
    ref = np.asarray(ref, dtype=float)
    if ref.shape != (2,):
        raise ValueError("reference point must have 2 components")
    if len(pts) == 0:
        return 0.0
    pts = pts[np.all(pts >= ref, axis=1)]
    if len(pts) == 0:
        return 0.0
    pts = nondominated_filter(pts)
    order = np.argsort(-pts[:, 0])  # x descending; y strictly ascends along the front
    area = 0.0
    y_prev = ref[1]
    for i in order:
        x, y = pts[i]
        area += (x - ref[0]) * (y - y_prev)
        y_prev = y
    return float(area)


def epsilon_indicators(front, coverage) -> tuple[float, float]:
    """Additive epsilon gaps of `coverage` against a reference `front`.

    For every front point, the gap is the smallest margin by which some
    coverage point comes within epsilon on both objectives, floored at zero.
    Returns (worst gap, mean gap).
    """
    f = as_points(front)
    c = as_points(coverage)
    if len(f) == 0 or len(c) == 0:
        raise ValueError("front and coverage set must be non-empty")
    diffs = f[:, None, :] - c[None, :, :]          # (n_front, n_cov, 2)
    eps_per_pair = diffs.max(axis=2)               # worst objective per pair
    eps_per_front = eps_per_pair.min(axis=1)       # best coverage point per front point
    eps_per_front = np.maximum(eps_per_front, 0.0)
    return float(eps_per_front.max()), float(eps_per_front.mean())


@dataclass(frozen=True)
class NormalizationBounds:
    """Per-objective (lo, hi) used to map raw returns onto [0, 1]."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        for lo, hi in zip(self.lo, self.hi):
            if hi < lo:
                raise ValueError("bounds must satisfy hi >= lo per objective")

    @classmethod
    def from_point_sets(cls, *sets) -> "NormalizationBounds":
        stacked = np.vstack([as_points(s) for s in sets if len(as_points(s))])
        if len(stacked) == 0:
            raise ValueError("cannot derive bounds from empty sets")
        return cls(lo=tuple(stacked.min(axis=0)), hi=tuple(stacked.max(axis=0)))


def normalize_points(points, bounds: NormalizationBounds) -> np.ndarray:
    """Map each coordinate to (x - lo) / (hi - lo), clipped to [0, 1].

    A degenerate objective (hi == lo) maps to 0.5 with a logged warning.
    """
    pts = as_points(points).copy()
    for o in range(2):
        lo, hi = bounds.lo[o], bounds.hi[o]
        if hi == lo:
            logger.warning("degenerate normalization bounds on objective %d (lo == hi == %g); "
                           "mapping to 0.5", o, lo)
            pts[:, o] = 0.5
        else:
            pts[:, o] = np.clip((pts[:, o] - lo) / (hi - lo), 0.0, 1.0)
    return pts
