"""Power-law fitting of decay profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePointsError


@dataclass(frozen=True)
class FitResult:
    """Least-squares fit of value = c / (1 + r)^alpha_hat in log space."""

    c: float
    alpha_hat: float
    rmse: float
    n_points: int


def fit_power_law(points) -> FitResult:
    """Fit log v against log(1 + r) for points (r >= 1, v > 0).

    Needs at least four points and at least two distinct distances."""
    pts = [(float(r), float(v)) for r, v in points]
    if len(pts) < 4:
        raise DegeneratePointsError(f"need at least 4 points, got {len(pts)}")
    for r, v in pts:
        if r < 1.0:
            raise ValueError(f"distances must be >= 1, got {r}")
        if v <= 0.0:
            raise ValueError(f"values must be positive, got {v}")
    r = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.ptp(r) == 0.0:
        raise DegeneratePointsError("all points share one distance")
    x = np.log1p(r)
    y = np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return FitResult(
        c=float(np.exp(intercept)),
        alpha_hat=float(-slope),
        rmse=float(np.sqrt(np.mean(resid**2))),
        n_points=len(pts),
    )


def decay_window(points, r_min: float = 2.0, outer_fraction: float = 0.25):
    """Default fit window: drop r < r_min and the outer quarter of distances
    (finite-box edges distort both ends of a decay profile)."""
    pts = sorted((float(r), float(v)) for r, v in points)
    if not pts:
        return []
    r_max = pts[-1][0]
    cut = (1.0 - outer_fraction) * r_max
    kept = [(r, v) for r, v in pts if r_min <= r <= cut]
    return kept if len(kept) >= 4 else pts
