"""Fixed design matrices: Fourier harmonics for candidate periods and a
local basis (Gaussian kernels or B-splines) for transient deviations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


class NyquistViolationError(ValueError):
    """A candidate period is too short for the sampling rate."""


@dataclass(frozen=True)
class TimeGrid:
    """Sampling times in hours plus the same times rescaled to [0, 1].

    Fourier columns are evaluated in raw hours (periods are stated in
    hours); kernel bases are evaluated on the unit-scaled times.
    """

    times_hours: np.ndarray
    unit_times: np.ndarray

    @property
    def n_times(self) -> int:
        return self.times_hours.size

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.times_hours)))


def standardize_times(times_hours) -> TimeGrid:
    """Affinely map sampling times onto [0, 1], keeping the raw hours.

    Raises ValueError for fewer than two points or non-increasing times.
    """
    t = np.asarray(times_hours, dtype=float).ravel()
    if t.size < 2:
        raise ValueError(f"need at least 2 sampling times, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sampling times must be strictly increasing")
    unit = (t - t[0]) / (t[-1] - t[0])
    return TimeGrid(times_hours=t, unit_times=unit)


@dataclass(frozen=True)
class PeriodSet:
    """Candidate periods in hours, shortest first."""

    periods_hours: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.periods_hours, dtype=float).ravel()
        if p.size < 1:
            raise ValueError("need at least one candidate period")
        if np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise ValueError("periods must be positive and strictly increasing")
        object.__setattr__(self, "periods_hours", p)

    @property
    def n_periods(self) -> int:
        return self.periods_hours.size


@dataclass(frozen=True)
class DesignPair:
    """Fourier matrix B (T x 2q, sin/cos pairs per period) and local-basis
    matrix C (T x T_local), with the kernel settings that produced C."""

    B: np.ndarray
    C: np.ndarray
    kernel_kind: str
    bandwidth: float | None
    knots: np.ndarray
    grid: TimeGrid = field(repr=False)
    periods: PeriodSet = field(repr=False)

    @property
    def n_pairs(self) -> int:
        return self.B.shape[1] // 2

    @property
    def n_local(self) -> int:
        return self.C.shape[1]


def fourier_design(grid: TimeGrid, periods: PeriodSet) -> np.ndarray:
    """Sin/cos columns at each candidate period, evaluated in raw hours.

    Column 2m-1 is sin(2*pi*t/w_m) and column 2m is cos(2*pi*t/w_m).
    Periods strictly below twice the minimum sampling interval are
    rejected (the boundary period equal to 2x spacing is allowed).
    """
    limit = 2.0 * grid.min_spacing
    bad = periods.periods_hours[periods.periods_hours < limit]
    if bad.size:
        raise NyquistViolationError(
            f"periods {bad.tolist()} are below the Nyquist limit {limit} h"
        )
    t = grid.times_hours
    B = np.empty((t.size, 2 * periods.n_periods))
    for m, w in enumerate(periods.periods_hours):
        ang = 2.0 * np.pi * t / w
        B[:, 2 * m] = np.sin(ang)
        B[:, 2 * m + 1] = np.cos(ang)
    return B


def local_design(
    grid: TimeGrid,
    n_local: int,
    kind: str = "gaussian",
    bandwidth: float | None = 25.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Local-basis matrix on unit time plus its knot locations.

    Gaussian kernels c_l(t) = exp(-bw * (t - knot_l)^2) sit at n_local
    equally spaced knots spanning [0, 1].  The B-spline option evaluates
    a cubic clamped basis, which requires n_local >= 4.
    """
    if n_local < 1:
        raise ValueError("n_local must be >= 1")
    u = grid.unit_times
    if kind == "gaussian":
        if bandwidth is None or bandwidth <= 0:
            raise ValueError("gaussian kernels need a positive bandwidth")
        if n_local == 1:
            knots = np.array([0.5])
        else:
            knots = np.linspace(0.0, 1.0, n_local)
        C = np.exp(-bandwidth * (u[:, None] - knots[None, :]) ** 2)
        return C, knots
    if kind == "bspline":
        degree = 3
        if n_local < degree + 1:
            raise ValueError("cubic B-spline basis needs n_local >= 4")
        interior = np.linspace(0.0, 1.0, n_local - degree + 1)
        knots = np.r_[np.zeros(degree), interior, np.ones(degree)]
        C = BSpline.design_matrix(u, knots, degree, extrapolate=False).toarray()
        return C, knots
    raise ValueError(f"unknown local basis kind {kind!r}")


def make_designs(
    times_hours,
    periods_hours,
    n_local: int,
    kernel_kind: str = "gaussian",
    bandwidth: float | None = 25.0,
) -> DesignPair:
    """Build the (B, C) design pair for a sampling grid."""
    grid = standardize_times(times_hours)
    periods = PeriodSet(np.asarray(periods_hours, dtype=float))
    B = fourier_design(grid, periods)
    C, knots = local_design(grid, n_local, kind=kernel_kind, bandwidth=bandwidth)
    return DesignPair(
        B=B,
        C=C,
        kernel_kind=kernel_kind,
        bandwidth=bandwidth,
        knots=knots,
        grid=grid,
        periods=periods,
    )
