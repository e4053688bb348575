"""Model state: latent and thresholded coefficients, loadings, factors,
noise, and the deterministic maps and likelihood tying them together.

Each observed trajectory decomposes as a periodic part (Fourier
coefficients `theta`), a local part (kernel coefficients `gamma`), a
shared-factor part (`Lambda @ eta.T`), and Gaussian noise.  The latent
coefficient arrays (`theta_tilde`, `gamma_tilde`) always evolve freely;
the effective arrays are their hard-thresholded images.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import DesignPair, TimeGrid


@dataclass(frozen=True)
class ExpressionMatrix:
    """Observed trajectories: one row per probe, one column per time."""

    values: np.ndarray
    probe_ids: list[str]
    grid: TimeGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("expression values must be a 2-d matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("expression values contain NaN or inf")
        if len(self.probe_ids) != v.shape[0]:
            raise ValueError("probe_ids length must match the row count")
        if self.grid.n_times != v.shape[1]:
            raise ValueError("time grid length must match the column count")
        object.__setattr__(self, "values", v)

    @property
    def n_probes(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]


def row_center(values: np.ndarray) -> np.ndarray:
    """Subtract each row's mean (the model carries no intercept)."""
    v = np.asarray(values, dtype=float)
    return v - v.mean(axis=1, keepdims=True)


@dataclass
class HyperParams:
    """Fixed prior constants.  Defaults follow the synthetic benchmark
    configuration; `a2 > 1` makes loading-column shrinkage increase with
    the column index."""

    a_sigma: float = 1.0
    b_sigma: float = 0.5
    rho: float = 3.0
    a1: float = 2.1
    a2: float = 3.1
    a_theta: float = 1.0
    b_theta: float = 5.0
    a_gamma: float = 1.0
    b_gamma: float = 10.0
    k_init: int = 5

    def __post_init__(self):
        for name in ("a_sigma", "b_sigma", "rho", "a1", "a2",
                     "a_theta", "b_theta", "a_gamma", "b_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.k_init < 1:
            raise ValueError("k_init must be >= 1")


def pair_norms(theta_like: np.ndarray) -> np.ndarray:
    """Euclidean norm of each (sin, cos) coefficient pair: (p, 2q) -> (p, q)."""
    p, two_q = theta_like.shape
    pairs = theta_like.reshape(p, two_q // 2, 2)
    return np.sqrt((pairs ** 2).sum(axis=2))


def apply_theta_thresholds(
    theta_tilde: np.ndarray, thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Zero each sin/cos pair whose norm falls below its threshold.

    Pairs are kept when the norm equals the threshold exactly.  Returns
    the effective coefficients and the (p, q) boolean keep-mask; the two
    members of a pair are always zeroed jointly.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(thresholds < 0):
        raise ValueError("pair thresholds must be nonnegative")
    mask = pair_norms(theta_tilde) >= thresholds
    theta = theta_tilde * np.repeat(mask, 2, axis=1)
    return theta, mask


def apply_gamma_thresholds(
    gamma_tilde: np.ndarray, thresholds_star: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Scalar analogue: zero entries with |value| below their threshold."""
    thresholds_star = np.asarray(thresholds_star, dtype=float)
    if np.any(thresholds_star < 0):
        raise ValueError("local thresholds must be nonnegative")
    mask = np.abs(gamma_tilde) >= thresholds_star
    return gamma_tilde * mask, mask


@dataclass
class ModelState:
    """One MCMC state.  Effective `theta`/`gamma` are derived from the
    latent arrays and thresholds; `refresh_effective` re-syncs them."""

    theta_tilde: np.ndarray      # (p, 2q) latent periodic coefficients
    theta: np.ndarray            # (p, 2q) thresholded periodic coefficients
    theta_mask: np.ndarray       # (p, q) pair keep-mask
    gamma_tilde: np.ndarray      # (p, T_local) latent local coefficients
    gamma: np.ndarray            # (p, T_local) thresholded local coefficients
    gamma_mask: np.ndarray       # (p, T_local) keep-mask
    varpi: np.ndarray            # (p, q) pair thresholds
    varpi_star: np.ndarray       # (p, T_local) scalar thresholds
    W: np.ndarray                # (2q, k) prior-mean map for theta_tilde
    Z: np.ndarray                # (T_local, k) prior-mean map for gamma_tilde
    Lambda: np.ndarray           # (p, k) factor loadings
    eta: np.ndarray              # (T, k) latent factors
    phi: np.ndarray              # (p, k) local loading precisions
    zeta: np.ndarray             # (k,) gamma-process increments
    tau: np.ndarray              # (k,) cumulative products of zeta
    sigma2: np.ndarray           # (p,) residual variances
    K_theta: float               # shared upper bound for varpi
    K_gamma: float               # shared upper bound for varpi_star

    @property
    def n_probes(self) -> int:
        return self.theta_tilde.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.theta_tilde.shape[1] // 2

    @property
    def k(self) -> int:
        return self.Lambda.shape[1]

    def copy(self) -> "ModelState":
        return replace(
            self,
            **{
                f.name: (getattr(self, f.name).copy()
                         if isinstance(getattr(self, f.name), np.ndarray)
                         else getattr(self, f.name))
                for f in self.__dataclass_fields__.values()
            },
        )

    def refresh_effective(self) -> None:
        self.theta, self.theta_mask = apply_theta_thresholds(self.theta_tilde, self.varpi)
        self.gamma, self.gamma_mask = apply_gamma_thresholds(self.gamma_tilde, self.varpi_star)

    def validate(self) -> None:
        """Assert the structural invariants (cheap; used by tests)."""
        assert np.all(self.tau > 0) and np.all(self.zeta > 0) and np.all(self.phi > 0)
        assert np.allclose(self.tau, np.cumprod(self.zeta))
        assert np.all(self.sigma2 > 0)
        assert self.K_theta > 0 and self.K_gamma > 0
        assert np.all(self.varpi >= 0) and np.all(self.varpi <= self.K_theta)
        assert np.all(self.varpi_star >= 0) and np.all(self.varpi_star <= self.K_gamma)
        theta, mask = apply_theta_thresholds(self.theta_tilde, self.varpi)
        assert np.array_equal(theta, self.theta) and np.array_equal(mask, self.theta_mask)
        gamma, gmask = apply_gamma_thresholds(self.gamma_tilde, self.varpi_star)
        assert np.array_equal(gamma, self.gamma) and np.array_equal(gmask, self.gamma_mask)
        assert self.W.shape[1] == self.Z.shape[1] == self.eta.shape[1] == self.k


def fitted_mean(state: ModelState, designs: DesignPair) -> np.ndarray:
    """Per-probe fitted trajectories: B@theta_i + C@gamma_i + eta@lambda_i."""
    if state.eta.shape[1] != state.Lambda.shape[1]:
        raise ValueError(
            f"factor rank mismatch: loadings have {state.Lambda.shape[1]} columns, "
            f"factors have {state.eta.shape[1]}"
        )
    return (
        state.theta @ designs.B.T
        + state.gamma @ designs.C.T
        + state.Lambda @ state.eta.T
    )


def log_likelihood(state: ModelState, data: ExpressionMatrix, designs: DesignPair) -> float:
    """Gaussian log likelihood of the full matrix, rows independent given
    the factors, each with isotropic noise sigma2[i]."""
    if np.any(state.sigma2 <= 0):
        raise ValueError("residual variances must be strictly positive")
    mean = fitted_mean(state, designs)
    if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(state.sigma2)):
        raise ValueError("nonfinite model parameters")
    resid = data.values - mean
    T = data.n_times
    rss = (resid ** 2).sum(axis=1)
    return float(
        -0.5 * T * np.sum(np.log(2.0 * np.pi * state.sigma2))
        - 0.5 * np.sum(rss / state.sigma2)
    )
