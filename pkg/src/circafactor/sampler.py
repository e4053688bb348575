"""MCMC kernel: conditional updates for every block of the model, the
sweep driver, rank adaptation for the loading matrix, and the archive of
retained posterior draws.

Reproducibility contract: every update kind in every sweep draws from its
own counter-based RNG substream keyed by (seed, sweep, update kind), so a
chain is bit-reproducible and a resumed chain is identical to an
uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .basis import DesignPair
from .model import (
    ExpressionMatrix,
    HyperParams,
    ModelState,
    apply_gamma_thresholds,
    apply_theta_thresholds,
    pair_norms,
)
from .priors import ParetoDist, mgps_prior_draw, pareto_sample

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1

# Fixed registry of update kinds; the integer is part of the RNG keying
# and must never be reordered.
_KINDS = (
    "init", "w", "z", "lambda", "theta_mh", "gamma_mh", "varpi",
    "varpi_star", "k_theta", "k_gamma", "sigma", "eta", "mgps", "adapt",
)
_KIND_INDEX = {name: i for i, name in enumerate(_KINDS)}


def substream(seed: int, sweep: int, kind: str) -> np.random.Generator:
    """Counter-based generator for one update kind within one sweep."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(sweep, _KIND_INDEX[kind]))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ChainConfig:
    """Chain length, thinning, seed, and rank-adaptation schedule.

    Adaptation is attempted at sweep t > adapt_start with probability
    exp(adapt_c0 + adapt_c1 * t); loading columns whose entries all sit
    inside (-adapt_eps, adapt_eps) are dropped, and one fresh column is
    appended when none qualify.
    """

    n_iter: int
    burn_in: int
    thin: int
    seed: int
    adapt: bool = True
    adapt_c0: float = -1.0
    adapt_c1: float = -5e-4
    adapt_start: int = 500
    adapt_eps: float = 1e-4
    min_k: int = 1
    record_lambda_every: int = 10
    checkpoint_every: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adapt_eps <= 0:
            raise ValueError("adapt_eps must be positive")
        if self.min_k < 1:
            raise ValueError("min_k must be >= 1")
        if self.record_lambda_every < 1:
            raise ValueError("record_lambda_every must be >= 1")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


class DesignOps:
    """Design matrices plus cached Gram eigendecompositions.

    The MH proposal covariances (s^-2 * X'X + I)^-1 share eigenvectors
    across probes, so one symmetric eigendecomposition per design matrix
    turns the per-probe proposals into elementwise work.
    """

    def __init__(self, designs: DesignPair):
        self.designs = designs
        self.B = designs.B
        self.C = designs.C
        self.BtB = self.B.T @ self.B
        self.CtC = self.C.T @ self.C
        sB, UB = np.linalg.eigh(self.BtB)
        sC, UC = np.linalg.eigh(self.CtC)
        self.sB, self.UB = np.maximum(sB, 0.0), UB
        self.sC, self.UC = np.maximum(sC, 0.0), UC


# ---------------------------------------------------------------------------
# Conditional updates
# ---------------------------------------------------------------------------

def regression_map_posterior(
    latent: np.ndarray, Lambda: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior moments of the prior-mean map rows.

    latent is (p, n_rows); row l of the map is Gaussian with shared
    covariance (L'L + I)^-1 and mean (L'L + I)^-1 L' latent[:, l].
    """
    k = Lambda.shape[1]
    prec = Lambda.T @ Lambda + np.eye(k)
    cov = np.linalg.inv(prec)
    mean = (cov @ (Lambda.T @ latent)).T
    return mean, cov


def update_regression_map(
    latent: np.ndarray, Lambda: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw the (n_rows, k) prior-mean map from its full conditional."""
    mean, cov = regression_map_posterior(latent, Lambda)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal(mean.shape)
    return mean + z @ chol.T


def loadings_posterior(
    Y: np.ndarray, state: ModelState, ops: DesignOps
) -> tuple[np.ndarray, np.ndarray]:
    """Per-probe Gaussian moments of the loading rows: (p, k) means and
    (p, k, k) covariances."""
    p, k = state.Lambda.shape
    inv_s2 = 1.0 / state.sigma2
    G = state.eta.T @ state.eta
    H = state.W.T @ state.W + state.Z.T @ state.Z
    prec = inv_s2[:, None, None] * G[None, :, :] + H[None, :, :]
    diag = state.phi * state.tau[None, :]
    prec[:, np.arange(k), np.arange(k)] += diag
    resid = Y - state.theta @ ops.B.T - state.gamma @ ops.C.T
    M = (
        inv_s2[:, None] * (resid @ state.eta)
        + state.theta_tilde @ state.W
        + state.gamma_tilde @ state.Z
    )
    cov = np.linalg.inv(prec)
    mean = np.einsum("pij,pj->pi", cov, M)
    return mean, cov


def update_loadings(
    Y: np.ndarray,
    state: ModelState,
    ops: DesignOps,
    rng: np.random.Generator,
) -> None:
    """Draw every loading row from its Gaussian full conditional."""
    mean, cov = loadings_posterior(Y, state, ops)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal(mean.shape)
    state.Lambda = mean + np.einsum("pij,pj->pi", chol, z)


def coefficient_proposal_moments(
    resid_off: np.ndarray,
    prior_mean: np.ndarray,
    X: np.ndarray,
    eigvals: np.ndarray,
    eigvecs: np.ndarray,
    inv_s2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the no-threshold Gaussian full conditional used as the
    MH proposal.  The per-probe covariance is eigvecs @ diag(d_i) @
    eigvecs' where d_i = 1/(eigvals/sigma2_i + 1); returns (mean, d)."""
    d = 1.0 / (inv_s2[:, None] * eigvals[None, :] + 1.0)
    rhs = inv_s2[:, None] * (resid_off @ X) + prior_mean
    mean = ((rhs @ eigvecs) * d) @ eigvecs.T
    return mean, d


def _mh_coefficient_update(
    resid_off: np.ndarray,
    latent: np.ndarray,
    effective: np.ndarray,
    prior_mean: np.ndarray,
    X: np.ndarray,
    eigvals: np.ndarray,
    eigvecs: np.ndarray,
    inv_s2: np.ndarray,
    threshold_fn,
    rng: np.random.Generator,
):
    """Shared MH step for the periodic and local latent coefficients.

    The proposal is the exact Gaussian full conditional of the model with
    all thresholds disabled; the acceptance ratio then corrects for the
    hard-thresholding of the effective coefficients.  Returns the updated
    (latent, effective, mask, accept) arrays.
    """
    p = latent.shape[0]
    mean, d = coefficient_proposal_moments(
        resid_off, prior_mean, X, eigvals, eigvecs, inv_s2
    )
    z = rng.standard_normal(latent.shape)
    prop_latent = mean + (z * np.sqrt(d)) @ eigvecs.T
    prop_effective, prop_mask = threshold_fn(prop_latent)

    lik_cur = -0.5 * inv_s2 * ((resid_off - effective @ X.T) ** 2).sum(axis=1)
    lik_prop = -0.5 * inv_s2 * ((resid_off - prop_effective @ X.T) ** 2).sum(axis=1)
    pri_cur = -0.5 * ((latent - prior_mean) ** 2).sum(axis=1)
    pri_prop = -0.5 * ((prop_latent - prior_mean) ** 2).sum(axis=1)
    q_cur = ((((latent - mean) @ eigvecs) ** 2) / d).sum(axis=1)
    q_prop = ((((prop_latent - mean) @ eigvecs) ** 2) / d).sum(axis=1)
    log_alpha = (lik_prop - lik_cur) + (pri_prop - pri_cur) + 0.5 * (q_prop - q_cur)

    accept = np.log(rng.random(p)) < log_alpha
    latent = np.where(accept[:, None], prop_latent, latent)
    effective = np.where(accept[:, None], prop_effective, effective)
    return latent, effective, prop_mask, accept


def update_theta_tilde(
    Y: np.ndarray, state: ModelState, ops: DesignOps, rng: np.random.Generator
) -> np.ndarray:
    """MH update of the latent periodic coefficients; returns accept flags."""
    inv_s2 = 1.0 / state.sigma2
    resid_off = Y - state.gamma @ ops.C.T - state.Lambda @ state.eta.T
    prior_mean = state.Lambda @ state.W.T
    latent, effective, prop_mask, accept = _mh_coefficient_update(
        resid_off,
        state.theta_tilde,
        state.theta,
        prior_mean,
        ops.B,
        ops.sB,
        ops.UB,
        inv_s2,
        lambda cand: apply_theta_thresholds(cand, state.varpi),
        rng,
    )
    state.theta_tilde = latent
    state.theta = effective
    state.theta_mask = np.where(accept[:, None], prop_mask, state.theta_mask)
    return accept


def update_gamma_tilde(
    Y: np.ndarray, state: ModelState, ops: DesignOps, rng: np.random.Generator
) -> np.ndarray:
    """MH update of the latent local coefficients; returns accept flags."""
    inv_s2 = 1.0 / state.sigma2
    resid_off = Y - state.theta @ ops.B.T - state.Lambda @ state.eta.T
    prior_mean = state.Lambda @ state.Z.T
    latent, effective, prop_mask, accept = _mh_coefficient_update(
        resid_off,
        state.gamma_tilde,
        state.gamma,
        prior_mean,
        ops.C,
        ops.sC,
        ops.UC,
        inv_s2,
        lambda cand: apply_gamma_thresholds(cand, state.varpi_star),
        rng,
    )
    state.gamma_tilde = latent
    state.gamma = effective
    state.gamma_mask = np.where(accept[:, None], prop_mask, state.gamma_mask)
    return accept


def threshold_mixture_pi(
    norm: np.ndarray,
    ss_active: np.ndarray,
    ss_off: np.ndarray,
    sigma2: np.ndarray,
    K: float,
) -> np.ndarray:
    """Probability that the threshold lands below the coefficient norm.

    The two mixture weights are lik(coefficient active) * norm and
    lik(coefficient zeroed) * (K - norm); they are combined in log space
    because products of many Gaussian densities underflow.
    """
    with np.errstate(divide="ignore"):
        log_active = -0.5 * ss_active / sigma2 + np.log(norm)
        log_off = -0.5 * ss_off / sigma2 + np.log(np.maximum(K - norm, 0.0))
    return expit(log_active - log_off)


def _threshold_mixture_draw(
    norm: np.ndarray,
    ss_active: np.ndarray,
    ss_off: np.ndarray,
    sigma2: np.ndarray,
    K: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw thresholds from the piecewise-uniform full conditional.

    Above the bound K the likelihood cannot distinguish thresholds, so
    the draw is Unif(0, K); otherwise it is uniform on [0, norm] with
    probability threshold_mixture_pi and uniform on (norm, K] otherwise.
    """
    u_choice = rng.random(norm.shape)
    u_val = rng.random(norm.shape)
    pi_star = threshold_mixture_pi(norm, ss_active, ss_off, sigma2, K)
    lower = u_choice < pi_star
    value = np.where(lower, u_val * norm, norm + u_val * (K - norm))
    return np.where(norm > K, u_val * K, value)


def update_theta_thresholds(
    Y: np.ndarray, state: ModelState, ops: DesignOps, rng: np.random.Generator
) -> None:
    """Gibbs update of every pair threshold, re-deriving the pair masks."""
    q = state.n_pairs
    resid = Y - fitted_mean_arrays(state, ops)
    sigma2 = state.sigma2
    norms = pair_norms(state.theta_tilde)
    for m in range(q):
        cols = slice(2 * m, 2 * m + 2)
        contrib = state.theta_tilde[:, cols] @ ops.B[:, cols].T
        mask = state.theta_mask[:, m]
        r_active = resid - (~mask)[:, None] * contrib
        r_off = resid + mask[:, None] * contrib
        ss_active = (r_active ** 2).sum(axis=1)
        ss_off = (r_off ** 2).sum(axis=1)
        value = _threshold_mixture_draw(
            norms[:, m], ss_active, ss_off, sigma2, state.K_theta, rng
        )
        new_mask = norms[:, m] >= value
        state.varpi[:, m] = value
        delta = new_mask.astype(float) - mask.astype(float)
        resid -= delta[:, None] * contrib
        state.theta_mask[:, m] = new_mask
        state.theta[:, cols] = state.theta_tilde[:, cols] * new_mask[:, None]


def update_gamma_thresholds(
    Y: np.ndarray, state: ModelState, ops: DesignOps, rng: np.random.Generator
) -> None:
    """Gibbs update of every scalar threshold on the local coefficients."""
    n_local = state.gamma_tilde.shape[1]
    resid = Y - fitted_mean_arrays(state, ops)
    sigma2 = state.sigma2
    mags = np.abs(state.gamma_tilde)
    for l in range(n_local):
        contrib = state.gamma_tilde[:, l, None] * ops.C[None, :, l]
        mask = state.gamma_mask[:, l]
        r_active = resid - (~mask)[:, None] * contrib
        r_off = resid + mask[:, None] * contrib
        ss_active = (r_active ** 2).sum(axis=1)
        ss_off = (r_off ** 2).sum(axis=1)
        value = _threshold_mixture_draw(
            mags[:, l], ss_active, ss_off, sigma2, state.K_gamma, rng
        )
        new_mask = mags[:, l] >= value
        state.varpi_star[:, l] = value
        delta = new_mask.astype(float) - mask.astype(float)
        resid -= delta[:, None] * contrib
        state.gamma_mask[:, l] = new_mask
        state.gamma[:, l] = state.gamma_tilde[:, l] * new_mask


def update_pareto_bounds(
    state: ModelState, hyper: HyperParams, rng_theta, rng_gamma
) -> None:
    """Conjugate Pareto draws for the two shared threshold bounds."""
    p, q = state.varpi.shape
    n_local = state.varpi_star.shape[1]
    dist_t = ParetoDist(
        shape=hyper.a_theta + p * q,
        scale=max(hyper.b_theta, float(state.varpi.max())),
    )
    state.K_theta = float(pareto_sample(dist_t, 1, rng_theta)[0])
    dist_g = ParetoDist(
        shape=hyper.a_gamma + p * n_local,
        scale=max(hyper.b_gamma, float(state.varpi_star.max())),
    )
    state.K_gamma = float(pareto_sample(dist_g, 1, rng_gamma)[0])


def update_noise(
    Y: np.ndarray, state: ModelState, ops: DesignOps, hyper: HyperParams,
    rng: np.random.Generator,
) -> None:
    """Gamma draw of each residual precision given current fitted rows."""
    resid = Y - fitted_mean_arrays(state, ops)
    T = Y.shape[1]
    shape = hyper.a_sigma + 0.5 * T
    rate = hyper.b_sigma + 0.5 * (resid ** 2).sum(axis=1)
    prec = rng.gamma(shape, 1.0 / rate)
    state.sigma2 = 1.0 / prec


def factors_posterior(
    Y: np.ndarray, state: ModelState, ops: DesignOps
) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the factor columns: (T, k) means and the (k, k)
    covariance shared across time points."""
    k = state.k
    inv_s2 = 1.0 / state.sigma2
    scaled = state.Lambda * inv_s2[:, None]
    prec = np.eye(k) + scaled.T @ state.Lambda
    cov = np.linalg.inv(prec)
    resid = Y - state.theta @ ops.B.T - state.gamma @ ops.C.T
    mean = (cov @ (scaled.T @ resid)).T
    return mean, cov


def update_factors(
    Y: np.ndarray, state: ModelState, ops: DesignOps, rng: np.random.Generator
) -> None:
    """Draw all latent factor columns from their shared-covariance
    Gaussian full conditional."""
    mean, cov = factors_posterior(Y, state, ops)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal(mean.shape)
    state.eta = mean + z @ chol.T


def update_local_precisions(
    state: ModelState, hyper: HyperParams, rng: np.random.Generator
) -> None:
    """Gamma draw of each elementwise loading precision."""
    rate = 0.5 * (hyper.rho + state.tau[None, :] * state.Lambda ** 2)
    state.phi = rng.gamma(0.5 * (hyper.rho + 1.0), 1.0 / rate)


def update_shrinkage_increments(
    state: ModelState, hyper: HyperParams, rng: np.random.Generator
) -> None:
    """Sequential scan over the gamma-process increments.

    Increment h enters the scale of every column l >= h, so its rate sums
    the weighted column magnitudes over that tail with leave-h-out
    cumulative products.
    """
    p, k = state.Lambda.shape
    col_sums = (state.phi * state.Lambda ** 2).sum(axis=0)
    for h in range(k):
        without_h = state.zeta.copy()
        without_h[h] = 1.0
        partial = np.cumprod(without_h)
        rate = 1.0 + 0.5 * np.sum(partial[h:] * col_sums[h:])
        shape = hyper.a1 + 0.5 * p * k if h == 0 else hyper.a2 + 0.5 * p * (k - h)
        state.zeta[h] = rng.gamma(shape, 1.0 / rate)
    state.tau = np.cumprod(state.zeta)


def update_mgps(state: ModelState, hyper: HyperParams, rng: np.random.Generator) -> None:
    """Update the loading shrinkage weights: precisions, then increments."""
    update_local_precisions(state, hyper, rng)
    update_shrinkage_increments(state, hyper, rng)


def adapt_rank(
    state: ModelState,
    sweep: int,
    config: ChainConfig,
    hyper: HyperParams,
    rng: np.random.Generator,
) -> bool:
    """Drop loading columns stuck at zero, or append a fresh one.

    Attempted with probability exp(adapt_c0 + adapt_c1 * sweep) once past
    adapt_start.  Returns True when the rank changed.
    """
    if sweep <= config.adapt_start:
        return False
    if rng.random() >= math.exp(config.adapt_c0 + config.adapt_c1 * sweep):
        return False
    k = state.k
    shrunk = np.all(np.abs(state.Lambda) < config.adapt_eps, axis=0)
    if not shrunk.any():
        p = state.n_probes
        # appended increments always sit past the first column, so a2 applies
        zeta_new = rng.gamma(hyper.a2, 1.0)
        state.zeta = np.append(state.zeta, zeta_new)
        state.tau = np.cumprod(state.zeta)
        phi_new = rng.gamma(hyper.rho / 2.0, 2.0 / hyper.rho, size=p)
        lam_new = rng.standard_normal(p) / np.sqrt(phi_new * state.tau[-1])
        state.phi = np.column_stack([state.phi, phi_new])
        state.Lambda = np.column_stack([state.Lambda, lam_new])
        state.eta = np.column_stack([state.eta, rng.standard_normal(state.eta.shape[0])])
        state.W = np.column_stack([state.W, rng.standard_normal(state.W.shape[0])])
        state.Z = np.column_stack([state.Z, rng.standard_normal(state.Z.shape[0])])
        return True
    keep = ~shrunk
    if keep.sum() < config.min_k:
        # Too many dead columns: retain the leading ones to honor min_k.
        keep = np.zeros(k, dtype=bool)
        keep[: config.min_k] = True
    state.Lambda = state.Lambda[:, keep]
    state.phi = state.phi[:, keep]
    state.zeta = state.zeta[keep]
    state.tau = np.cumprod(state.zeta)
    state.eta = state.eta[:, keep]
    state.W = state.W[:, keep]
    state.Z = state.Z[:, keep]
    return True


def fitted_mean_arrays(state: ModelState, ops: DesignOps) -> np.ndarray:
    return (
        state.theta @ ops.B.T
        + state.gamma @ ops.C.T
        + state.Lambda @ state.eta.T
    )


# ---------------------------------------------------------------------------
# Prior draw, sweep, chain
# ---------------------------------------------------------------------------

def draw_prior_state(
    p: int,
    ops: DesignOps,
    hyper: HyperParams,
    k: int,
    mode: str,
    rng: np.random.Generator,
) -> ModelState:
    """Sample a complete state from the prior (also the chain start).

    Independent mode pins the factor block at zero, so the latent
    coefficient prior means vanish.
    """
    T, two_q = ops.B.shape
    n_local = ops.C.shape[1]
    q = two_q // 2
    K_theta = float(pareto_sample(ParetoDist(hyper.a_theta, hyper.b_theta), 1, rng)[0])
    K_gamma = float(pareto_sample(ParetoDist(hyper.a_gamma, hyper.b_gamma), 1, rng)[0])
    varpi = rng.random((p, q)) * K_theta
    varpi_star = rng.random((p, n_local)) * K_gamma
    if mode == "dependent":
        Lambda, phi, zeta, tau = mgps_prior_draw(p, k, hyper.rho, hyper.a1, hyper.a2, rng)
        W = rng.standard_normal((two_q, k))
        Z = rng.standard_normal((n_local, k))
        eta = rng.standard_normal((T, k))
    elif mode == "independent":
        k = 1
        Lambda = np.zeros((p, k))
        phi = np.ones((p, k))
        zeta = np.ones(k)
        tau = np.ones(k)
        W = np.zeros((two_q, k))
        Z = np.zeros((n_local, k))
        eta = np.zeros((T, k))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    theta_tilde = Lambda @ W.T + rng.standard_normal((p, two_q))
    gamma_tilde = Lambda @ Z.T + rng.standard_normal((p, n_local))
    sigma2 = 1.0 / rng.gamma(hyper.a_sigma, 1.0 / hyper.b_sigma, size=p)
    theta, theta_mask = apply_theta_thresholds(theta_tilde, varpi)
    gamma, gamma_mask = apply_gamma_thresholds(gamma_tilde, varpi_star)
    return ModelState(
        theta_tilde=theta_tilde, theta=theta, theta_mask=theta_mask,
        gamma_tilde=gamma_tilde, gamma=gamma, gamma_mask=gamma_mask,
        varpi=varpi, varpi_star=varpi_star,
        W=W, Z=Z, Lambda=Lambda, eta=eta, phi=phi, zeta=zeta, tau=tau,
        sigma2=sigma2, K_theta=K_theta, K_gamma=K_gamma,
    )


def draw_neutral_state(
    Y: np.ndarray,
    ops: DesignOps,
    hyper: HyperParams,
    k: int,
    mode: str,
    rng: np.random.Generator,
) -> ModelState:
    """Detection-oriented chain start: factor block at zero, latent
    coefficients at their ridge fit, thresholds at the prior floor.

    Latent coefficients of entries sitting below their thresholds never
    enter the data likelihood, so under a prior start their factor
    regression equilibrates at prior scale and bleeds spurious structure
    into the coefficients.  Starting that subsystem at zero keeps a
    finite chain in the mode where rhythm detection is meaningful.
    """
    p = Y.shape[0]
    T, two_q = ops.B.shape
    n_local = ops.C.shape[1]
    q = two_q // 2
    if mode == "independent":
        k = 1
    X = np.column_stack([ops.B, ops.C])
    sigma2 = Y.var(axis=1) + 1e-6
    coef = np.empty((p, two_q + n_local))
    # per-probe ridge fit of the combined design at the moment variances
    XtX = X.T @ X
    Xty = Y @ X
    for i in range(p):
        coef[i] = np.linalg.solve(XtX / sigma2[i] + np.eye(X.shape[1]),
                                  Xty[i] / sigma2[i])
    theta_tilde = coef[:, :two_q]
    gamma_tilde = coef[:, two_q:]
    K_theta, K_gamma = hyper.b_theta, hyper.b_gamma
    varpi = rng.random((p, q)) * K_theta
    varpi_star = rng.random((p, n_local)) * K_gamma
    theta, theta_mask = apply_theta_thresholds(theta_tilde, varpi)
    gamma, gamma_mask = apply_gamma_thresholds(gamma_tilde, varpi_star)
    zeta = np.empty(k)
    zeta[0] = hyper.a1
    zeta[1:] = hyper.a2
    return ModelState(
        theta_tilde=theta_tilde, theta=theta, theta_mask=theta_mask,
        gamma_tilde=gamma_tilde, gamma=gamma, gamma_mask=gamma_mask,
        varpi=varpi, varpi_star=varpi_star,
        W=np.zeros((two_q, k)), Z=np.zeros((n_local, k)),
        Lambda=np.zeros((p, k)), eta=np.zeros((T, k)),
        phi=np.ones((p, k)), zeta=zeta, tau=np.cumprod(zeta),
        sigma2=sigma2, K_theta=float(K_theta), K_gamma=float(K_gamma),
    )


def gibbs_sweep(
    state: ModelState,
    Y: np.ndarray,
    ops: DesignOps,
    hyper: HyperParams,
    mode: str,
    rng_for,
) -> dict:
    """One full scan over all conditionals, mutating state in place.

    rng_for maps an update-kind name to the generator that update must
    draw from.  Returns the MH acceptance fractions.
    """
    if mode == "dependent":
        state.W = update_regression_map(state.theta_tilde, state.Lambda, rng_for("w"))
        state.Z = update_regression_map(state.gamma_tilde, state.Lambda, rng_for("z"))
        update_loadings(Y, state, ops, rng_for("lambda"))
    acc_theta = update_theta_tilde(Y, state, ops, rng_for("theta_mh"))
    acc_gamma = update_gamma_tilde(Y, state, ops, rng_for("gamma_mh"))
    update_theta_thresholds(Y, state, ops, rng_for("varpi"))
    update_gamma_thresholds(Y, state, ops, rng_for("varpi_star"))
    update_pareto_bounds(state, hyper, rng_for("k_theta"), rng_for("k_gamma"))
    update_noise(Y, state, ops, hyper, rng_for("sigma"))
    if mode == "dependent":
        update_factors(Y, state, ops, rng_for("eta"))
        update_mgps(state, hyper, rng_for("mgps"))
    return {
        "accept_theta": float(acc_theta.mean()),
        "accept_gamma": float(acc_gamma.mean()),
    }


# ---------------------------------------------------------------------------
# Posterior archive
# ---------------------------------------------------------------------------

@dataclass
class PosteriorArchive:
    """Thinned post-burn-in draws of the functionals needed downstream.

    Loading/factor snapshots are kept on a coarser stride and padded to a
    common column count (snap_k records each snapshot's true rank).
    """

    theta: np.ndarray          # (TS, p, 2q)
    theta_mask: np.ndarray     # (TS, p, q) bool
    gamma_mask: np.ndarray     # (TS, p, n_local) bool
    sigma2: np.ndarray         # (TS, p)
    k: np.ndarray              # (TS,)
    K_theta: np.ndarray        # (TS,)
    K_gamma: np.ndarray        # (TS,)
    lambda_snaps: np.ndarray   # (S, p, k_max)
    eta_snaps: np.ndarray      # (S, T, k_max)
    snap_k: np.ndarray         # (S,)
    snap_index: np.ndarray     # (S,) index into the retained axis
    probe_ids: list[str]
    times_hours: np.ndarray
    periods_hours: np.ndarray
    mode: str
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.theta.shape[0]

    @property
    def n_probes(self) -> int:
        return self.theta.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.theta_mask.shape[2]

    def save(self, out_dir) -> None:
        """Write archive.npz (columnar arrays) + manifest.json."""
        os.makedirs(out_dir, exist_ok=True)
        arrays = {
            "theta": self.theta,
            "theta_mask_bits": np.packbits(self.theta_mask, axis=None),
            "gamma_mask_bits": np.packbits(self.gamma_mask, axis=None),
            "sigma2": self.sigma2,
            "k": self.k,
            "K_theta": self.K_theta,
            "K_gamma": self.K_gamma,
            "lambda_snaps": self.lambda_snaps,
            "eta_snaps": self.eta_snaps,
            "snap_k": self.snap_k,
            "snap_index": self.snap_index,
            "times_hours": self.times_hours,
            "periods_hours": self.periods_hours,
        }
        npz_path = os.path.join(out_dir, "archive.npz")
        _atomic_savez(npz_path, arrays)
        manifest = {
            "format_version": ARCHIVE_FORMAT_VERSION,
            "mode": self.mode,
            "seed": self.seed,
            "probe_ids": self.probe_ids,
            "shapes": {
                "theta": list(self.theta.shape),
                "theta_mask": list(self.theta_mask.shape),
                "gamma_mask": list(self.gamma_mask.shape),
            },
            "meta": self.meta,
        }
        _atomic_write_text(
            os.path.join(out_dir, "manifest.json"),
            json.dumps(manifest, sort_keys=True, indent=1) + "\n",
        )

    @classmethod
    def load(cls, out_dir) -> "PosteriorArchive":
        with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest["format_version"] != ARCHIVE_FORMAT_VERSION:
            raise ValueError("unsupported archive format version")
        with np.load(os.path.join(out_dir, "archive.npz")) as npz:
            tm_shape = tuple(manifest["shapes"]["theta_mask"])
            gm_shape = tuple(manifest["shapes"]["gamma_mask"])
            theta_mask = _unpack_bits(npz["theta_mask_bits"], tm_shape)
            gamma_mask = _unpack_bits(npz["gamma_mask_bits"], gm_shape)
            return cls(
                theta=npz["theta"],
                theta_mask=theta_mask,
                gamma_mask=gamma_mask,
                sigma2=npz["sigma2"],
                k=npz["k"],
                K_theta=npz["K_theta"],
                K_gamma=npz["K_gamma"],
                lambda_snaps=npz["lambda_snaps"],
                eta_snaps=npz["eta_snaps"],
                snap_k=npz["snap_k"],
                snap_index=npz["snap_index"],
                probe_ids=list(manifest["probe_ids"]),
                times_hours=npz["times_hours"],
                periods_hours=npz["periods_hours"],
                mode=manifest["mode"],
                seed=manifest["seed"],
                meta=manifest["meta"],
            )


def _unpack_bits(bits: np.ndarray, shape: tuple) -> np.ndarray:
    n = int(np.prod(shape))
    return np.unpackbits(bits, count=n).astype(bool).reshape(shape)


def _atomic_savez(path: str, arrays: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez_compressed(fh, **arrays)
    os.replace(tmp, path)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _pad_snaps(snaps: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-rank snapshots into one zero-padded array."""
    if not snaps:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64)
    k_max = max(s.shape[1] for s in snaps)
    ks = np.array([s.shape[1] for s in snaps], dtype=np.int64)
    out = np.zeros((len(snaps), snaps[0].shape[0], k_max))
    for i, s in enumerate(snaps):
        out[i, :, : s.shape[1]] = s
    return out, ks


# ---------------------------------------------------------------------------
# Chain driver with checkpoint/resume
# ---------------------------------------------------------------------------

def config_fingerprint(
    data: ExpressionMatrix,
    designs: DesignPair,
    hyper: HyperParams,
    config: ChainConfig,
    mode: str,
    init: str = "neutral",
) -> str:
    """Hash of everything that must match for a resume to be valid."""
    payload = {
        "mode": mode,
        "init": init,
        "hyper": asdict(hyper),
        "config": {
            k: v for k, v in asdict(config).items()
            if k not in ("checkpoint_every", "log_every")
        },
        "times": designs.grid.times_hours.tolist(),
        "periods": designs.periods.periods_hours.tolist(),
        "kernel": [designs.kernel_kind, designs.bandwidth, designs.C.shape[1]],
        "data_sha": hashlib.sha256(np.ascontiguousarray(data.values).tobytes()).hexdigest(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class ResumeMismatchError(RuntimeError):
    """Checkpoint does not match the requested run configuration."""


class _Accumulator:
    """Collects retained draws during a run."""

    def __init__(self):
        self.theta = []
        self.theta_mask = []
        self.gamma_mask = []
        self.sigma2 = []
        self.k = []
        self.K_theta = []
        self.K_gamma = []
        self.lambda_snaps = []
        self.eta_snaps = []
        self.snap_index = []

    def record(self, state: ModelState, retained_idx: int, snap_stride: int) -> None:
        self.theta.append(state.theta.copy())
        self.theta_mask.append(state.theta_mask.copy())
        self.gamma_mask.append(state.gamma_mask.copy())
        self.sigma2.append(state.sigma2.copy())
        self.k.append(state.k)
        self.K_theta.append(state.K_theta)
        self.K_gamma.append(state.K_gamma)
        if retained_idx % snap_stride == 0:
            self.lambda_snaps.append(state.Lambda.copy())
            self.eta_snaps.append(state.eta.copy())
            self.snap_index.append(retained_idx)


def _state_to_arrays(state: ModelState) -> dict:
    out = {}
    for name in ModelState.__dataclass_fields__:
        val = getattr(state, name)
        out[f"state_{name}"] = np.asarray(val)
    return out


def _state_from_arrays(npz) -> ModelState:
    kwargs = {}
    for name in ModelState.__dataclass_fields__:
        arr = npz[f"state_{name}"]
        if arr.ndim == 0:
            kwargs[name] = float(arr)
        elif name in ("theta_mask", "gamma_mask"):
            kwargs[name] = arr.astype(bool)
        else:
            kwargs[name] = arr
    return ModelState(**kwargs)


def write_checkpoint(path: str, fingerprint: str, next_sweep: int,
                     state: ModelState, acc: _Accumulator) -> None:
    """Atomically persist the full chain position.

    The RNG needs no serialized position: substreams are keyed by
    (seed, sweep, kind), so (seed, next_sweep) pins it exactly.
    """
    lam, lam_k = _pad_snaps(acc.lambda_snaps)
    eta, _ = _pad_snaps(acc.eta_snaps)
    arrays = {
        "meta": np.array(json.dumps({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "fingerprint": fingerprint,
            "next_sweep": next_sweep,
        }, sort_keys=True)),
        "acc_theta": np.array(acc.theta),
        "acc_theta_mask": np.array(acc.theta_mask, dtype=bool),
        "acc_gamma_mask": np.array(acc.gamma_mask, dtype=bool),
        "acc_sigma2": np.array(acc.sigma2),
        "acc_k": np.array(acc.k, dtype=np.int64),
        "acc_K_theta": np.array(acc.K_theta),
        "acc_K_gamma": np.array(acc.K_gamma),
        "acc_lambda_snaps": lam,
        "acc_eta_snaps": eta,
        "acc_snap_k": lam_k,
        "acc_snap_index": np.array(acc.snap_index, dtype=np.int64),
    }
    arrays.update(_state_to_arrays(state))
    _atomic_savez(path, arrays)


def read_checkpoint(path: str, fingerprint: str) -> tuple[int, ModelState, _Accumulator]:
    with np.load(path) as npz:
        meta = json.loads(str(npz["meta"]))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ResumeMismatchError("unsupported checkpoint format version")
        if meta["fingerprint"] != fingerprint:
            raise ResumeMismatchError(
                "checkpoint was produced by a different data/config/mode combination"
            )
        state = _state_from_arrays(npz)
        acc = _Accumulator()
        acc.theta = [a for a in npz["acc_theta"]]
        acc.theta_mask = [a.astype(bool) for a in npz["acc_theta_mask"]]
        acc.gamma_mask = [a.astype(bool) for a in npz["acc_gamma_mask"]]
        acc.sigma2 = [a for a in npz["acc_sigma2"]]
        acc.k = [int(v) for v in npz["acc_k"]]
        acc.K_theta = [float(v) for v in npz["acc_K_theta"]]
        acc.K_gamma = [float(v) for v in npz["acc_K_gamma"]]
        snap_k = npz["acc_snap_k"]
        acc.lambda_snaps = [a[:, :kk] for a, kk in zip(npz["acc_lambda_snaps"], snap_k)]
        acc.eta_snaps = [a[:, :kk] for a, kk in zip(npz["acc_eta_snaps"], snap_k)]
        acc.snap_index = [int(v) for v in npz["acc_snap_index"]]
        return int(meta["next_sweep"]), state, acc


def run_chain(
    data: ExpressionMatrix,
    designs: DesignPair,
    hyper: HyperParams,
    config: ChainConfig,
    mode: str = "dependent",
    init: str = "neutral",
    checkpoint_path: str | None = None,
    resume_from: str | None = None,
    halt_after_sweep: int | None = None,
) -> PosteriorArchive | None:
    """Run the sampler and return the archive of retained draws.

    Sweeps are numbered 1..n_iter; a state is retained when past burn-in
    at the thinning stride.

    Parameters
    ----------
    data : ExpressionMatrix
        Log-scale, centered trajectories (one probe per row).
    designs : DesignPair
        Fourier and local design matrices for data's time grid.
    hyper, config : HyperParams, ChainConfig
        Prior constants and chain schedule (seed lives in config).
    mode : {"dependent", "independent"}
        "independent" pins the factor block at zero and skips its updates.
    init : {"neutral", "prior"}
        Chain start: zero factor block with ridge coefficients, or a full
        prior draw for over-dispersed replicate chains.
    checkpoint_path, resume_from : str, optional
        Where to write periodic checkpoints / which checkpoint to resume.
        A resumed chain is bit-identical to an uninterrupted one.
    halt_after_sweep : int, optional
        Stop after this sweep, write a checkpoint, and return None
        (controlled preemption, exercised by the resume tests).
    """
    if mode not in ("dependent", "independent"):
        raise ValueError(f"unknown mode {mode!r}")
    ops = DesignOps(designs)
    Y = data.values
    fingerprint = config_fingerprint(data, designs, hyper, config, mode, init)
    if resume_from is not None:
        start_sweep, state, acc = read_checkpoint(resume_from, fingerprint)
    else:
        start_sweep = 1
        rng0 = substream(config.seed, 0, "init")
        if init == "neutral":
            state = draw_neutral_state(Y, ops, hyper, hyper.k_init, mode, rng0)
        elif init == "prior":
            state = draw_prior_state(data.n_probes, ops, hyper, hyper.k_init, mode, rng0)
        else:
            raise ValueError(f"unknown init {init!r}")
        acc = _Accumulator()

    for sweep in range(start_sweep, config.n_iter + 1):
        stats = gibbs_sweep(
            state, Y, ops, hyper, mode,
            lambda kind: substream(config.seed, sweep, kind),
        )
        if mode == "dependent" and config.adapt:
            adapt_rank(state, sweep, config, hyper, substream(config.seed, sweep, "adapt"))
        if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            retained_idx = (sweep - config.burn_in) // config.thin - 1
            acc.record(state, retained_idx, config.record_lambda_every)
        if config.log_every and sweep % config.log_every == 0:
            logger.info(
                "sweep %d/%d k=%d acc_theta=%.3f acc_gamma=%.3f",
                sweep, config.n_iter, state.k,
                stats["accept_theta"], stats["accept_gamma"],
            )
        if checkpoint_path and config.checkpoint_every and sweep % config.checkpoint_every == 0:
            write_checkpoint(checkpoint_path, fingerprint, sweep + 1, state, acc)
        if halt_after_sweep is not None and sweep >= halt_after_sweep:
            if checkpoint_path is None:
                raise ValueError("halt_after_sweep requires a checkpoint path")
            write_checkpoint(checkpoint_path, fingerprint, sweep + 1, state, acc)
            return None

    lam, snap_k = _pad_snaps(acc.lambda_snaps)
    eta, _ = _pad_snaps(acc.eta_snaps)
    return PosteriorArchive(
        theta=np.array(acc.theta),
        theta_mask=np.array(acc.theta_mask, dtype=bool),
        gamma_mask=np.array(acc.gamma_mask, dtype=bool),
        sigma2=np.array(acc.sigma2),
        k=np.array(acc.k, dtype=np.int64),
        K_theta=np.array(acc.K_theta),
        K_gamma=np.array(acc.K_gamma),
        lambda_snaps=lam,
        eta_snaps=eta,
        snap_k=snap_k,
        snap_index=np.array(acc.snap_index, dtype=np.int64),
        probe_ids=list(data.probe_ids),
        times_hours=designs.grid.times_hours,
        periods_hours=designs.periods.periods_hours,
        mode=mode,
        seed=config.seed,
        meta={"fingerprint": fingerprint, "n_iter": config.n_iter,
              "burn_in": config.burn_in, "thin": config.thin},
    )
