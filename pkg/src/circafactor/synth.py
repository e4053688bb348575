"""Synthetic benchmark generators with known ground truth: a dependent
regime where probes share latent factors, and an independent regime with
the factor block pinned at zero."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import DesignPair, make_designs
from .model import ExpressionMatrix, apply_gamma_thresholds, apply_theta_thresholds


def default_times() -> np.ndarray:
    """Two daily cycles sampled every two hours: 0, 2, ..., 46."""
    return np.arange(0.0, 48.0, 2.0)


DEFAULT_PERIODS = (4.0, 6.0, 8.0, 12.0, 24.0)


@dataclass
class SynthConfig:
    """Knobs of the benchmark generators.

    loading_count_range bounds the per-column count of nonzero loadings;
    None scales the (99, 124)-at-p=500 default to the requested p.
    target_circadian_range optionally resamples until the realized number
    of circadian probes lands inside the range.
    """

    p: int = 500
    seed: int = 0
    times_hours: np.ndarray = field(default_factory=default_times)
    periods_hours: tuple = DEFAULT_PERIODS
    n_local: int = 10
    kernel_kind: str = "gaussian"
    bandwidth: float = 25.0
    sigma2: float | np.ndarray = 0.5
    k_true: int = 6
    loading_sd: float = 3.0
    loading_count_range: tuple[int, int] | None = None
    theta_threshold_range: tuple[float, float] = (0.0, 6.0)
    gamma_threshold_range: tuple[float, float] = (0.0, 10.0)
    target_circadian_range: tuple[int, int] | None = None
    max_resample: int = 100

    def resolved_count_range(self) -> tuple[int, int]:
        if self.loading_count_range is not None:
            lo, hi = self.loading_count_range
        else:
            lo = int(round(99 * self.p / 500))
            hi = int(round(124 * self.p / 500))
        if not 0 <= lo <= hi:
            raise ValueError("loading_count_range must be ordered and nonnegative")
        if hi > self.p:
            raise ValueError("per-column loading count cannot exceed p")
        return lo, hi

    def sigma2_vector(self) -> np.ndarray:
        s = np.asarray(self.sigma2, dtype=float)
        if s.ndim == 0:
            s = np.full(self.p, float(s))
        if s.shape != (self.p,) or np.any(s <= 0):
            raise ValueError("sigma2 must be a positive scalar or length-p vector")
        return s


def independent_config(p: int = 500, seed: int = 0, **overrides) -> SynthConfig:
    """Defaults for the independence benchmark: no factors, noisier
    observations, and slightly lighter pair thresholds."""
    base = dict(
        p=p,
        seed=seed,
        sigma2=1.0,
        theta_threshold_range=(0.0, 5.0),
        loading_count_range=(0, 0),
        k_true=4,
    )
    base.update(overrides)
    return SynthConfig(**base)


@dataclass
class GroundTruth:
    """Everything the generator knew: true coefficients, factor block,
    activity masks, and the derived periodicity labels."""

    theta: np.ndarray          # (p, 2q) effective periodic coefficients
    theta_mask: np.ndarray     # (p, q)
    gamma: np.ndarray          # (p, n_local)
    gamma_mask: np.ndarray     # (p, n_local)
    Lambda: np.ndarray         # (p, k_true)
    eta: np.ndarray            # (T, k_true)
    sigma2: np.ndarray         # (p,)
    periods_hours: np.ndarray
    circadian: np.ndarray      # (p,) only the 24 h pair active
    simple_periodic: np.ndarray  # (p,) exactly one pair active

    @property
    def n_circadian(self) -> int:
        return int(self.circadian.sum())

    @property
    def n_simple_periodic(self) -> int:
        return int(self.simple_periodic.sum())


def _labels(theta_mask: np.ndarray, periods: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_active = theta_mask.sum(axis=1)
    simple = n_active == 1
    target = np.isclose(periods, 24.0)
    if target.sum() == 1:
        circ = simple & theta_mask[:, int(np.nonzero(target)[0][0])]
    else:
        circ = np.zeros(theta_mask.shape[0], dtype=bool)
    return circ, simple


def _draw_once(
    config: SynthConfig, designs: DesignPair, rng: np.random.Generator
) -> tuple[ExpressionMatrix, GroundTruth]:
    p = config.p
    B, C = designs.B, designs.C
    T, two_q = B.shape
    q = two_q // 2
    n_local = C.shape[1]
    k = config.k_true

    lo, hi = config.resolved_count_range()
    counts = np.round(np.linspace(hi, lo, k)).astype(int) if k > 1 else np.array([hi])
    Lambda = np.zeros((p, k))
    for h in range(k):
        if counts[h] > 0:
            rows = rng.choice(p, size=counts[h], replace=False)
            Lambda[rows, h] = rng.normal(0.0, config.loading_sd, size=counts[h])
    eta = rng.standard_normal((T, k))
    W = rng.standard_normal((two_q, k))
    Z = rng.standard_normal((n_local, k))

    theta_tilde = Lambda @ W.T + rng.standard_normal((p, two_q))
    gamma_tilde = Lambda @ Z.T + rng.standard_normal((p, n_local))
    t_lo, t_hi = config.theta_threshold_range
    g_lo, g_hi = config.gamma_threshold_range
    varpi = rng.uniform(t_lo, t_hi, size=(p, q))
    varpi_star = rng.uniform(g_lo, g_hi, size=(p, n_local))
    theta, theta_mask = apply_theta_thresholds(theta_tilde, varpi)
    gamma, gamma_mask = apply_gamma_thresholds(gamma_tilde, varpi_star)

    sigma2 = config.sigma2_vector()
    mean = theta @ B.T + gamma @ C.T + Lambda @ eta.T
    values = mean + rng.standard_normal((p, T)) * np.sqrt(sigma2)[:, None]

    circ, simple = _labels(theta_mask, designs.periods.periods_hours)
    probe_ids = [f"probe_{i:04d}" for i in range(p)]
    data = ExpressionMatrix(values=values, probe_ids=probe_ids, grid=designs.grid)
    truth = GroundTruth(
        theta=theta, theta_mask=theta_mask,
        gamma=gamma, gamma_mask=gamma_mask,
        Lambda=Lambda, eta=eta, sigma2=sigma2,
        periods_hours=designs.periods.periods_hours,
        circadian=circ, simple_periodic=simple,
    )
    return data, truth


def generate_dependent(
    config: SynthConfig, rng: np.random.Generator | None = None
) -> tuple[ExpressionMatrix, GroundTruth]:
    """Draw one dependent benchmark dataset and its ground truth.

    Column h of the loading matrix gets a count of nonzero entries
    interpolated across the configured range (densest first), placed at
    random rows; everything downstream of the loadings follows the
    model's own generative process.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    designs = make_designs(
        config.times_hours, config.periods_hours, config.n_local,
        kernel_kind=config.kernel_kind, bandwidth=config.bandwidth,
    )
    data, truth = _draw_once(config, designs, rng)
    if config.target_circadian_range is not None:
        lo, hi = config.target_circadian_range
        tries = 0
        while not (lo <= truth.n_circadian <= hi):
            tries += 1
            if tries > config.max_resample:
                raise RuntimeError(
                    f"could not realize a circadian count in [{lo}, {hi}] "
                    f"after {config.max_resample} resamples"
                )
            data, truth = _draw_once(config, designs, rng)
    return data, truth


def generate_independent(
    config: SynthConfig | None = None,
    rng: np.random.Generator | None = None,
    **overrides,
) -> tuple[ExpressionMatrix, GroundTruth]:
    """Dependent generator with the loading matrix forced to zero."""
    if config is None:
        config = independent_config(**overrides)
    else:
        config = SynthConfig(**{**config.__dict__, "loading_count_range": (0, 0)})
    return generate_dependent(config, rng)
