"""Frequency-domain comparator: the classical periodogram, Fisher's exact
test for a single dominant ordinate, and step-up FDR adjustment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Periodogram:
    """Ordinates at the nonzero Fourier frequencies below Nyquist."""

    frequencies: np.ndarray  # cycles per sample, j/T
    ordinates: np.ndarray

    @property
    def n_ordinates(self) -> int:
        return self.ordinates.size


def periodogram(series) -> Periodogram:
    """I(f_j) = |sum_t y_t exp(-2 pi i j t / T)|^2 / T for j = 1..floor((T-1)/2).

    The series is mean-centered first; the zero frequency is excluded and
    so is the Nyquist ordinate for even T (it is not exponentially
    distributed under the white-noise null, which Fisher's test assumes).
    """
    y = np.asarray(series, dtype=float).ravel()
    T = y.size
    if T < 4:
        raise ValueError("need at least 4 observations")
    y = y - y.mean()
    n_keep = (T - 1) // 2
    spec = np.fft.rfft(y)[1 : n_keep + 1]
    ordinates = (spec.real ** 2 + spec.imag ** 2) / T
    freqs = np.arange(1, n_keep + 1) / T
    return Periodogram(frequencies=freqs, ordinates=ordinates)


def fisher_g_pvalue(g: float, n: int) -> float:
    """Exact null tail probability of the maximum-ordinate fraction.

    P(G > g) = sum_{j=1..floor(1/g)} (-1)^(j-1) C(n,j) (1-jg)^(n-1),
    evaluated with log-space terms so large n stays stable.
    """
    if not 0.0 < g <= 1.0:
        raise ValueError("g must lie in (0, 1]")
    j_max = min(n, int(math.floor(1.0 / g)))
    terms = []
    for j in range(1, j_max + 1):
        base = 1.0 - j * g
        if base <= 0.0:
            continue
        log_term = (
            math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1)
            + (n - 1) * math.log(base)
        )
        terms.append((-1.0) ** (j - 1) * math.exp(log_term))
    p = math.fsum(terms)
    return min(max(p, 0.0), 1.0)


def fisher_g_test(series) -> tuple[float, float]:
    """Fisher's g statistic and its exact p-value for one series.

    A constant series has an all-zero spectrum and returns (0, 1) by
    convention.
    """
    pg = periodogram(series)
    total = pg.ordinates.sum()
    if pg.n_ordinates < 3:
        raise ValueError("need at least 3 periodogram ordinates")
    if total == 0.0:
        return 0.0, 1.0
    g = float(pg.ordinates.max() / total)
    return g, fisher_g_pvalue(g, pg.n_ordinates)


def fdr_adjust(p_values) -> np.ndarray:
    """Step-up adjusted values: q_(i) = min_{j >= i} min(1, m p_(j) / j)."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum(1.0, np.minimum.accumulate(ranked[::-1])[::-1])
    q = np.empty(m)
    q[order] = q_sorted
    return q
