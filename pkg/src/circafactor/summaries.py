"""Posterior summaries: rhythmicity probabilities, amplitude/phase of the
oscillations, FDR-controlled discovery lists, marginal correlation
networks, and ROC/FDR evaluation curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampler import PosteriorArchive


# ---------------------------------------------------------------------------
# Rhythmicity probabilities
# ---------------------------------------------------------------------------

def _single_active_mask(mask: np.ndarray, target: int) -> np.ndarray:
    """Per (sample, probe): target pair on, every other pair off."""
    others = np.delete(mask, target, axis=2)
    return mask[:, :, target] & ~others.any(axis=2)


def resolve_target_pair(archive: PosteriorArchive, target_period: float = 24.0) -> int:
    """Index of the pair whose period matches target_period (hours)."""
    periods = np.asarray(archive.periods_hours)
    hits = np.nonzero(np.isclose(periods, target_period))[0]
    if hits.size != 1:
        raise ValueError(f"period {target_period} h not among {periods.tolist()}")
    return int(hits[0])


def prob_per_period(archive: PosteriorArchive) -> np.ndarray:
    """(p, q) matrix: fraction of samples with exactly pair m active."""
    if archive.n_retained == 0:
        raise ValueError("empty archive")
    mask = archive.theta_mask
    out = np.empty((archive.n_probes, archive.n_pairs))
    for m in range(archive.n_pairs):
        out[:, m] = _single_active_mask(mask, m).mean(axis=0)
    return out


def prob_circadian(archive: PosteriorArchive, probe: int, target_period: float = 24.0) -> float:
    """Posterior probability that only the target-period pair is active."""
    if archive.n_retained == 0:
        raise ValueError("empty archive")
    target = resolve_target_pair(archive, target_period)
    return float(_single_active_mask(archive.theta_mask, target)[:, probe].mean())


def prob_periodic(archive: PosteriorArchive, probe: int) -> float:
    """Posterior probability that exactly one period pair is active."""
    if archive.n_retained == 0:
        raise ValueError("empty archive")
    n_active = archive.theta_mask[:, probe, :].sum(axis=1)
    return float((n_active == 1).mean())


@dataclass(frozen=True)
class RhythmScore:
    probe_id: str
    prob_periodic: float
    prob_per_period: np.ndarray
    prob_circadian: float
    beta: float  # 1 - prob_circadian; low beta = strong circadian evidence


def rhythm_scores(archive: PosteriorArchive, target_period: float = 24.0) -> list[RhythmScore]:
    """Per-probe posterior rhythmicity summaries."""
    per_period = prob_per_period(archive)
    target = resolve_target_pair(archive, target_period)
    periodic = per_period.sum(axis=1)
    circ = per_period[:, target]
    return [
        RhythmScore(
            probe_id=archive.probe_ids[i],
            prob_periodic=float(periodic[i]),
            prob_per_period=per_period[i],
            prob_circadian=float(circ[i]),
            beta=float(1.0 - circ[i]),
        )
        for i in range(archive.n_probes)
    ]


# ---------------------------------------------------------------------------
# Amplitude and phase
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AmplitudePhase:
    amplitude: float
    phase: float            # principal arctan branch, (-pi/2, pi/2]
    phase_corrected: float  # two-argument arctan, (-pi, pi]


def amplitude_phase(theta_pair) -> AmplitudePhase | None:
    """Amplitude/phase of one sin/cos coefficient pair.

    The pair (s, c) represents s*sin(w t) + c*cos(w t) =
    A*cos(w t - psi) with A = hypot(s, c) and psi solving
    (A sin psi, A cos psi) = (s, c).  Returns None for the zero pair,
    whose phase is undefined.
    """
    s, c = float(theta_pair[0]), float(theta_pair[1])
    if s == 0.0 and c == 0.0:
        return None
    amp = float(np.hypot(s, c))
    with np.errstate(divide="ignore"):
        phase = float(np.arctan(np.divide(s, c))) if c != 0.0 else float(np.sign(s) * np.pi / 2)
    return AmplitudePhase(
        amplitude=amp,
        phase=phase,
        phase_corrected=float(np.arctan2(s, c)),
    )


def pair_to_curve(amplitude: float, phase: float, period: float, times_hours) -> np.ndarray:
    """Evaluate A*cos(2 pi t/period - phase) on a time grid."""
    t = np.asarray(times_hours, dtype=float)
    return amplitude * np.cos(2.0 * np.pi * t / period - phase)


def amplitude_phase_quantiles(
    archive: PosteriorArchive,
    probe: int,
    pair: int,
    probs=(0.025, 0.5, 0.975),
) -> dict:
    """Posterior quantiles of amplitude and phase over samples where the
    pair is active.  Returns NaN quantiles when the pair is never active."""
    active = archive.theta_mask[:, probe, pair]
    probs = list(probs)
    if not active.any():
        nan = [float("nan")] * len(probs)
        return {"n_active": 0, "amplitude": nan, "phase": nan, "phase_corrected": nan}
    vals = archive.theta[active, probe, 2 * pair: 2 * pair + 2]
    amp = np.hypot(vals[:, 0], vals[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        phase = np.arctan(vals[:, 0] / vals[:, 1])
        phase = np.where(vals[:, 1] == 0.0, np.sign(vals[:, 0]) * np.pi / 2, phase)
    phase_c = np.arctan2(vals[:, 0], vals[:, 1])
    return {
        "n_active": int(active.sum()),
        "amplitude": np.quantile(amp, probs).tolist(),
        "phase": np.quantile(phase, probs).tolist(),
        "phase_corrected": np.quantile(phase_c, probs).tolist(),
    }


# ---------------------------------------------------------------------------
# FDR-controlled discovery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscoveryList:
    selected: list[int]       # indices into the beta vector, sorted by beta
    kappa: float | None       # largest admissible beta cutoff
    expected_false: float     # sum of selected betas
    expected_fdr: float       # expected_false / |selected| (0 when empty)
    k_star: float


def fdr_select(betas, k_star: float) -> DiscoveryList:
    """Largest list with expected false-discovery rate at most k_star.

    betas[i] is the posterior probability that reporting probe i is a
    false discovery.  Candidates are swept in increasing beta order and
    the cutoff kappa is the largest beta value whose inclusion (together
    with all ties) keeps mean(selected betas) <= k_star.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.size == 0:
        raise ValueError("empty beta vector")
    if np.any((betas < 0) | (betas > 1)):
        raise ValueError("betas must lie in [0, 1]")
    order = np.argsort(betas, kind="stable")
    sorted_b = betas[order]
    cummean = np.cumsum(sorted_b) / np.arange(1, betas.size + 1)
    admissible = cummean <= k_star
    # Candidate cutoffs are whole tie groups: position j is a valid cut
    # only when it is the last occurrence of its beta value.
    last_of_group = np.r_[sorted_b[1:] != sorted_b[:-1], True]
    valid = admissible & last_of_group
    if not valid.any():
        return DiscoveryList([], None, 0.0, 0.0, float(k_star))
    cut = int(np.nonzero(valid)[0].max())
    chosen = order[: cut + 1]
    expected_false = float(sorted_b[: cut + 1].sum())
    return DiscoveryList(
        selected=[int(i) for i in chosen],
        kappa=float(sorted_b[cut]),
        expected_false=expected_false,
        expected_fdr=expected_false / (cut + 1),
        k_star=float(k_star),
    )


# ---------------------------------------------------------------------------
# Marginal correlation network
# ---------------------------------------------------------------------------

def marginal_covariance(archive: PosteriorArchive, per_sample: bool = False) -> np.ndarray:
    """Implied probe-by-probe covariance loadings @ loadings' + noise.

    Default uses posterior-mean loadings and noise variances; per_sample
    instead averages each snapshot's covariance (rank-change safe).
    """
    if archive.lambda_snaps.shape[0] == 0:
        lam_term = np.zeros((archive.n_probes, archive.n_probes))
    elif per_sample:
        lam_term = np.mean(
            [lam @ lam.T for lam in archive.lambda_snaps], axis=0
        )
    else:
        lam_bar = archive.lambda_snaps.mean(axis=0)
        lam_term = lam_bar @ lam_bar.T
    sigma_bar = archive.sigma2.mean(axis=0)
    return lam_term + np.diag(sigma_bar)


def marginal_correlation(
    archive: PosteriorArchive,
    threshold: float = 0.30,
    per_sample: bool = False,
) -> tuple[np.ndarray, list[tuple[int, int, float]]]:
    """Correlation matrix plus the edges at or above |threshold|."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("correlation threshold must lie in [0, 1]")
    omega = marginal_covariance(archive, per_sample=per_sample)
    d = 1.0 / np.sqrt(np.diag(omega))
    corr = omega * d[:, None] * d[None, :]
    edges = []
    p = corr.shape[0]
    for i in range(p):
        for j in range(i + 1, p):
            if abs(corr[i, j]) >= threshold:
                edges.append((i, j, float(corr[i, j])))
    return corr, edges


def factor_contribution_variance(archive: PosteriorArchive) -> float:
    """Mean over probes and times of the posterior variance of the factor
    term loadings_i . factors_j, computed across the stored snapshots.
    Near zero when the data carry no cross-probe dependence."""
    if archive.lambda_snaps.shape[0] < 2:
        raise ValueError("need at least two loading snapshots")
    terms = np.einsum("spk,stk->spt", archive.lambda_snaps, archive.eta_snaps)
    return float(terms.var(axis=0).mean())


def residual_variance_scale(archive: PosteriorArchive) -> float:
    """Mean posterior residual variance, the natural scale to compare the
    factor contribution against."""
    return float(archive.sigma2.mean())


# ---------------------------------------------------------------------------
# ROC / FDR evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    fdr: np.ndarray    # FP / (FP + TP) at each operating point past the origin
    power: np.ndarray  # TPR at the same points


def roc_and_fdr_curves(scores, truth) -> RocResult:
    """Threshold sweep over scores (higher = more periodic) against binary
    truth.  Tied scores enter as one group, which makes the trapezoidal
    AUC equal the Mann-Whitney statistic with the midrank tie convention.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have equal length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth must contain both classes for a ROC curve")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    group_end = np.r_[s[1:] != s[:-1], True]
    cum_tp = np.cumsum(t)[group_end]
    cum_fp = np.cumsum(~t)[group_end]
    tpr = np.r_[0.0, cum_tp / n_pos]
    fpr = np.r_[0.0, cum_fp / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    denom = cum_tp + cum_fp
    fdr = cum_fp / denom
    return RocResult(fpr=fpr, tpr=tpr, auc=auc, fdr=fdr, power=cum_tp / n_pos)
