"""Empirical counting distributions with bootstrap errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Normalised histogram of detector counts; ``pmf[k]`` is P(n = k)."""

    pmf: np.ndarray
    n_samples: int
    mean: float
    variance: float
    q: float | None
    se_mean: float
    se_variance: float
    se_q: float | None

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.pmf.size)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mean": self.mean,
            "variance": self.variance,
            "q": self.q,
            "se_mean": self.se_mean,
            "se_variance": self.se_variance,
            "se_q": self.se_q,
        }


def _moments(values: np.ndarray, weights: np.ndarray, total: float):
    # weights are counts per value, shape (..., K)
    mean = weights @ values / total
    second = weights @ (values**2) / total
    var = (second - mean**2) * total / (total - 1) if total > 1 else np.zeros_like(mean)
    return mean, var


def empirical_distribution(data, n_boot: int = 1000, seed: int = 0) -> EmpiricalDistribution:
    """Histogram, moments and bootstrap standard errors of integer counts.

    ``data`` is a :class:`TrajectoryEnsemble` or an array of counts.  The
    bootstrap resamples the histogram multinomially, which is equivalent to
    resampling trajectories with replacement.
    """
    counts = np.asarray(getattr(data, "d_count", data), dtype=np.int64)
    if counts.size == 0:
        raise ValueError("empty ensemble")
    if counts.min() < 0:
        raise ValueError("counts must be non-negative")
    n = counts.size
    hist = np.bincount(counts).astype(float)
    values = np.arange(hist.size, dtype=float)
    mean, var = _moments(values, hist, n)
    q = var / mean - 1.0 if mean > 0 else None

    rng = np.random.default_rng(seed)
    boot = rng.multinomial(n, hist / n, size=n_boot).astype(float)
    bmean, bvar = _moments(values, boot, n)
    se_q = None
    if mean > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            bq = np.where(bmean > 0, bvar / bmean - 1.0, np.nan)
        se_q = float(np.nanstd(bq, ddof=1)) if n_boot > 1 else 0.0
    return EmpiricalDistribution(
        pmf=hist / n,
        n_samples=n,
        mean=float(mean),
        variance=float(var),
        q=None if q is None else float(q),
        se_mean=float(bmean.std(ddof=1)) if n_boot > 1 else 0.0,
        se_variance=float(bvar.std(ddof=1)) if n_boot > 1 else 0.0,
        se_q=se_q,
    )


def poisson_chisquare(data, min_expected: float = 5.0):
    """Chi-square goodness of fit of the counts to a Poisson law with their mean.

    Bins are merged from both tails until every expected count reaches
    ``min_expected``.  Returns ``(statistic, p_value, dof)``.
    """
    counts = np.asarray(getattr(data, "d_count", data), dtype=np.int64)
    n = counts.size
    lam = counts.mean()
    top = int(max(counts.max(), sps.poisson.ppf(1 - 1e-12, lam))) + 1
    observed = np.bincount(counts, minlength=top + 1)[: top + 1].astype(float)
    expected = sps.poisson.pmf(np.arange(top + 1), lam) * n
    expected[-1] += sps.poisson.sf(top, lam) * n

    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if obs_bins:
        obs_bins[-1] += o_acc
        exp_bins[-1] += e_acc
    obs_bins = np.array(obs_bins)
    exp_bins = np.array(exp_bins)
    dof = len(obs_bins) - 2  # one constraint for the total, one fitted mean
    if dof < 1:
        return 0.0, 1.0, 0
    stat = float(((obs_bins - exp_bins) ** 2 / exp_bins).sum())
    return stat, float(sps.chi2.sf(stat, dof)), dof
