"""Moments, normal quantiles and Q-Q diagnostics for the verification harness."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

MIN_QQ_REPS = 100

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


class DegenerateSampleError(ValueError):
    """Raised when a statistic is undefined for the given sample (e.g. zero spread)."""


def sample_mean_cov(vectors):
    """Mean and unbiased covariance of the rows of ``vectors``."""
    x = np.asarray(vectors, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        raise ValueError("need at least two vectors for a sample covariance")
    mean = x.mean(axis=0)
    centred = x - mean
    return mean, centred.T @ centred / (n - 1)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_quantile(p):
    """Inverse standard normal CDF.

    Acklam's approximation (relative error about 1e-9) polished by one
    Halley step on ``erfc``. Accepts a scalar or an array.
    """
    if np.ndim(p):
        return np.array([normal_quantile(float(v)) for v in np.ravel(p)]).reshape(np.shape(p))
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p}")
    if p > 0.5:
        return -normal_quantile(1.0 - p) if 1.0 - p > 0.0 else math.inf
    x = _acklam(p)
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass
class QQReport:
    empirical_quantiles: list
    theoretical_quantiles: list
    correlation: float
    var_ratio: float
    n_reps: int
    levels: list

    def passes(self, min_correlation=0.99, var_band=(0.8, 1.2)) -> bool:
        return self.correlation >= min_correlation and var_band[0] <= self.var_ratio <= var_band[1]


def qq_report(errors, sigma_inf: float, min_reps: int = MIN_QQ_REPS) -> QQReport:
    """Compare sorted errors with ``N(0, sigma_inf)`` quantiles at ``(i - 0.5) / n``."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    n = len(e)
    if n < min_reps:
        raise ValueError(f"insufficient replications: {n} < {min_reps}")
    if sigma_inf <= 0:
        raise ValueError("theoretical variance must be positive")
    if not np.all(np.isfinite(e)):
        raise DegenerateSampleError("errors contain non-finite values")
    if np.ptp(e) == 0.0:
        raise DegenerateSampleError("all errors are equal; Q-Q correlation is undefined")
    levels = (np.arange(1, n + 1) - 0.5) / n
    theo = math.sqrt(sigma_inf) * normal_quantile(levels)
    corr = float(np.clip(np.corrcoef(e, theo)[0, 1], -1.0, 1.0))
    return QQReport(
        empirical_quantiles=e.tolist(),
        theoretical_quantiles=theo.tolist(),
        correlation=corr,
        var_ratio=float(np.var(e, ddof=1) / sigma_inf),
        n_reps=n,
        levels=levels.tolist(),
    )


def density_table(errors, sigma_inf: float, bins: int = 40):
    """Histogram density on a fixed grid over +-4 sd next to the normal density."""
    sd = math.sqrt(sigma_inf)
    edges = np.linspace(-4 * sd, 4 * sd, bins + 1)
    counts, _ = np.histogram(np.asarray(errors, dtype=float), bins=edges)
    width = edges[1] - edges[0]
    centres = 0.5 * (edges[:-1] + edges[1:])
    emp = counts / (len(errors) * width)
    theo = np.exp(-0.5 * centres**2 / sigma_inf) / math.sqrt(2 * math.pi * sigma_inf)
    return centres, emp, theo


def write_density_csv(path, errors, sigma_inf: float, bins: int = 40) -> None:
    centres, emp, theo = density_table(errors, sigma_inf, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "empirical_density", "theoretical_density"])
        for row in zip(centres, emp, theo):
            w.writerow([repr(float(v)) for v in row])


def write_qq_csv(path, report: QQReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "empirical_q", "theoretical_q"])
        for row in zip(report.levels, report.empirical_quantiles, report.theoretical_quantiles):
            w.writerow([repr(float(v)) for v in row])
