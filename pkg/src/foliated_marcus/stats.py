"""Monte Carlo estimators shared by the experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

BOOTSTRAP_RESAMPLES = 400


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    replicas: int


def mean_estimate(samples) -> Estimate:
    s = np.asarray(samples, dtype=float)
    se = float(s.std(ddof=1) / np.sqrt(s.size)) if s.size > 1 else float("inf")
    return Estimate(float(s.mean()), se, int(s.size))


def lp_estimate(samples, p: float) -> Estimate:
    """``(E|S|^p)^(1/p)`` with a delta-method standard error."""
    s = np.abs(np.asarray(samples, dtype=float))
    n = s.size
    moments = s**p
    m = float(moments.mean())
    if m == 0.0:
        return Estimate(0.0, 0.0, n)
    value = m ** (1.0 / p)
    se_m = float(moments.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return Estimate(value, value * se_m / (p * m), n)


def bootstrap_lp(samples, p: float, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES) -> Estimate:
    """L^p norm of the samples with a nonparametric bootstrap standard error."""
    s = np.abs(np.asarray(samples, dtype=float))
    n = s.size
    value = float(np.mean(s**p) ** (1.0 / p))
    idx = rng.integers(0, n, size=(resamples, n))
    boots = np.mean(s[idx] ** p, axis=1) ** (1.0 / p)
    return Estimate(value, float(boots.std(ddof=1)), n)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    slope_stderr: float


def loglog_fit(x, y) -> SlopeFit:
    """Least-squares line through ``(log x, log y)``."""
    res = sps.linregress(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2), float(res.stderr))


def linear_fit(x, y) -> SlopeFit:
    res = sps.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2), float(res.stderr))
