"""Small statistical helpers shared by the experiment harnesses."""
from __future__ import annotations

import numpy as np
from scipy import stats as sps


def central_moments(x, max_order: int = 4) -> np.ndarray:
    """Plug-in central moments m_0..m_max of a 1d sample."""
    x = np.asarray(x, float)
    if x.size == 0:
        raise ValueError("empty sample")
    c = x - x.mean()
    return np.array([np.mean(c**r) for r in range(max_order + 1)])


def k_statistics(x) -> dict:
    """Unbiased cumulant estimates k1..k4 plus standardized shape stats.

    skewness = k3 / k2^(3/2) and excess = k4 / k2^2 use the unbiased
    cumulants, so both vanish in expectation under a Gaussian law.
    """
    x = np.asarray(x, float)
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 observations for k4")
    m = central_moments(x, 4)
    k1 = float(x.mean())
    k2 = n / (n - 1) * m[2]
    k3 = n * n * m[3] / ((n - 1) * (n - 2))
    k4 = n * n * ((n + 1) * m[4] - 3 * (n - 1) * m[2] ** 2) / (
        (n - 1) * (n - 2) * (n - 3)
    )
    if k2 <= 0:
        raise ValueError("degenerate sample: zero variance")
    return {
        "n": int(n),
        "k1": k1,
        "k2": float(k2),
        "k3": float(k3),
        "k4": float(k4),
        "skewness": float(k3 / k2**1.5),
        "excess": float(k4 / k2**2),
    }


def wilson_interval(k: int, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need n > 0")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    z = float(sps.norm.ppf(0.5 + conf / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bound is exactly p at the degenerate counts; roundoff in the
    # sqrt path would otherwise leave a stray 1e-17 above or below
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def jackknife_se(x, stat) -> float:
    """Delete-one jackknife standard error of ``stat`` over sample ``x``."""
    x = np.asarray(x, float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    idx = np.arange(n)
    reps = np.array([stat(x[idx != i]) for i in range(n)])
    return float(np.sqrt((n - 1) / n * np.sum((reps - reps.mean()) ** 2)))


def fit_slope(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of y on x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two same-length samples of size >= 2")
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def fit_loglog_slope(x, y) -> tuple[float, float]:
    """Slope of log y on log x, skipping nonpositive entries."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        raise ValueError("need at least 2 positive points for a log-log fit")
    return fit_slope(np.log(x[keep]), np.log(y[keep]))


def normal_sf(u) -> np.ndarray | float:
    """Gaussian upper tail probability."""
    return sps.norm.sf(u)


def normal_cdf(u) -> np.ndarray | float:
    return sps.norm.cdf(u)
