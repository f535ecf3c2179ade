"""Summary statistics, log-log slope fits and bootstrap intervals."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .walk import philox

N_BOOT = 1000
BOOT_SEED = 20240611


def summarize(x) -> dict:
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.1, 0.5, 0.9])
    return {
        "count": int(len(x)),
        "mean": float(x.mean()),
        "var": float(x.var(ddof=1)) if len(x) > 1 else 0.0,
        "q10": float(q[0]),
        "q50": float(q[1]),
        "q90": float(q[2]),
    }


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def within_se(x, target: float = 0.0, k: float = 3.0) -> bool:
    m, se = mean_se(x)
    return abs(m - target) <= k * se


def ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float((xc * (y - y.mean())).sum() / (xc * xc).sum())


STATISTICS = {
    "median": lambda d: np.median(np.abs(d), axis=-1),
    "l2": lambda d: np.sqrt(np.mean(np.asarray(d) ** 2, axis=-1)),
    "mean": lambda d: np.mean(d, axis=-1),
}


@dataclass(frozen=True)
class SlopeFit:
    statistic: str
    slope: float
    ci_low: float
    ci_high: float
    values: tuple[float, ...]  # statistic per abscissa

    @property
    def negative(self) -> bool:
        """Slope below zero with the 95% interval excluding zero."""
        return self.slope < 0 and self.ci_high < 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["values"] = list(self.values)
        return d


def loglog_slope(xs, samples, statistic: str = "median", n_boot: int = N_BOOT, seed: int = BOOT_SEED) -> SlopeFit:
    """Slope of log stat(samples[i]) against log xs[i], with a percentile bootstrap.

    Replicas are resampled independently within each abscissa.
    """
    stat = STATISTICS[statistic]
    samples = [np.asarray(s, dtype=float) for s in samples]
    lx = np.log(np.asarray(xs, dtype=float))
    values = np.array([stat(s) for s in samples])
    slope = ols_slope(lx, np.log(values))
    rng = philox(seed, 0)
    boot = np.empty((n_boot, len(samples)))
    for j, s in enumerate(samples):
        idx = rng.integers(0, len(s), size=(n_boot, len(s)))
        boot[:, j] = stat(s[idx])
    ly = np.log(boot)
    lxc = lx - lx.mean()
    slopes = (ly - ly.mean(axis=1, keepdims=True)) @ lxc / (lxc @ lxc)
    lo, hi = np.quantile(slopes, [0.025, 0.975])
    return SlopeFit(statistic, slope, float(lo), float(hi), tuple(float(v) for v in values))
