"""Independent ground truth for posterior scores.

An analytic one-dimensional scenario evaluates the Bayes posterior
p(1|x) = n1 f(x) / (n0 g(x) + n1 f(x)) exactly for Normal seeds against
either Normal or Uniform negatives, locates the decision thresholds
n1 f(x) = n0 g(x), and a Gaussian-KDE posterior provides a classifier-free
reference ranking on 2-D fixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .errors import DataError
from .training import BoundingBox

ROOT_SCAN_STEP = 1e-3
ROOT_BISECTION_TOL = 1e-10
ROOT_RESIDUAL_TOL = 1e-9


@dataclass
class NormalDensity:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise DataError("sigma must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))

    def support(self):
        return self.mu - 10.0 * self.sigma, self.mu + 10.0 * self.sigma


@dataclass
class UniformDensity:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DataError("uniform support needs lo < hi")

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def support(self):
        return self.lo, self.hi


@dataclass
class UnivariateScenario:
    """Seed density f, negative density g, and the two class weights."""

    f: NormalDensity | UniformDensity
    g: NormalDensity | UniformDensity
    n1: int = 1
    n0: int = 1

    def __post_init__(self):
        if self.n0 < 1 or self.n1 < 1:
            raise DataError("class weights must be >= 1")

    def swapped(self) -> "UnivariateScenario":
        """The same scenario with class roles exchanged."""
        return UnivariateScenario(f=self.g, g=self.f, n1=self.n0, n0=self.n1)


def _posterior_ratio(weighted_f: float, weighted_g: float) -> float:
    """weighted_f / (weighted_f + weighted_g), summing to exactly 1 with the
    role-swapped evaluation: the smaller term is divided, the larger one is
    obtained by complement, so the pair shares every rounding."""
    if weighted_f == 0.0 and weighted_g == 0.0:
        raise DataError("both densities vanish; posterior undefined")
    total = weighted_f + weighted_g
    if weighted_f <= weighted_g:
        return weighted_f / total
    return 1.0 - weighted_g / total


def analytic_posterior(x: float, s: UnivariateScenario) -> float:
    """Exact Bayes posterior with P(1)/P(0) approximated by n1/n0."""
    return _posterior_ratio(s.n1 * float(s.f.pdf(x)), s.n0 * float(s.g.pdf(x)))


def decision_thresholds(s: UnivariateScenario) -> list[float]:
    """All roots of n1 f(x) = n0 g(x), ascending.

    Sign changes are scanned on a fixed grid over both supports and refined
    by bisection; bracket endpoints that straddle a density discontinuity
    (uniform support edge) rather than a true crossing are discarded by a
    residual check.
    """
    los, his = zip(s.f.support(), s.g.support())
    grid = np.arange(min(los), max(his) + ROOT_SCAN_STEP, ROOT_SCAN_STEP)

    def h(x):
        return s.n1 * s.f.pdf(x) - s.n0 * s.g.pdf(x)

    values = h(grid)
    roots = []
    for i in np.flatnonzero(values[:-1] * values[1:] < 0):
        lo, hi = float(grid[i]), float(grid[i + 1])
        f_lo = float(values[i])
        while hi - lo > ROOT_BISECTION_TOL:
            mid = (lo + hi) / 2.0
            f_mid = float(h(mid))
            if f_mid == 0.0:
                lo = hi = mid
                break
            if (f_lo < 0) != (f_mid < 0):
                hi = mid
            else:
                lo, f_lo = mid, f_mid
        root = (lo + hi) / 2.0
        if abs(float(h(root))) < ROOT_RESIDUAL_TOL:
            roots.append(root)
    for i in np.flatnonzero(values == 0.0):
        roots.append(float(grid[i]))
    return sorted(roots)


@dataclass
class KdeOracle:
    """Gaussian-KDE seed density against a uniform box density."""

    centers: np.ndarray
    bandwidth: float
    box: BoundingBox
    n1: int = 1
    n0: int = 1

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.centers.size == 0:
            raise DataError("KDE needs at least one center")
        if self.bandwidth <= 0:
            raise DataError("bandwidth must be positive")


def silverman_bandwidth(centers) -> float:
    """Rule-of-thumb bandwidth 1.06 * sigma * n^(-1/5), averaged over dims."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n = centers.shape[0]
    if n < 2:
        raise DataError("need at least 2 centers for a bandwidth estimate")
    sigma = centers.std(axis=0, ddof=1).mean()
    if sigma == 0:
        raise DataError("centers are degenerate; bandwidth undefined")
    return float(1.06 * sigma * n ** (-0.2))


def kde_density(oracle: KdeOracle, x) -> np.ndarray:
    """Mean of isotropic Gaussian kernels at the centers."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    e = oracle.centers.shape[1]
    h2 = oracle.bandwidth**2
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(oracle.centers * oracle.centers, axis=1)[None, :]
        - 2.0 * x @ oracle.centers.T
    )
    np.maximum(d2, 0.0, out=d2)
    norm = (2.0 * math.pi * h2) ** (e / 2.0)
    return np.exp(-d2 / (2.0 * h2)).mean(axis=1) / norm


def kde_posterior(oracle: KdeOracle, x):
    """Posterior of the KDE seed density against the box-uniform negatives."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    f_hat = kde_density(oracle, x)
    g = oracle.n0 / oracle.box.volume
    out = np.array([_posterior_ratio(oracle.n1 * f, g) for f in f_hat])
    return float(out[0]) if single else out


def rank_agreement(a, b) -> float:
    """Spearman rank correlation with average ranks on ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("score lists must be 1-D and equally long")
    if a.size < 2:
        raise DataError("need at least two scores")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DataError("constant score list; rank agreement undefined")
    return float(spearmanr(a, b).statistic)
