"""Estimators and tolerance verdicts for simulation output.

Verdicts are pure functions of their inputs.  The default gate is k = 4
standard errors (two-sided false-failure rate ~6.3e-5 per check, so a
suite of ~40 checks stays reliable).  Jackknife standard errors delete one
replica group at a time: replicas are exchangeable by construction, sites
are not, and replicas sharing an environment stay in one group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

DEFAULT_K = 4.0
#: two-sided tail mass of +/- 4 standard errors
FOUR_SE_ALPHA = 2.0 * (1.0 - float(ndtr(4.0)))


@dataclass
class ToleranceResult:
    estimate: float
    se: float
    target: float
    k: float
    z: float
    passed: bool

    def __str__(self):
        return (
            f"estimate {self.estimate:.6g} vs target {self.target:.6g} "
            f"(z = {self.z:+.2f}, gate {self.k:g} SE): "
            + ("pass" if self.passed else "FAIL")
        )


def tolerance_check(estimate: float, se: float, target: float, k: float = DEFAULT_K) -> ToleranceResult:
    """Pass iff the target lies within k standard errors of the estimate."""
    if se < 0:
        raise ValueError("negative standard error")
    z = (estimate - target) / se if se > 0 else (0.0 if estimate == target else math.inf)
    return ToleranceResult(float(estimate), float(se), float(target), k, float(z), abs(z) <= k)


def _group_index(n_rows: int, groups) -> np.ndarray:
    if groups is None:
        return np.arange(n_rows)
    groups = np.asarray(groups)
    if len(groups) != n_rows:
        raise ValueError("groups must label every replica row")
    _, idx = np.unique(groups, return_inverse=True)
    return idx


@dataclass
class CovEstimate:
    """Sample covariance of replica rows with delete-one-group jackknife SEs."""

    cov: np.ndarray
    se: np.ndarray
    n_rows: int
    n_groups: int

    def report(self, pairs, targets, k: float = DEFAULT_K) -> "CovReport":
        results = []
        for (a, b), target in zip(pairs, targets):
            results.append(tolerance_check(self.cov[a, b], self.se[a, b], target, k))
        return CovReport(list(pairs), results, k)


@dataclass
class CovReport:
    pairs: list
    results: list
    k: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list:
        return [f"  pair {p}: {r}" for p, r in zip(self.pairs, self.results)]


def _cov_from_sums(q: np.ndarray, t: np.ndarray, n: int) -> np.ndarray:
    return (q - np.outer(t, t) / n) / (n - 1)


def estimate_cov(replica_matrix: np.ndarray, groups=None) -> CovEstimate:
    """Unbiased sample covariance across replica rows, jackknife SE per entry."""
    x = np.asarray(replica_matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 30:
        raise ValueError("need a (replicas x points) matrix with >= 30 replicas")
    n, _ = x.shape
    idx = _group_index(n, groups)
    n_groups = int(idx.max()) + 1
    if n_groups < 2:
        raise ValueError("need at least two replica groups")
    t_tot = x.sum(axis=0)
    q_tot = x.T @ x
    cov = _cov_from_sums(q_tot, t_tot, n)

    theta = np.empty((n_groups,) + cov.shape)
    for g in range(n_groups):
        rows = x[idx == g]
        ng = len(rows)
        if n - ng < 2:
            raise ValueError("a jackknife group leaves fewer than 2 rows")
        theta[g] = _cov_from_sums(q_tot - rows.T @ rows, t_tot - rows.sum(axis=0), n - ng)
    se = np.sqrt((n_groups - 1) / n_groups * np.sum((theta - theta.mean(axis=0)) ** 2, axis=0))
    return CovEstimate(cov, se, n, n_groups)


def jackknife_from_sums(group_sums: np.ndarray, group_counts: np.ndarray, stat):
    """Generic delete-one-group jackknife from per-group sufficient sums.

    stat(total_sums, n) maps pooled sums to the statistic.
    """
    group_sums = np.asarray(group_sums, dtype=float)
    group_counts = np.asarray(group_counts)
    total = group_sums.sum(axis=0)
    n = int(group_counts.sum())
    full = stat(total, n)
    g = len(group_sums)
    if g < 2:
        raise ValueError("need at least two groups")
    vals = np.array(
        [stat(total - group_sums[i], n - int(group_counts[i])) for i in range(g)]
    )
    se = math.sqrt((g - 1) / g * np.sum((vals - vals.mean()) ** 2))
    return float(full), se


def correlation_with_se(x: np.ndarray, y: np.ndarray, groups=None):
    """Pearson correlation with a delete-one-group jackknife SE."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = _group_index(len(x), groups)
    g = int(idx.max()) + 1
    feats = np.column_stack([x, y, x * x, y * y, x * y])
    sums = np.zeros((g, 5))
    counts = np.zeros(g, dtype=int)
    np.add.at(sums, idx, feats)
    np.add.at(counts, idx, 1)

    def stat(s, n):
        sx, sy, sxx, syy, sxy = s
        vx = sxx / n - (sx / n) ** 2
        vy = syy / n - (sy / n) ** 2
        cxy = sxy / n - (sx / n) * (sy / n)
        return cxy / math.sqrt(max(vx * vy, 1e-300))

    return jackknife_from_sums(sums, counts, stat)


@dataclass
class MomentNormality:
    skew: float
    skew_se: float
    excess_kurtosis: float
    kurt_se: float
    k: float
    passed: bool


def moment_normality(samples: np.ndarray, k: float = DEFAULT_K) -> MomentNormality:
    """Skewness/excess-kurtosis test against the Gaussian null."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 100:
        raise ValueError("need at least 100 samples")
    c = x - x.mean()
    m2 = np.mean(c * c)
    skew = float(np.mean(c**3) / m2**1.5)
    kurt = float(np.mean(c**4) / m2**2 - 3.0)
    skew_se = math.sqrt(6.0 / n)
    kurt_se = math.sqrt(24.0 / n)
    ok = abs(skew) <= k * skew_se and abs(kurt) <= k * kurt_se
    return MomentNormality(skew, skew_se, kurt, kurt_se, k, ok)


@dataclass
class ScalingFit:
    sizes: np.ndarray
    stats: np.ndarray
    slope: float
    slope_se: float
    intercept: float


def scaling_fit(pairs) -> ScalingFit:
    """Least-squares log-log slope over (size, statistic) pairs (>= 3 sizes)."""
    pairs = sorted(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three sizes")
    sizes = np.array([p[0] for p in pairs], dtype=float)
    stats_ = np.array([p[1] for p in pairs], dtype=float)
    if np.any(stats_ <= 0):
        raise ValueError("statistics must be positive for a log-log fit")
    lx, ly = np.log(sizes), np.log(stats_)
    vx = lx - lx.mean()
    slope = float(np.dot(vx, ly) / np.dot(vx, vx))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = len(pairs) - 2
    slope_se = float(
        math.sqrt(np.dot(resid, resid) / dof / np.dot(vx, vx))
    ) if dof > 0 else 0.0
    return ScalingFit(sizes, stats_, slope, slope_se, intercept)


@dataclass
class GofResult:
    statistic: float
    dof: int
    critical: float
    alpha: float
    passed: bool
    n_bins: int


def count_gof(observed: np.ndarray, pmf, alpha: float = FOUR_SE_ALPHA, min_expected: float = 5.0) -> GofResult:
    """Chi-square goodness of fit of integer count samples against a pmf.

    pmf(k) gives the null probability of count k; the upper tail is pooled so
    every bin's expected count is at least `min_expected`.
    """
    obs = np.asarray(observed)
    if obs.ndim != 1 or len(obs) < 100:
        raise ValueError("need at least 100 count samples")
    if np.any(obs < 0):
        raise ValueError("counts must be nonnegative")
    n = len(obs)
    kmax = int(obs.max())
    freqs = np.bincount(obs, minlength=kmax + 1).astype(float)
    probs = np.array([pmf(k) for k in range(kmax + 1)])
    tail = max(1.0 - probs.sum(), 0.0)
    # pool from the right until expected mass is big enough
    exp_counts = np.append(probs * n, tail * n)
    obs_counts = np.append(freqs, 0.0)
    while len(exp_counts) > 2 and exp_counts[-1] < min_expected:
        exp_counts[-2] += exp_counts[-1]
        obs_counts[-2] += obs_counts[-1]
        exp_counts = exp_counts[:-1]
        obs_counts = obs_counts[:-1]
    # pool small leading bins too (very small lambda cases)
    while len(exp_counts) > 2 and exp_counts[0] < min_expected:
        exp_counts[1] += exp_counts[0]
        obs_counts[1] += obs_counts[0]
        exp_counts = exp_counts[1:]
        obs_counts = obs_counts[1:]
    stat = float(np.sum((obs_counts - exp_counts) ** 2 / exp_counts))
    dof = len(exp_counts) - 1
    crit = float(chi2.ppf(1.0 - alpha, dof))
    return GofResult(stat, dof, crit, alpha, stat <= crit, len(exp_counts))
