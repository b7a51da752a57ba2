"""Exact quenched distribution kernels.

One backward application of the quenched transition operator,

    (S g)(x) = omega_x * g(x+1) + (1 - omega_x) * g(x-1),

evaluated N times on the indicator g(x) = 1{x <= c}, yields the tail
probability P(walk started at m is <= c after N steps) for every start m in
one sweep.  Joint tails over two observation times come from one masked
sweep.  From these fields the quenched mean and covariance of the particle
current follow by site sums, since initial counts are independent across
sites under the quenched law.

Fields are stored as a finite band plus constant fills on both sides; the
fills are invariant under the operator, so the representation is exact up to
the recorded clip bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import backward_sweep, forward_sweep
from .environment import Environment, floor_index

#: band edges closer than this to their fill are dropped (bound recorded)
CLIP = 1e-30

#: conservation / probability tolerances for field validation
MASS_TOL = 1e-12


class WindowError(RuntimeError):
    """Window too small for the dependence cone of the requested sweep."""


@dataclass
class SiteField:
    """A function of the start site: band values plus constant fills outside."""

    lo: int
    values: np.ndarray
    fill_left: float = 0.0
    fill_right: float = 0.0
    discarded: float = 0.0  # accumulated clip bound

    @property
    def hi(self) -> int:
        return self.lo + len(self.values) - 1

    def at(self, m: int) -> float:
        if m < self.lo:
            return self.fill_left
        if m > self.hi:
            return self.fill_right
        return float(self.values[m - self.lo])

    def dense(self, lo: int, hi: int) -> np.ndarray:
        """Values on [lo, hi] with fills expanded."""
        out = np.empty(hi - lo + 1)
        out[: max(0, min(self.lo, hi + 1) - lo)] = self.fill_left
        out[max(0, self.hi + 1 - lo) :] = self.fill_right
        a = max(lo, self.lo)
        b = min(hi, self.hi)
        if a <= b:
            out[a - lo : b - lo + 1] = self.values[a - self.lo : b - self.lo + 1]
        return out

    def total_mass(self) -> float:
        return math.fsum(self.values)

    def to_csv(self, path, lo=None, hi=None) -> None:
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        vals = self.dense(lo, hi)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site", "value"])
            for i, v in enumerate(vals):
                w.writerow([lo + i, repr(v)])


def front_cutoff(n: int, t: float, r: float, speed: float, shift: float = 0.0) -> float:
    """Observer position n*t*speed + r*sqrt(n) (+ optional front shift)."""
    return n * t * speed + r * math.sqrt(n) + shift


def step_of(n: int, t: float) -> int:
    """Observation step floor(n*t)."""
    return floor_index(n * t)


def _sweep(env: Environment, f: SiteField, steps: int, clip: float) -> SiteField:
    if steps == 0:
        return f
    band, lo, disc, status = backward_sweep(
        env.omega, env.lo, f.values, f.lo, f.fill_left, f.fill_right, steps, clip
    )
    if status:
        raise WindowError(
            f"backward sweep left window [{env.lo}, {env.hi}] after reaching band "
            f"[{lo}, {lo + len(band) - 1}]"
        )
    return SiteField(lo, band, f.fill_left, f.fill_right, f.discarded + disc)


def tail_field(env: Environment, n_steps: int, cutoff: float, clip: float = CLIP) -> SiteField:
    """P(X^m_N <= cutoff) for every start site m, by N backward sweeps."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    ci = floor_index(cutoff)
    if ci >= env.hi + n_steps:  # every in-window start is below the cutoff for sure
        return SiteField(env.hi, np.array([1.0]), 1.0, 1.0)
    if ci + n_steps < env.lo:  # no in-window start can reach the cutoff
        return SiteField(env.lo, np.array([0.0]), 0.0, 0.0)
    if not (env.lo <= ci < env.hi):
        raise WindowError(f"cutoff boundary {ci} outside window [{env.lo}, {env.hi}]")
    start = SiteField(ci, np.array([1.0, 0.0]), 1.0, 0.0)
    out = _sweep(env, start, n_steps, clip)
    if np.any(out.values < -MASS_TOL) or np.any(out.values > 1.0 + MASS_TOL):
        raise FloatingPointError("tail field left [0, 1]")
    return out


def _complement(f: SiteField) -> SiteField:
    return SiteField(f.lo, 1.0 - f.values, 1.0 - f.fill_left, 1.0 - f.fill_right, f.discarded)


def _mask_leq(f: SiteField, cutoff: float) -> SiteField:
    """Pointwise multiply by 1{m <= cutoff}."""
    ci = floor_index(cutoff)
    if ci >= f.hi:
        if ci == f.hi or f.fill_right == 0.0:
            return SiteField(f.lo, f.values.copy(), f.fill_left, 0.0, f.discarded)
        vals = np.concatenate([f.values, np.full(ci - f.hi, f.fill_right)])
        return SiteField(f.lo, vals, f.fill_left, 0.0, f.discarded)
    if ci < f.lo:
        if f.fill_left == 0.0:
            return SiteField(ci, np.array([0.0]), 0.0, 0.0, f.discarded)
        return SiteField(ci, np.array([f.fill_left, 0.0]), f.fill_left, 0.0, f.discarded)
    vals = np.append(f.values[: ci - f.lo + 1], 0.0)
    return SiteField(f.lo, vals, f.fill_left, 0.0, f.discarded)


def joint_tail_field(
    env: Environment,
    n1: int,
    c1: float,
    n2: int,
    c2: float,
    second: str = "le",
    clip: float = CLIP,
) -> SiteField:
    """P(X^m_{N1} <= c1, X^m_{N2} ~ c2) where ~ is '<=' (second='le') or '>' ('gt').

    One backward pass of N2-N1 steps gives the inner field, which is masked by
    1{y <= c1} and swept N1 more steps: two sweeps serve every start site.
    """
    if n1 > n2:
        raise ValueError("need n1 <= n2")
    if second not in ("le", "gt"):
        raise ValueError("second must be 'le' or 'gt'")
    if n1 == n2:
        # tie: the joint collapses to sharp combinations of single tails
        t_min = tail_field(env, n1, min(c1, c2), clip)
        if second == "le":
            return t_min
        t1 = tail_field(env, n1, c1, clip)
        lo = min(t1.lo, t_min.lo)
        hi = max(t1.hi, t_min.hi)
        vals = t1.dense(lo, hi) - t_min.dense(lo, hi)
        return SiteField(lo, vals, 0.0, 0.0, t1.discarded + t_min.discarded)
    inner = tail_field(env, n2 - n1, c2, clip)
    if second == "gt":
        inner = _complement(inner)
    return _sweep(env, _mask_leq(inner, c1), n1, clip)


def evolve_pmf(env: Environment, pmf: SiteField, steps: int, clip: float = CLIP) -> SiteField:
    """Exact push-forward of a start distribution by `steps` steps of the walk."""
    if pmf.fill_left != 0.0 or pmf.fill_right != 0.0:
        raise ValueError("a pmf must vanish outside its band")
    mass0 = math.fsum(pmf.values)
    if steps == 0:
        return pmf
    band, lo, disc, status = forward_sweep(
        env.omega, env.lo, pmf.values, pmf.lo, steps, clip
    )
    if status:
        raise WindowError("pmf support would exit the environment window")
    out = SiteField(lo, band, 0.0, 0.0, pmf.discarded + disc)
    if abs(math.fsum(out.values) + disc - mass0) > MASS_TOL:
        raise FloatingPointError("probability mass not conserved")
    return out


def martingale_defect(env: Environment, x: int) -> float:
    """One-step drift defect of the corrector-compensated walk at site x.

    omega_x*(1 + h(x+1)-h(x)) + (1-omega_x)*(-1 + h(x-1)-h(x)) - speed;
    identically zero in the interior, up to the documented seeding bias near
    the window edge.
    """
    fn = env.functionals()
    h = fn.corrector
    i = env.index(x)
    if x - 1 < env.lo or x + 1 > env.hi:
        raise IndexError("need x and its neighbours inside the window")
    w = env.omega[i]
    up = 1.0 + h[i + 1] - h[i]
    down = -1.0 + h[i - 1] - h[i]
    return float(w * up + (1.0 - w) * down - env.spec.speed)


# ---------------------------------------------------------------------------
# Quenched current moments
# ---------------------------------------------------------------------------


@dataclass
class InitMoments:
    """Per-site conditional mean and variance of the initial counts."""

    lo: int
    mean: np.ndarray
    var: np.ndarray

    @property
    def hi(self) -> int:
        return self.lo + len(self.mean) - 1

    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)


@dataclass
class CurrentMoments:
    """Exact quenched mean of the current and covariance of its scaled centering."""

    grid: list
    mean: np.ndarray  # E_omega of the current per grid point
    cov: np.ndarray | None  # covariance of n^{-1/4} * centered current
    truncation_tail: float

    def check_psd(self, tol: float = 1e-9) -> float:
        sym = 0.5 * (self.cov + self.cov.T)
        return float(np.linalg.eigvalsh(sym).min()) if self.cov is not None else 0.0


def _grid_cutoffs(env, n, grid, shifts):
    v = env.spec.speed
    if shifts is None:
        shifts = np.zeros(len(grid))
    steps = [step_of(n, t) for t, _ in grid]
    cuts = [front_cutoff(n, t, r, v, sh) for (t, r), sh in zip(grid, shifts)]
    return steps, cuts


def _edge_leak(tail: SiteField, lo: int, hi: int) -> float:
    """Unscaled bound on contributions the site range [lo, hi] leaves out."""
    leak = tail.discarded
    if tail.hi > hi:
        leak += float(np.sum(tail.values[max(hi + 1 - tail.lo, 0) :]))
    if tail.lo < lo:
        leak += float(np.sum(1.0 - tail.values[: min(lo - tail.lo, len(tail.values))]))
    return leak


def quenched_mean_current(
    env: Environment,
    init: InitMoments,
    n: int,
    grid: list,
    shifts=None,
    clip: float = CLIP,
):
    """E_omega of the current at every (t, r) grid point, plus a leak bound.

    The current counts starts m > 0 at-or-left-of the front against starts
    m <= 0 strictly right of it; its quenched mean is a site sum of the tail
    field weighted by the conditional initial means.
    """
    steps, cuts = _grid_cutoffs(env, n, grid, shifts)
    sites = init.sites()
    pos = sites > 0
    means = np.empty(len(grid))
    leak = 0.0
    for i in range(len(grid)):
        tf = tail_field(env, steps[i], cuts[i], clip)
        p = tf.dense(init.lo, init.hi)
        means[i] = math.fsum(init.mean[pos] * p[pos]) - math.fsum(
            init.mean[~pos] * (1.0 - p[~pos])
        )
        leak += _edge_leak(tf, init.lo, init.hi)
    scale = float(np.max(np.abs(init.mean))) if len(init.mean) else 0.0
    return means, leak * scale


def quenched_cov_current(
    env: Environment,
    init: InitMoments,
    n: int,
    grid: list,
    shifts=None,
    clip: float = CLIP,
) -> CurrentMoments:
    """Exact quenched covariance matrix of the scaled centered current.

    Initial counts are independent across sites under the quenched law, so
    the covariance is a single site sum per grid-point pair: a random-sum
    covariance combining the joint tail with the product of single tails,
    with the n^{-1/2} scaling of the squared n^{-1/4} normalization.
    """
    steps, cuts = _grid_cutoffs(env, n, grid, shifts)
    order = sorted(range(len(grid)), key=lambda i: steps[i])
    sites = init.sites()
    pos = sites > 0
    tails = {}
    leak = 0.0
    for i in range(len(grid)):
        tails[i] = tail_field(env, steps[i], cuts[i], clip)
        leak += _edge_leak(tails[i], init.lo, init.hi)
    dense = {i: tails[i].dense(init.lo, init.hi) for i in range(len(grid))}

    k = len(grid)
    cov = np.empty((k, k))
    scale = 1.0 / math.sqrt(n)
    for a in range(k):
        for b in range(a, k):
            i, j = (a, b) if steps[a] <= steps[b] else (b, a)
            if steps[i] == steps[j]:
                joint = tails[i] if cuts[i] <= cuts[j] else tails[j]
            else:
                joint = joint_tail_field(
                    env, steps[i], cuts[i], steps[j], cuts[j], "le", clip
                )
                leak += _edge_leak(joint, init.lo, init.hi)
            jj = joint.dense(init.lo, init.hi)
            pi, pj = dense[i], dense[j]
            central = jj - pi * pj
            cov_ab = (
                math.fsum(init.mean * central)
                + math.fsum(init.var[pos] * pi[pos] * pj[pos])
                + math.fsum(init.var[~pos] * (1.0 - pi[~pos]) * (1.0 - pj[~pos]))
            )
            cov[a, b] = cov[b, a] = scale * cov_ab

    means = np.empty(k)
    for i in range(k):
        p = dense[i]
        means[i] = math.fsum(init.mean[pos] * p[pos]) - math.fsum(
            init.mean[~pos] * (1.0 - p[~pos])
        )
    prof_scale = float(np.max(np.abs(init.mean) + np.abs(init.var))) if k else 0.0
    return CurrentMoments(list(grid), means, cov, leak * prof_scale)
