"""Closed-form limit objects for the centered current.

The limiting covariance kernel is built from the mean negative part of a
shifted Gaussian,

    psi(a2, x) = E[ (x + N(0, a2))^- ] = a2*pdf_{a2}(x) - x*cdf_{a2}(-x),

which degenerates to x^- as a2 -> 0.  The kernel combines psi terms weighted
by the mean density and the initial-count variance rate; an equivalent
integral representation (joint Brownian probabilities integrated over space)
is implemented by quadrature as an independent route, including its
finite-spatial-cutoff variant used for the finite-size quadratic form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr, owens_t

SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LimitParams:
    """Constants entering the limit covariances."""

    mu: float  # mean particle density
    sigma0_sq: float  # initial-count variance rate
    sigma1_sq: float  # quenched CLT variance rate
    sigma2_sq: float  # environment variance rate

    def __post_init__(self):
        if self.sigma1_sq <= 0:
            raise ValueError("sigma1_sq must be positive")
        if min(self.mu, self.sigma0_sq, self.sigma2_sq) < 0:
            raise ValueError("rates must be nonnegative")

    @staticmethod
    def from_theory(tp) -> "LimitParams":
        return LimitParams(tp.mu, tp.sigma0_sq, tp.sigma1_sq, tp.sigma2_sq)


def gaussian_negative_part(alpha_sq: float, x):
    """Mean negative part of x + N(0, alpha_sq); equals x^- when alpha_sq = 0."""
    x = np.asarray(x, dtype=float)
    if alpha_sq < 0:
        raise ValueError("alpha_sq must be >= 0")
    if alpha_sq == 0.0:
        out = np.maximum(-x, 0.0)
        return float(out) if out.ndim == 0 else out
    a = math.sqrt(alpha_sq)
    z = x / a
    out = a * np.exp(-0.5 * z * z) / SQRT2PI - x * ndtr(-z)
    return float(out) if out.ndim == 0 else out


def cov_kernel(params: LimitParams, pt1, pt2) -> float:
    """Limit covariance of the centered current at (s, q) and (t, r), closed form."""
    s, q = pt1
    t, r = pt2
    if s < 0 or t < 0:
        raise ValueError("times must be nonnegative")
    s1 = params.sigma1_sq
    psi = gaussian_negative_part
    bulk = params.mu * (psi(s1 * (s + t), q - r) - psi(s1 * abs(s - t), q - r))
    seed = params.sigma0_sq * (
        psi(s1 * s, -q) + psi(s1 * t, r) - psi(s1 * (s + t), r - q)
    )
    return float(bulk + seed)


def cov_given_shift(params: LimitParams, points, shifts) -> np.ndarray:
    """Conditional covariance matrix given a path of the spatial shift.

    Entry (i, j) is the kernel evaluated at the shift-displaced space points
    (t_i, r_i + shift_i), (t_j, r_j + shift_j).
    """
    pts = [(t, r + z) for (t, r), z in zip(points, shifts)]
    k = len(pts)
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            out[i, j] = out[j, i] = cov_kernel(params, pts[i], pts[j])
    return out


def averaged_fbm_cov(params: LimitParams, s: float, t: float) -> float:
    """Averaged covariance at r = 0 in the density-matched case: a quarter-Hurst
    fractional-Brownian shape sqrt(s) + sqrt(t) - sqrt(|s-t|)."""
    if abs(params.mu - params.sigma0_sq) > 1e-9 * max(1.0, params.mu):
        raise ValueError("closed form requires the density-matched case mu == sigma0_sq")
    amp = params.mu * math.sqrt(params.sigma1_sq + params.sigma2_sq) / SQRT2PI
    return amp * (math.sqrt(s) + math.sqrt(t) - math.sqrt(abs(s - t)))


# ---------------------------------------------------------------------------
# Integral representation
# ---------------------------------------------------------------------------


def bvn_cdf(h: float, k: float, rho: float) -> float:
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho.

    Rectangle decomposition through Owen's T function; exact special cases at
    rho = +/-1 and at zero arguments.
    """
    if rho >= 1.0:
        return float(ndtr(min(h, k)))
    if rho <= -1.0:
        return float(max(ndtr(h) + ndtr(k) - 1.0, 0.0))
    if h == 0.0 and k == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    denom = math.sqrt(1.0 - rho * rho)
    if h == 0.0:
        return float(0.5 * ndtr(k) - owens_t(k, -rho / denom))
    if k == 0.0:
        return float(0.5 * ndtr(h) - owens_t(h, -rho / denom))
    beta = 0.5 if h * k < 0.0 else 0.0
    t1 = owens_t(h, (k - rho * h) / (h * denom))
    t2 = owens_t(k, (h - rho * k) / (k * denom))
    return float(0.5 * (ndtr(h) + ndtr(k)) - t1 - t2 - beta)


def _leq(var: float, a: float) -> float:
    """P(N(0, var) <= a), degenerate at var = 0."""
    if var <= 0.0:
        return 1.0 if a >= 0.0 else 0.0
    return float(ndtr(a / math.sqrt(var)))


def _joint_leq(var_s: float, a: float, var_t: float, b: float) -> float:
    """P(B at var_s <= a, B at var_t <= b) for one Brownian path (cov = min)."""
    if var_s <= 0.0:
        return _leq(var_t, b) if a >= 0.0 else 0.0
    if var_t <= 0.0:
        return _leq(var_s, a) if b >= 0.0 else 0.0
    rho = math.sqrt(min(var_s, var_t) / max(var_s, var_t))
    return bvn_cdf(a / math.sqrt(var_s), b / math.sqrt(var_t), rho)


def cov_kernel_quadrature(
    params: LimitParams,
    pt1,
    pt2,
    spatial_cutoff: float | None = None,
    tol: float = 1e-8,
) -> float:
    """The kernel via its integral representation (independent of cov_kernel).

    The bulk term integrates, over all space, the probability that one
    Brownian path is left of the first cutoff at the first time but right of
    the second cutoff at the second time (decoupled minus joint); the seeding
    term integrates products of single-time probabilities over half-lines.
    With `spatial_cutoff` the integrals run over [-cutoff, cutoff] instead,
    which is the finite-size quadratic-form variant.
    """
    s, q = pt1
    t, r = pt2
    vs, vt = params.sigma1_sq * s, params.sigma1_sq * t
    if spatial_cutoff is None:
        span = max(abs(q), abs(r)) + 8.0 * math.sqrt(params.sigma1_sq * max(s, t, 1e-12))
    else:
        span = float(spatial_cutoff)

    def bulk(x):
        a, b = q - x, r - x
        pa = _leq(vs, a)
        joint_gt = pa - _joint_leq(vs, a, vt, b)  # P(first <= a, second > b)
        return pa * (1.0 - _leq(vt, b)) - joint_gt

    def seed_right(x):
        return _leq(vs, q - x) * _leq(vt, r - x)

    def seed_left(x):
        return (1.0 - _leq(vs, q - x)) * (1.0 - _leq(vt, r - x))

    eps = tol * 0.05
    total = 0.0
    err = 0.0
    if params.mu != 0.0 and min(s, t) > 0.0:
        val, e = quad(bulk, -span, span, epsabs=eps, epsrel=0.0, limit=400)
        total += params.mu * val
        err += abs(params.mu) * e
    if params.sigma0_sq != 0.0:
        v1, e1 = quad(seed_right, 0.0, span, epsabs=eps, epsrel=0.0, limit=400)
        v2, e2 = quad(seed_left, -span, 0.0, epsabs=eps, epsrel=0.0, limit=400)
        total += params.sigma0_sq * (v1 + v2)
        err += params.sigma0_sq * (e1 + e2)
    if err > tol:
        raise RuntimeError(
            f"quadrature did not converge: error estimate {err:.3e} > tol {tol:.3e} "
            f"at points {pt1}, {pt2} (span {span:.3f})"
        )
    return total


def finite_size_quadratic_form(
    params: LimitParams, points, alphas, shifts, spatial_cutoff: float, tol: float = 1e-8
) -> float:
    """Quadratic form of finite-cutoff kernel integrals at shift-displaced points.

    This is the deterministic function of the shift vector that the summed
    quenched variances of the scaled current converge to.
    """
    alphas = np.asarray(alphas, dtype=float)
    pts = [(t, r + z) for (t, r), z in zip(points, shifts)]
    total = 0.0
    for i in range(len(pts)):
        for j in range(len(pts)):
            if alphas[i] == 0.0 or alphas[j] == 0.0:
                continue
            total += alphas[i] * alphas[j] * cov_kernel_quadrature(
                params, pts[i], pts[j], spatial_cutoff=spatial_cutoff, tol=tol
            )
    return total


# ---------------------------------------------------------------------------
# Mixture sampling
# ---------------------------------------------------------------------------


@dataclass
class ZPathSample:
    """One sampled path of the environment shift on a sorted time grid."""

    times: np.ndarray
    values: np.ndarray


def sample_shift_path(params: LimitParams, times, rng) -> ZPathSample:
    """Brownian path with variance rate sigma2_sq on the given sorted times."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (len(times) and times[0] < 0):
        raise ValueError("times must be sorted and nonnegative")
    sd = np.sqrt(params.sigma2_sq * np.diff(np.concatenate(([0.0], times))))
    values = np.cumsum(sd * rng.standard_normal(len(times)))
    return ZPathSample(times, values)


def equal_point_variance(params: LimitParams, t: float, r: float, shift) -> np.ndarray:
    """Conditional variance of the limit current at one point given the shift."""
    shift = np.asarray(shift, dtype=float)
    s1 = params.sigma1_sq
    psi = gaussian_negative_part
    x = r + shift
    return params.mu * psi(2.0 * s1 * t, 0.0) + params.sigma0_sq * (
        psi(s1 * t, -x) + psi(s1 * t, x) - psi(2.0 * s1 * t, 0.0)
    )


def mixture_moments(params: LimitParams, t: float, r: float, draws: int, seed: int):
    """Monte Carlo moments of the limit current at one point under the averaged law.

    The current given the shift is centered Gaussian with the conditional
    variance; the shift is Brownian.  Returns ((variance, se), (excess
    kurtosis, se)) with delete-block jackknife standard errors.
    """
    if draws < 10_000:
        raise ValueError("need at least 1e4 draws")
    rng = np.random.default_rng(seed)
    z = math.sqrt(params.sigma2_sq * t) * rng.standard_normal(draws)
    cond_var = equal_point_variance(params, t, r, z)
    v = np.sqrt(cond_var) * rng.standard_normal(draws)

    def stats(x2, x4):
        m2, m4 = x2.mean(), x4.mean()
        return m2, m4 / (m2 * m2) - 3.0

    x2, x4 = v * v, v**4
    var_hat, kurt_hat = stats(x2, x4)
    blocks = 100
    usable = (draws // blocks) * blocks
    b2 = x2[:usable].reshape(blocks, -1).mean(axis=1)
    b4 = x4[:usable].reshape(blocks, -1).mean(axis=1)
    s2, s4 = b2.sum(), b4.sum()
    var_j = np.empty(blocks)
    kurt_j = np.empty(blocks)
    for i in range(blocks):
        m2 = (s2 - b2[i]) / (blocks - 1)
        m4 = (s4 - b4[i]) / (blocks - 1)
        var_j[i] = m2
        kurt_j[i] = m4 / (m2 * m2) - 3.0
    fac = math.sqrt((blocks - 1) / blocks)
    var_se = fac * math.sqrt(np.sum((var_j - var_j.mean()) ** 2))
    kurt_se = fac * math.sqrt(np.sum((kurt_j - kurt_j.mean()) ** 2))
    return (float(var_hat), float(var_se)), (float(kurt_hat), float(kurt_se))
