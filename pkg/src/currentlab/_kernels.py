"""Numba kernels: walk stepping, field sweeps, profile recursions.

Everything here is deterministic given its inputs.  Random decisions use a
counter-based generator (splitmix64-style finalizer): each particle owns a
stream keyed by (seed, replica, start site, particle index), and the uniform
for step t is a pure function of (stream key, t).  Results are therefore
independent of iteration order, chunking and worker count.
"""

import numba as nb
import numpy as np

U64 = np.uint64
GOLDEN = U64(0x9E3779B97F4A7C15)
_C_REPLICA = U64(0xA0761D6478BD642F)
_C_SITE = U64(0xE7037ED1A0B428DB)
_C_INDEX = U64(0x8EBC6AF09C88C6E3)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@nb.njit(nb.uint64(nb.uint64), inline="always", cache=True)
def _mix64(z):
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@nb.njit(nb.uint64(nb.uint64, nb.int64, nb.int64, nb.int64), inline="always", cache=True)
def stream_key(seed, replica, site, index):
    z = _mix64(seed + GOLDEN)
    z = _mix64(z ^ _mix64(U64(replica) + _C_REPLICA))
    z = _mix64(z ^ _mix64(U64(site) + _C_SITE))
    return _mix64(z ^ _mix64(U64(index) + _C_INDEX))


@nb.njit(nb.float64(nb.uint64, nb.int64), inline="always", cache=True)
def stream_uniform(key, t):
    return np.float64(_mix64(key + U64(t) * GOLDEN) >> U64(11)) * _INV53


@nb.njit(cache=True)
def stream_keys(seed, replica, sites, indices):
    out = np.empty(len(sites), dtype=np.uint64)
    for i in range(len(sites)):
        out[i] = stream_key(seed, replica, sites[i], indices[i])
    return out


@nb.njit(cache=True)
def walk_to_checkpoints(omega, w_lo, starts, keys, checkpoints, positions):
    """Advance each particle along its own stream, recording checkpoint positions.

    positions: (n_particles, n_checkpoints) output.  Returns 0, or 1 if any
    particle stepped outside the environment window (window sizing bug).
    """
    n_cp = len(checkpoints)
    n_steps = checkpoints[n_cp - 1] if n_cp > 0 else 0
    w_hi = w_lo + len(omega) - 1
    bad = 0
    for p in range(len(starts)):
        pos = starts[p]
        key = keys[p]
        ci = 0
        while ci < n_cp and checkpoints[ci] == 0:
            positions[p, ci] = pos
            ci += 1
        for t in range(1, n_steps + 1):
            if pos < w_lo or pos > w_hi:
                bad = 1
                break
            if stream_uniform(key, t) < omega[pos - w_lo]:
                pos += 1
            else:
                pos -= 1
            if ci < n_cp and t == checkpoints[ci]:
                positions[p, ci] = pos
                ci += 1
    return bad


@nb.njit(cache=True)
def first_passage_steps(omega, w_lo, site, key, max_steps):
    """Steps for one walk started at `site` to first reach site+1 (-1 on overrun)."""
    pos = site
    w_hi = w_lo + len(omega) - 1
    for t in range(1, max_steps + 1):
        if pos < w_lo or pos > w_hi:
            return -1
        if stream_uniform(key, t) < omega[pos - w_lo]:
            pos += 1
        else:
            pos -= 1
        if pos == site + 1:
            return t
    return -1


@nb.njit(cache=True)
def backward_sweep(omega, w_lo, band, b_lo, fill_l, fill_r, steps, clip):
    """Apply the one-step backward operator `steps` times to a site function.

    The function equals fill_l left of the band and fill_r right of it; those
    regions are invariant under the operator, so only the band (which widens
    by at most one site per step) is stored.  Band edges whose value is within
    `clip` of the adjacent fill are dropped; the discarded deviation is
    accumulated and returned as an error bound.

    Returns (band, b_lo, discarded, status); status 1 means the band hit the
    environment window (window too small for the dependence cone).
    """
    width0 = len(band)
    cap = width0 + 2 * steps + 2
    cur = np.empty(cap)
    new = np.empty(cap)
    n = width0
    cur[:n] = band
    lo = b_lo
    w_hi = w_lo + len(omega) - 1
    discarded = 0.0
    for _ in range(steps):
        nlo = lo - 1
        if nlo < w_lo or lo + n > w_hi:
            return cur[:n].copy(), lo, discarded, 1
        for i in range(n + 2):
            x = nlo + i
            j = x - lo
            right = cur[j + 1] if 0 <= j + 1 < n else (fill_l if j + 1 < 0 else fill_r)
            left = cur[j - 1] if 0 <= j - 1 < n else (fill_l if j - 1 < 0 else fill_r)
            w = omega[x - w_lo]
            new[i] = w * right + (1.0 - w) * left
        a = 0
        b = n + 2
        while a < b - 1 and abs(new[a] - fill_l) <= clip:
            discarded += abs(new[a] - fill_l)
            a += 1
        while b > a + 1 and abs(new[b - 1] - fill_r) <= clip:
            discarded += abs(new[b - 1] - fill_r)
            b -= 1
        n = b - a
        lo = nlo + a
        cur[:n] = new[a:b]
    return cur[:n].copy(), lo, discarded, 0


@nb.njit(cache=True)
def forward_sweep(omega, w_lo, band, b_lo, steps, clip):
    """Push a probability mass function forward `steps` steps (adjoint sweep).

    Mass outside the stored band is zero.  Returns (band, b_lo, discarded,
    status) like backward_sweep; discarded bounds the trimmed mass.
    """
    width0 = len(band)
    cap = width0 + 2 * steps + 2
    cur = np.empty(cap)
    new = np.empty(cap)
    n = width0
    cur[:n] = band
    lo = b_lo
    w_hi = w_lo + len(omega) - 1
    discarded = 0.0
    for _ in range(steps):
        nlo = lo - 1
        if nlo < w_lo or lo + n > w_hi:
            return cur[:n].copy(), lo, discarded, 1
        for i in range(n + 2):
            x = nlo + i
            j = x - lo
            from_left = cur[j - 1] * omega[x - 1 - w_lo] if 0 <= j - 1 < n else 0.0
            from_right = cur[j + 1] * (1.0 - omega[x + 1 - w_lo]) if 0 <= j + 1 < n else 0.0
            new[i] = from_left + from_right
        a = 0
        b = n + 2
        while a < b - 1 and abs(new[a]) <= clip:
            discarded += abs(new[a])
            a += 1
        while b > a + 1 and abs(new[b - 1]) <= clip:
            discarded += abs(new[b - 1])
            b -= 1
        n = b - a
        lo = nlo + a
        cur[:n] = new[a:b]
    return cur[:n].copy(), lo, discarded, 0


@nb.njit(cache=True)
def crossing_moment_profiles(rho, seed_mean, seed_sq):
    """Left-to-right recursions for per-site crossing-time mean and second moment.

    a[x] = 1 + rho[x] * (1 + a[x-1])
    s[x] = 1 + rho[x] * (1 + s[x-1] + 2*a[x-1] + 2*a[x] + 2*a[x-1]*a[x])
    seeded with the annealed values at the left edge.
    """
    n = len(rho)
    a = np.empty(n)
    s = np.empty(n)
    a_prev = seed_mean
    s_prev = seed_sq
    for x in range(n):
        r = rho[x]
        ax = 1.0 + r * (1.0 + a_prev)
        sx = 1.0 + r * (1.0 + s_prev + 2.0 * a_prev + 2.0 * ax + 2.0 * a_prev * ax)
        a[x] = ax
        s[x] = sx
        a_prev = ax
        s_prev = sx
    return a, s


@nb.njit(cache=True)
def density_series(rho, rel_tol, max_depth):
    """Forward-product series S[x] = sum_i prod_{j=1..i} rho[x+j], truncated.

    Truncates when the running product drops below rel_tol or at max_depth.
    Returns (S, n_edge_hits) where n_edge_hits counts sites whose series ran
    into the array end before reaching the truncation threshold.
    """
    n = len(rho)
    out = np.empty(n)
    edge_hits = 0
    for x in range(n):
        total = 0.0
        prod = 1.0
        depth = 0
        while depth < max_depth:
            j = x + 1 + depth
            if j >= n:
                edge_hits += 1
                break
            prod *= rho[j]
            total += prod
            depth += 1
            if prod < rel_tol:
                break
        out[x] = total
    return out, edge_hits
