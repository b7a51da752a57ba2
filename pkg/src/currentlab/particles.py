"""Initial configurations, forward simulation, and current measurement.

Each particle is an independent chain under the quenched law.  A particle is
identified by (replica, start site, index-within-site) and owns a
counter-based random stream derived from that identity, so trajectories do
not depend on iteration order or worker count and replay bit-exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import stream_key, stream_keys, walk_to_checkpoints
from .environment import Environment, TheoryParams, front_corrector
from .kernel import (
    CurrentMoments,
    InitMoments,
    WindowError,
    front_cutoff,
    quenched_cov_current,
    quenched_mean_current,
    step_of,
)

#: reserved particle-index value keying the initial-count draws of a replica
_INIT_STREAM_INDEX = -0x1A17

INIT_MODES = ("deterministic", "annealed_poisson", "quenched_poisson")


@dataclass
class InitialConfig:
    """Occupation counts on a window plus the mode that generated them."""

    mode: str
    lo: int
    counts: np.ndarray  # int64, >= 0
    mu: float
    seed: int
    replica: int

    @property
    def hi(self) -> int:
        return self.lo + len(self.counts) - 1

    def total(self) -> int:
        return int(self.counts.sum())

    def start_sites_and_indices(self):
        """Expand counts to per-particle (site, index) in canonical order."""
        sites = np.repeat(np.arange(self.lo, self.hi + 1), self.counts)
        index = np.concatenate([np.arange(1, c + 1) for c in self.counts]) if len(
            self.counts
        ) else np.empty(0, dtype=np.int64)
        return sites.astype(np.int64), index.astype(np.int64)


def init_moments(env: Environment, mode: str, mu: float, site_range: tuple) -> InitMoments:
    """Conditional per-site mean/variance of the counts for the kernel sums."""
    mode = mode.replace("-", "_")
    lo, hi = site_range
    n = hi - lo + 1
    if mode == "deterministic":
        return InitMoments(lo, np.full(n, float(mu)), np.zeros(n))
    if mode == "annealed_poisson":
        return InitMoments(lo, np.full(n, float(mu)), np.full(n, float(mu)))
    if mode == "quenched_poisson":
        fn = env.functionals()
        lam = mu * fn.at(fn.density, np.arange(lo, hi + 1))
        return InitMoments(lo, lam, lam.copy())
    raise ValueError(f"unknown init mode {mode!r}")


def sample_initial(
    env: Environment, mode: str, site_range: tuple, mu: float, seed: int, replica: int = 0
) -> InitialConfig:
    """Draw one initial configuration on `site_range`.

    deterministic: a constant integer per site (mu must be an integer).
    annealed_poisson: i.i.d. Poisson(mu) counts, ignoring the environment.
    quenched_poisson: Poisson(mu * density multiplier) per site, independent
    across sites given the environment.
    """
    mode = mode.replace("-", "_")
    if mu < 0:
        raise ValueError("mean density must be nonnegative")
    lo, hi = site_range
    n = hi - lo + 1
    if mode == "deterministic":
        k = int(round(mu))
        if k != mu:
            raise ValueError("deterministic mode needs an integer count per site")
        counts = np.full(n, k, dtype=np.int64)
    else:
        key = int(stream_key(np.uint64(seed), replica, 0, _INIT_STREAM_INDEX))
        rng = np.random.Generator(np.random.Philox(key=key))
        if mode == "annealed_poisson":
            counts = rng.poisson(mu, size=n).astype(np.int64)
        elif mode == "quenched_poisson":
            lam = init_moments(env, mode, mu, site_range).mean
            counts = rng.poisson(lam).astype(np.int64)
        else:
            raise ValueError(f"unknown init mode {mode!r}")
    return InitialConfig(mode, lo, counts, float(mu), int(seed), int(replica))


def simulate_walks(
    env: Environment, config: InitialConfig, checkpoints, seed: int
) -> np.ndarray:
    """Positions of every particle at each checkpoint step.

    Returns an (n_particles, n_checkpoints) array; particle order is the
    canonical (site, index) order of the configuration.
    """
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if len(cps) and cps[0] < 0:
        raise ValueError("checkpoints must be nonnegative")
    sites, index = config.start_sites_and_indices()
    n_max = int(cps[-1]) if len(cps) else 0
    if len(sites) and (
        sites.min() - n_max < env.lo or sites.max() + n_max > env.hi
    ):
        raise WindowError("window does not cover start sites +/- the horizon")
    keys = stream_keys(np.uint64(seed), config.replica, sites, index)
    positions = np.empty((len(sites), len(cps)), dtype=np.int64)
    bad = walk_to_checkpoints(env.omega, env.lo, sites, keys, cps, positions)
    if bad:
        raise WindowError("a walk stepped outside the environment window")
    return positions


def observer_current(
    start_sites: np.ndarray, positions: np.ndarray, cutoff: float
) -> int:
    """Net current: starts right of the origin at-or-left of the observer,
    minus starts at-or-left of the origin strictly right of the observer."""
    gained = np.count_nonzero((start_sites > 0) & (positions <= cutoff))
    lost = np.count_nonzero((start_sites <= 0) & (positions > cutoff))
    return int(gained - lost)


def evolve_config(
    env: Environment, config: InitialConfig, steps: int, seed: int
) -> InitialConfig:
    """Advance every particle `steps` steps; returns the new occupation counts."""
    if steps == 0:
        return InitialConfig(
            config.mode, config.lo, config.counts.copy(), config.mu, config.seed, config.replica
        )
    positions = simulate_walks(env, config, [steps], seed)[:, 0]
    lo = int(positions.min()) if len(positions) else config.lo
    hi = int(positions.max()) if len(positions) else config.hi
    counts = np.bincount(positions - lo, minlength=hi - lo + 1).astype(np.int64)
    return InitialConfig(config.mode, lo, counts, config.mu, config.seed, config.replica)


# ---------------------------------------------------------------------------
# Replica observations
# ---------------------------------------------------------------------------


@dataclass
class CurrentObservation:
    """Currents of one replica on a (t, r) grid, centered against exact means."""

    grid: list
    Y: np.ndarray  # raw currents, integers
    V: np.ndarray  # Y minus the exact quenched mean
    Yq: np.ndarray  # currents against the corrector-shifted front
    Vq: np.ndarray
    Z_over_sqrt_n: np.ndarray  # per grid point, corrector at that t over sqrt(n)
    replica_id: int
    seed: int

    def check_monotone_in_r(self) -> bool:
        by_t = {}
        for i, (t, r) in enumerate(self.grid):
            by_t.setdefault(t, []).append((r, self.Y[i]))
        for rows in by_t.values():
            rows.sort()
            ys = [y for _, y in rows]
            if any(b < a for a, b in zip(ys, ys[1:])):
                return False
        return True

    def rows(self) -> list:
        out = []
        for i, (t, r) in enumerate(self.grid):
            out.append(
                {
                    "replica": self.replica_id,
                    "seed": self.seed,
                    "t": t,
                    "r": r,
                    "Y": int(self.Y[i]),
                    "V": float(self.V[i]),
                    "Yq": int(self.Yq[i]),
                    "Z_over_sqrt_n": float(self.Z_over_sqrt_n[i]),
                }
            )
        return out


def plan_site_band(params: TheoryParams, n: int, grid, band_sigmas: float = 8.0) -> int:
    """Half-width of the start-site range that matters for the current grid."""
    t_max = max(t for t, _ in grid)
    r_max = max(abs(r) for _, r in grid)
    sigma_eff = math.sqrt((params.sigma1_sq + params.sigma2_sq) * max(t_max, 1e-12))
    return int(math.ceil(math.sqrt(n) * (r_max + band_sigmas * sigma_eff))) + 1


def plan_window(params: TheoryParams, n: int, grid, spec_burn_in: int, band_sigmas: float = 8.0):
    """Shared environment window: start band +/- the speed-1 horizon + burn-in."""
    m = plan_site_band(params, n, grid, band_sigmas)
    horizon = step_of(n, max(t for t, _ in grid))
    w = m + horizon + spec_burn_in + 2
    return (-w, w), m


@dataclass
class ReplicaStudy:
    """Exact per-environment moments plus simulated replica observations."""

    env: Environment
    grid: list
    n: int
    site_band: int
    exact: CurrentMoments
    exact_shifted: CurrentMoments | None
    shifts: np.ndarray
    observations: list


def study_environment(
    env: Environment,
    init_mode: str,
    mu: float,
    n: int,
    grid,
    n_replicas: int,
    seed: int,
    site_band: int,
    with_shifted: bool = False,
    with_cov: bool = False,
    workers: int = 1,
) -> ReplicaStudy:
    """Exact quenched moments for one environment plus simulated replicas.

    The simulated currents and the exact means use one shared cutoff
    computation, so V = Y - E[Y] is centered bit-consistently.
    """
    grid = [(float(t), float(r)) for t, r in grid]
    moments = init_moments(env, init_mode, mu, (-site_band, site_band))
    shifts = np.array([-front_corrector(env, n, t) for t, _ in grid])
    if with_cov:
        exact = quenched_cov_current(env, moments, n, grid)
        exact_q = quenched_cov_current(env, moments, n, grid, shifts=shifts) if with_shifted else None
    else:
        means, leak = quenched_mean_current(env, moments, n, grid)
        exact = CurrentMoments(grid, means, None, leak)
        if with_shifted:
            means_q, leak_q = quenched_mean_current(env, moments, n, grid, shifts=shifts)
            exact_q = CurrentMoments(grid, means_q, None, leak_q)
        else:
            exact_q = None

    v = env.spec.speed
    steps = [step_of(n, t) for t, _ in grid]
    cps = sorted(set(steps))
    cp_col = {s: j for j, s in enumerate(cps)}
    cuts = np.array([front_cutoff(n, t, r, v) for t, r in grid])
    cuts_q = cuts + shifts
    z_over = np.array([-s / math.sqrt(n) for s in shifts])

    def one(replica: int) -> CurrentObservation:
        cfg = sample_initial(env, init_mode, (-site_band, site_band), mu, seed, replica)
        starts, _ = cfg.start_sites_and_indices()
        positions = simulate_walks(env, cfg, cps, seed)
        y = np.empty(len(grid), dtype=np.int64)
        yq = np.empty(len(grid), dtype=np.int64)
        for i in range(len(grid)):
            pos = positions[:, cp_col[steps[i]]]
            y[i] = observer_current(starts, pos, cuts[i])
            yq[i] = observer_current(starts, pos, cuts_q[i])
        vq = yq - (exact_q.mean if exact_q is not None else 0.0)
        return CurrentObservation(
            grid, y, y - exact.mean, yq, vq, z_over, replica, int(seed)
        )

    replicas = list(range(n_replicas))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            obs = list(pool.map(one, replicas))
    else:
        obs = [one(r) for r in replicas]
    return ReplicaStudy(env, grid, n, site_band, exact, exact_q, shifts, obs)
