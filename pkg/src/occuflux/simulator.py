"""Monte Carlo simulation of the immigration system and of single families.

Replicas are independent; replica ``i`` of a batch uses the stream
``SeedSequence(base_seed + i)`` and nothing else, so results do not depend
on the number of worker threads.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .model import GaussianBump, ParameterError, SpaceTimeTest, SystemParams, validate_params

__all__ = [
    "SimulationError",
    "OccupationSample",
    "FamilyStats",
    "default_box_radius",
    "default_dt",
    "make_rng",
    "mean_occupancy",
    "mean_occupation_integral",
    "run_replica",
    "occupation_fluctuations",
    "single_family",
    "family_batch",
    "laplace_mc",
    "samples_matrix",
    "write_samples_csv",
]

DEFAULT_MAX_PARTICLES = 10**7


class SimulationError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _worker_count(threads: int | None) -> int:
    env = os.environ.get("OCCUFLUX_THREADS")
    if env:
        return max(1, int(env))
    if threads:
        return max(1, int(threads))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class OccupationSample:
    """Values <X_T(t_i), phi_j> of one replica.

    ``raw`` holds the uncentred integrals int_0^{T t_i} <N_s, phi_j> ds and
    ``values`` the centred, 1/sqrt(T)-scaled fluctuations.
    """

    params: SystemParams
    times: np.ndarray
    tests: tuple[GaussianBump, ...]
    values: np.ndarray
    raw: np.ndarray
    seed: int
    centering: str = "analytic"
    events: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class FamilyStats:
    """Descendants of one ancestor started at ``x`` without immigration."""

    x: tuple[float, ...]
    times: np.ndarray
    mass: np.ndarray
    extinction_time: float | None
    occupation: float | None
    seed: int


def default_box_radius(params: SystemParams, tests: Sequence[GaussianBump]) -> float:
    extent = max((float(np.max(np.abs(b.mu))) for b in tests), default=0.0)
    width = max((b.width for b in tests), default=1.0)
    return extent + 10.0 * width + 5.0 * params.motion.spread_scale * math.sqrt(params.T)


def default_dt(params: SystemParams, tests: Sequence[GaussianBump]) -> float:
    width = min((b.width for b in tests), default=1.0)
    spread = params.motion.spread_scale
    dt = 0.05 / params.V
    if spread > 0:
        dt = min(dt, 0.05 * width ** 2 / spread ** 2)
    return dt


def _resolve(params: SystemParams, tests: Sequence[GaussianBump]) -> tuple[float, float]:
    R = params.box_radius if params.box_radius is not None else default_box_radius(params, tests)
    dt = params.dt if params.dt is not None else default_dt(params, tests)
    for b in tests:
        if b.d != params.d:
            raise ParameterError(f"test function dimension {b.d} != d={params.d}")
        lo = ndtr((-R - b.mu) / b.width)
        hi = ndtr((R - b.mu) / b.width)
        inside = float(np.prod(hi - lo))
        if inside < 1.0 - 1e-6:
            raise ParameterError(
                f"window [-{R}, {R}]^d holds only {inside:.8f} of a test bump's mass (< 1 - 1e-6)")
    return R, dt


def _step_bounds(horizon: float, dt: float, marks: Iterable[float]) -> np.ndarray:
    """Uniform steps of size dt on [0, horizon], refined to hit every mark."""
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    base = np.linspace(0.0, horizon, n + 1)
    marks = np.asarray([m for m in marks if 0.0 < m < horizon], dtype=float)
    if marks.size:
        tol = 1e-9 * max(horizon, 1.0)
        keep = np.ones(base.size, dtype=bool)
        for m in marks:
            keep &= np.abs(base - m) > tol
        base = np.union1d(base[keep], marks)
    return base


def _mark_index(bounds: np.ndarray, t: float) -> int:
    """Index of the step that ends at time t (-1 for t == 0)."""
    if t <= 0.0:
        return -1
    j = int(np.argmin(np.abs(bounds - t)))
    return j - 1


def _bump_arrays(tests: Sequence[GaussianBump], d: int):
    if not tests:
        tests = [GaussianBump(0.0, (0.0,) * d, 1.0)]
    amps = np.array([b.amplitude for b in tests], dtype=float)
    centers = np.array([b.center for b in tests], dtype=float).reshape(len(tests), d)
    inv2w2 = np.array([1.0 / (2.0 * b.width ** 2) for b in tests], dtype=float)
    return amps, centers, inv2w2


def _run_kernel(params, rng, R, bounds, tests, init_pos, L, H, max_particles):
    p1, p2 = params.motion.kernel_params
    amps, centers, inv2w2 = _bump_arrays(tests, params.d)
    inc, counts, stats = _kernels.simulate(
        rng, params.motion.code, float(p1), float(p2), float(params.V), float(params.q),
        float(H), float(L), float(R), np.ascontiguousarray(init_pos, dtype=float), bounds,
        amps, centers, inv2w2, int(max_particles))
    if stats[_kernels.ST_STATUS] == _kernels.STATUS_EXPLODED:
        raise SimulationError(
            f"particle-count explosion guard: more than {max_particles} live particles "
            f"(peak {int(stats[_kernels.ST_MAXLIVE])})")
    return inc, counts, stats


def _effective_decay(params: SystemParams) -> float:
    rate = params.Q
    if params.motion.kind == "ou":
        rate -= params.d * params.motion.theta
        if rate <= 0:
            raise ParameterError(
                f"OU motion needs Q > d*theta (Q={params.Q}, theta={params.motion.theta}): "
                "particles accumulate and the mean occupancy has no stationary regime")
    return rate


def mean_occupancy(params: SystemParams, t: float, phi: GaussianBump) -> float:
    """E <N_t, phi> for the full-space system."""
    a = _effective_decay(params)
    mass = phi.integral()
    decay = math.exp(-a * t)
    return params.L * decay * mass + params.H * (-math.expm1(-a * t)) / a * mass


def mean_occupation_integral(params: SystemParams, tau: float, phi: GaussianBump) -> float:
    """int_0^tau E <N_s, phi> ds in closed form."""
    a = _effective_decay(params)
    mass = phi.integral()
    ramp = -math.expm1(-a * tau) / a
    return mass * (params.L * ramp + params.H / a * (tau - ramp))


def run_replica(params: SystemParams, tests: Sequence[GaussianBump], grid: Sequence[float],
                seed: int | None = None, *, centering: str = "analytic",
                max_particles: int = DEFAULT_MAX_PARTICLES) -> OccupationSample:
    """Simulate one realisation of N on [0, T max(grid)] and return its fluctuations."""
    params = validate_params(params)
    tests = tuple(tests)
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(times > 1):
        raise ParameterError("grid times must lie in [0, 1]")
    if np.any(np.diff(times) <= 0):
        raise ParameterError("grid times must be strictly increasing")
    seed = params.seed if seed is None else int(seed)
    R, dt = _resolve(params, tests)
    T = params.T
    horizon = T * float(times.max()) if times.size else 0.0
    raw = np.zeros((times.size, len(tests)))
    events = {}
    if horizon > 0:
        bounds = _step_bounds(horizon, dt, T * times)
        rng = make_rng(seed)
        inc, counts, stats = _run_kernel(params, rng, R, bounds, tests,
                                         np.empty((0, params.d)), params.L, params.H, max_particles)
        cum = np.cumsum(inc, axis=0)
        for i, t in enumerate(times):
            j = _mark_index(bounds, T * t)
            if j >= 0:
                raw[i] = cum[j]
        events = {
            "initial": int(stats[_kernels.ST_INITIAL]),
            "immigrants": int(stats[_kernels.ST_IMMIGRANTS]),
            "branchings": int(stats[_kernels.ST_BRANCH]),
            "deaths": int(stats[_kernels.ST_DEATH]),
            "final": int(stats[_kernels.ST_FINAL]),
            "peak": int(stats[_kernels.ST_MAXLIVE]),
        }
    if centering == "analytic":
        mean = np.array([[mean_occupation_integral(params, T * t, b) for b in tests] for t in times])
        values = (raw - mean) / params.F_T
    elif centering == "none":
        values = raw / params.F_T
    else:
        raise ParameterError(f"unknown centering {centering!r} for a single replica")
    raw.setflags(write=False)
    values.setflags(write=False)
    return OccupationSample(params=params, times=times, tests=tests, values=values, raw=raw,
                            seed=seed, centering=centering, events=events)


def occupation_fluctuations(params: SystemParams, grid: Sequence[float], tests: Sequence[GaussianBump],
                            n_replicas: int, base_seed: int, *, T: float | None = None,
                            centering: str | None = None, threads: int | None = None,
                            max_particles: int = DEFAULT_MAX_PARTICLES) -> list[OccupationSample]:
    """Independent replicas with seeds base_seed + i.

    ``centering`` is ``"analytic"`` (closed-form mean) or ``"empirical"``
    (subtract the cross-replica mean); it defaults to analytic for Levy
    motion and empirical for OU.
    """
    if n_replicas < 2:
        raise ParameterError("need at least 2 replicas")
    params = validate_params(params)
    if T is not None:
        params = params.with_(T=T)
    if centering is None:
        centering = "analytic" if params.motion.is_levy else "empirical"
    if centering not in ("analytic", "empirical"):
        raise ParameterError(f"unknown centering {centering!r}")
    inner = "analytic" if centering == "analytic" else "none"
    seeds = [int(base_seed) + i for i in range(n_replicas)]

    def one(seed):
        return run_replica(params, tests, grid, seed, centering=inner, max_particles=max_particles)

    workers = _worker_count(threads)
    if workers == 1:
        samples = [one(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, seeds))

    if centering == "empirical":
        mean_raw = np.mean([s.raw for s in samples], axis=0)
        out = []
        for s in samples:
            vals = (s.raw - mean_raw) / params.F_T
            vals.setflags(write=False)
            out.append(OccupationSample(params=s.params, times=s.times, tests=s.tests, values=vals,
                                        raw=s.raw, seed=s.seed, centering="empirical", events=s.events))
        samples = out
    return samples


def samples_matrix(samples: Sequence[OccupationSample], *, skip_zero_time: bool = True) -> np.ndarray:
    """Stack replicas into an (n_replicas, m*k) array, time-major columns."""
    vals = np.stack([s.values for s in samples])
    if skip_zero_time:
        keep = samples[0].times > 0
        vals = vals[:, keep, :]
    return vals.reshape(len(samples), -1)


def write_samples_csv(samples: Sequence[OccupationSample], path) -> None:
    """Columns replica, t, phi_index, value; replica-major row order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "t", "phi_index", "value"])
        for r, s in enumerate(samples):
            for i, t in enumerate(s.times):
                for j in range(s.values.shape[1]):
                    w.writerow([r, repr(float(t)), j, repr(float(s.values[i, j]))])


def single_family(params: SystemParams, x, psi: SpaceTimeTest | None, horizon: float, seed: int, *,
                  r: float = 0.0, record_times: Sequence[float] = (),
                  max_particles: int = DEFAULT_MAX_PARTICLES) -> FamilyStats:
    """Descendants of delta_x on [0, horizon] without immigration.

    ``mass`` is the live count at each of ``record_times``; ``occupation``
    is int_0^horizon <N_s^x, Psi(., r + s)> ds when ``psi`` is given.
    """
    if not horizon > 0:
        raise ParameterError("horizon must be > 0")
    params = validate_params(params)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (params.d,):
        raise ParameterError(f"ancestor position must have {params.d} coordinates")
    rec = np.asarray(record_times, dtype=float)
    if np.any(rec < 0) or np.any(rec > horizon):
        raise ParameterError("record times must lie in [0, horizon]")
    dt = params.dt if params.dt is not None else default_dt(params, [psi.spatial] if psi else [])
    marks = list(rec)
    if psi is not None:
        marks += list(psi.time_knots() - r)
    bounds = _step_bounds(horizon, dt, marks)
    tests = [psi.spatial] if psi is not None else []
    rng = make_rng(seed)
    inc, counts, stats = _run_kernel(params, rng, 1.0, bounds, tests, x[None, :], 0.0, 0.0,
                                     max_particles)
    mass = np.empty(rec.size, dtype=np.int64)
    for i, t in enumerate(rec):
        j = _mark_index(bounds, t)
        mass[i] = 1 if j < 0 else counts[j]
    occupation = None
    if psi is not None:
        mids = r + 0.5 * (bounds[:-1] + bounds[1:])
        occupation = float(np.dot(inc[:, 0], psi.time_weight(mids)))
    ext = float(stats[_kernels.ST_EXTINCT])
    return FamilyStats(x=tuple(x), times=rec, mass=mass,
                       extinction_time=ext if ext >= 0 else None,
                       occupation=occupation, seed=int(seed))


def family_batch(params: SystemParams, x, psi: SpaceTimeTest | None, horizon: float, n: int,
                 base_seed: int, *, r: float = 0.0, record_times: Sequence[float] = (),
                 threads: int | None = None) -> list[FamilyStats]:
    seeds = [int(base_seed) + i for i in range(n)]

    def one(seed):
        return single_family(params, x, psi, horizon, seed, r=r, record_times=record_times)

    workers = _worker_count(threads)
    if workers == 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))


def laplace_mc(params: SystemParams, phi_test: SpaceTimeTest, T: float, n_replicas: int,
               base_seed: int, *, threads: int | None = None) -> np.ndarray:
    """Per-replica exp{-int_0^T <N_s, Psi_T(., s)> ds} with Psi_T = phi_test.scaled(T).

    Returns the array of per-replica values; its mean estimates K_T.
    """
    params = validate_params(params).with_(T=T)
    psi_T = phi_test.scaled(T)
    tests = [phi_test.spatial]
    R, dt = _resolve(params, tests)
    bounds = _step_bounds(T, dt, psi_T.time_knots())
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    weights = psi_T.time_weight(mids)

    def one(seed):
        rng = make_rng(seed)
        inc, _, _ = _run_kernel(params, rng, R, bounds, tests, np.empty((0, params.d)),
                                params.L, params.H, DEFAULT_MAX_PARTICLES)
        return math.exp(-float(np.dot(inc[:, 0], weights)))

    seeds = [int(base_seed) + i for i in range(n_replicas)]
    workers = _worker_count(threads)
    if workers == 1:
        return np.array([one(s) for s in seeds])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, seeds)))
