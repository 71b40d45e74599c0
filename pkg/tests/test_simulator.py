import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from occuflux import GaussianBump, MotionSpec, ParameterError, reference_params
from occuflux.simulator import (SimulationError, family_batch, mean_occupancy, mean_occupation_integral,
                                occupation_fluctuations, run_replica, samples_matrix, single_family,
                                write_samples_csv)

PHI = GaussianBump()


def test_empty_system_is_zero():
    p = reference_params(H=0.0, L=0.0, T=10.0)
    s = run_replica(p, [PHI], [0.5, 1.0], seed=1)
    assert np.all(s.raw == 0.0) and np.all(s.values == 0.0)


def test_pure_death_occupation_shrinks_with_rate():
    means = []
    for V in (1.0, 10.0, 100.0):
        p = reference_params(V=V, q=0.0, H=0.0, L=1.0, T=2.0)
        raws = [run_replica(p, [PHI], [1.0], seed=s).raw[0, 0] for s in range(200)]
        means.append(np.mean(raws))
    assert means[0] > means[1] > means[2]


def test_stationary_mean_occupation():
    p = reference_params(T=10.0)
    samples = occupation_fluctuations(p, [1.0], [PHI], 1000, 10, centering="analytic")
    per_time = np.array([s.raw[0, 0] for s in samples]) / p.T
    se = per_time.std(ddof=1) / math.sqrt(per_time.size)
    assert abs(per_time.mean() - p.H / p.Q * PHI.integral()) <= 3 * se


def test_mean_occupancy_closed_form():
    p = reference_params(L=0.3)
    assert mean_occupancy(p, 0.0, PHI) == pytest.approx(p.L * PHI.integral(), rel=1e-15)
    stat = reference_params()
    for t in (0.0, 1.0, 7.5):
        assert mean_occupancy(stat, t, PHI) == pytest.approx(stat.H / stat.Q * PHI.integral(), rel=1e-14)
    empty = reference_params(L=0.0)
    assert mean_occupancy(empty, 200.0, PHI) == pytest.approx(empty.H / empty.Q * PHI.integral(), rel=1e-12)


@pytest.mark.parametrize("motion", [MotionSpec.brownian(1.0), MotionSpec.ornstein_uhlenbeck(0.2)])
def test_mean_occupancy_matches_first_moment_ode(motion):
    p = reference_params(L=0.2, motion=motion)
    growth = motion.theta if motion.kind == "ou" else 0.0
    mass = PHI.integral()
    sol = solve_ivp(lambda t, m: (-p.Q + growth) * m + p.H * mass, (0.0, 6.0), [p.L * mass],
                    rtol=1e-12, atol=1e-14, dense_output=True)
    for t in (0.5, 2.0, 6.0):
        assert mean_occupancy(p, t, PHI) == pytest.approx(sol.sol(t)[0], rel=1e-9)


def test_mean_occupancy_rejects_strong_ou():
    p = reference_params(motion=MotionSpec.ornstein_uhlenbeck(0.7))
    with pytest.raises(ParameterError, match="Q > d\\*theta"):
        mean_occupancy(p, 1.0, PHI)


def test_late_window_mean_from_empty_start():
    p = reference_params(L=0.0, T=40.0)
    samples = occupation_fluctuations(p, [0.975, 1.0], [PHI], 400, 77, centering="analytic")
    window = np.array([s.raw[1, 0] - s.raw[0, 0] for s in samples])
    expect = mean_occupation_integral(p, 40.0, PHI) - mean_occupation_integral(p, 39.0, PHI)
    se = window.std(ddof=1) / math.sqrt(window.size)
    assert abs(window.mean() - expect) <= 3 * se


def test_family_mean_mass():
    p = reference_params()
    fams = family_batch(p, 0.0, None, 4.0, 10_000, 5, record_times=[1.0, 2.0, 4.0])
    mass = np.array([f.mass for f in fams], dtype=float)
    se = mass.std(axis=0, ddof=1) / 100.0
    assert np.all(np.abs(mass.mean(axis=0) - np.exp(-p.Q * np.array([1.0, 2.0, 4.0]))) <= 3 * se)


def test_pure_death_family():
    p = reference_params(q=0.0)
    fams = family_batch(p, 0.0, None, 1.0, 4000, 9, record_times=[1.0])
    mass = np.array([f.mass[0] for f in fams])
    assert set(np.unique(mass)) <= {0, 1}
    se = math.sqrt(math.exp(-1.0) * (1 - math.exp(-1.0)) / mass.size)
    assert abs(mass.mean() - math.exp(-1.0)) <= 3 * se


def test_families_die_out():
    p = reference_params()
    fams = family_batch(p, 0.0, None, 50.0 / p.Q, 10_000, 3)
    extinct = np.mean([f.extinction_time is not None for f in fams])
    assert extinct >= 0.999


def test_family_mass_is_zero_after_extinction():
    p = reference_params()
    for seed in range(200):
        f = single_family(p, 0.0, None, 10.0, seed, record_times=[0.5, 2.0, 5.0, 10.0])
        if f.extinction_time is not None:
            assert np.all(f.mass[f.times >= f.extinction_time] == 0)
        assert np.all(f.mass >= 0)


def test_zero_grid_gives_zero_samples():
    samples = occupation_fluctuations(reference_params(T=10.0), [0.0], [PHI], 5, 1)
    assert all(np.all(s.values == 0.0) for s in samples)


def test_analytic_centering_has_zero_mean():
    samples = occupation_fluctuations(reference_params(), [1.0], [PHI], 1000, 400, T=50.0)
    x = samples_matrix(samples)[:, 0]
    assert abs(x.mean()) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_centering_modes_agree():
    p = reference_params(T=50.0)
    a = samples_matrix(occupation_fluctuations(p, [1.0], [PHI], 1000, 400, centering="analytic"))[:, 0]
    e = samples_matrix(occupation_fluctuations(p, [1.0], [PHI], 1000, 400, centering="empirical"))[:, 0]
    se = math.sqrt(2.0 / (a.size - 1)) * a.var(ddof=1)
    assert abs(a.var(ddof=1) - e.var(ddof=1)) <= 3 * math.sqrt(2.0) * se


def test_window_doubling_changes_variance_little():
    p = reference_params(T=25.0)
    from occuflux.simulator import default_box_radius

    R0 = default_box_radius(p, [PHI])
    out = []
    for R, seed in ((R0, 100), (2 * R0, 200_000)):
        x = samples_matrix(occupation_fluctuations(p.with_(box_radius=R), [1.0], [PHI], 1000, seed))[:, 0]
        v = x.var(ddof=1)
        out.append((v, v * math.sqrt(2.0 / (x.size - 1))))
    (v1, s1), (v2, s2) = out
    assert abs(v1 - v2) <= math.hypot(s1, s2)


def test_replicas_are_deterministic_and_thread_independent():
    p = reference_params(T=10.0)
    tests = [PHI, GaussianBump(0.5, (1.0,), 0.7)]
    a = occupation_fluctuations(p, [0.5, 1.0], tests, 16, 42, threads=1)
    b = occupation_fluctuations(p, [0.5, 1.0], tests, 16, 42, threads=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values) and x.seed == y.seed
    assert np.array_equal(run_replica(p, tests, [0.5, 1.0], 42).values, a[0].values)


@pytest.mark.parametrize("motion", [MotionSpec.brownian(1.0), MotionSpec.alpha_stable(1.5),
                                    MotionSpec.ornstein_uhlenbeck(0.2)])
def test_particle_count_balance(motion):
    p = reference_params(T=10.0, motion=motion)
    for seed in range(5):
        ev = run_replica(p, [PHI], [1.0], seed).events
        assert ev["final"] == ev["initial"] + ev["immigrants"] + ev["branchings"] - ev["deaths"]


def test_explosion_guard():
    with pytest.raises(SimulationError, match="explosion"):
        run_replica(reference_params(T=10.0), [PHI], [1.0], 1, max_particles=10)


def test_window_mass_precondition():
    with pytest.raises(ParameterError, match="mass"):
        run_replica(reference_params(box_radius=3.0), [PHI], [1.0], 1)


def test_grid_validation():
    with pytest.raises(ParameterError):
        run_replica(reference_params(), [PHI], [0.5, 0.25], 1)
    with pytest.raises(ParameterError):
        occupation_fluctuations(reference_params(), [1.0], [PHI], 1, 0)


def test_samples_csv_layout(tmp_path):
    p = reference_params(T=4.0)
    samples = occupation_fluctuations(p, [0.5, 1.0], [PHI, PHI.scaled(2.0)], 3, 8)
    path = tmp_path / "s.csv"
    write_samples_csv(samples, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "replica,t,phi_index,value"
    assert len(lines) == 1 + 3 * 2 * 2
    assert lines[1].startswith("0,0.5,0,") and lines[-1].startswith("2,1.0,1,")
    assert float(lines[1].split(",")[3]) == samples[0].values[0, 0]
