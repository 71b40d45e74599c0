import math

import numpy as np
import pytest
from scipy import integrate

from occuflux import GaussianBump, MotionSpec, ParameterError, PiecewiseLinear, SpaceTimeTest, reference_params
from occuflux.motion import semigroup_apply
from occuflux.veqn import (ConsistencyError, ConvergenceError, GridResolutionError, defect_u, laplace_K,
                           solve_v, v_tilde, write_vgrid_csv)

P = reference_params()
PSI = SpaceTimeTest(GaussianBump(), PiecewiseLinear.ramp(), time_scale=4.0)


def test_zero_source_gives_zero_solution():
    g = solve_v(P, PSI.times(0.0), 0.0, 1.0, refine_check=False)
    assert np.all(g.v == 0.0) and np.all(g.v_tilde == 0.0)
    rep = defect_u(P, PSI.times(0.0), g)
    assert np.all(rep.u_direct == 0.0)


@pytest.mark.parametrize("motion", [MotionSpec.brownian(1.0), MotionSpec.ornstein_uhlenbeck(0.3)])
def test_grid_invariants(motion):
    p = reference_params(motion=motion)
    g = solve_v(p, PSI, 0.5, 2.0)
    rep = defect_u(p, PSI, g)
    scale = 8 * np.finfo(float).eps * g.v_tilde.max()
    assert np.all(g.v >= 0.0)
    assert np.all(g.v <= g.v_tilde + scale)
    assert np.all(rep.u_direct >= 0.0)
    assert np.all(g.v[0] == 0.0)
    assert rep.discrepancy <= 1e-6
    assert g.refinement_change < 1e-4
    # Picard from zero: eventually monotone residuals
    r = np.array(g.residuals)
    assert np.all(np.diff(r[2:]) < 0)


def test_defect_scales_like_inverse_horizon():
    base = SpaceTimeTest(GaussianBump(), PiecewiseLinear.ramp())
    consts = []
    for T in (25.0, 50.0, 100.0):
        psi_T = base.scaled(T)
        g = solve_v(P.with_(T=T), psi_T, 0.0, T, dtau=0.05, dx=0.1, refine_check=False)
        consts.append(defect_u(P.with_(T=T), psi_T, g).constant)
        assert g.v_tilde.max() * math.sqrt(T) < 10.0
    assert max(consts) / min(consts) < 2.0


def test_v_tilde_zero_and_linear():
    assert v_tilde(P, PSI.times(0.0), 0.3, 0.0, 1.0) == 0.0
    one = v_tilde(P, PSI, 0.3, 0.2, 1.5)
    two = v_tilde(P, PSI.times(2.0), 0.3, 0.2, 1.5)
    assert two == pytest.approx(2.0 * one, rel=1e-15)


def test_v_tilde_tends_to_potential():
    t = 80.0
    flat = SpaceTimeTest(GaussianBump(), PiecewiseLinear.plateau(0.5, 1.0), time_scale=2.0 * t)
    for x in (0.0, 1.5):
        pot = integrate.quad(lambda s: math.exp(-P.Q * s) * semigroup_apply(P.motion, s, GaussianBump(), x),
                             0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
        assert v_tilde(P, flat, x, 0.0, t) == pytest.approx(pot, abs=1e-6)


def test_v_tilde_agrees_with_grid():
    g = solve_v(P, PSI, 0.0, 1.0)
    for x in (0.0, 1.0):
        assert g.at([x], which="v_tilde")[0] == pytest.approx(v_tilde(P, PSI, x, 0.0, 1.0), abs=1e-5)


def test_derivative_at_zero_is_linearization():
    eps = 1e-4
    up = solve_v(P, PSI.times(eps), 0.0, 1.0, refine_check=False, check_sign=False)
    down = solve_v(P, PSI.times(-eps), 0.0, 1.0, refine_check=False, check_sign=False)
    lin = solve_v(P, PSI, 0.0, 1.0, refine_check=False)
    deriv = (up.v - down.v) / (2 * eps)
    assert np.max(np.abs(deriv - lin.v_tilde)) <= 1e-5


def test_refinement_guard():
    with pytest.raises(GridResolutionError):
        solve_v(P, SpaceTimeTest(GaussianBump(width=0.3)), 0.0, 1.0, dtau=0.25, dx=0.3)


def test_iteration_cap():
    with pytest.raises(ConvergenceError) as info:
        solve_v(P, PSI, 0.0, 1.0, max_iter=2, refine_check=False)
    assert len(info.value.residuals) == 2


def test_consistency_check_detects_tampering():
    g = solve_v(P, PSI, 0.0, 1.0, refine_check=False)
    g.v = g.v * (1 + 1e-3)
    with pytest.raises(ConsistencyError):
        defect_u(P, PSI, g)


def test_input_guards():
    with pytest.raises(ParameterError):
        solve_v(P, PSI.times(-1.0), 0.0, 1.0)
    with pytest.raises(ParameterError):
        solve_v(reference_params(d=2, motion=MotionSpec.brownian(1.0, d=2)),
                SpaceTimeTest(GaussianBump(1.0, (0.0, 0.0))), 0.0, 1.0)
    with pytest.raises(ParameterError):
        v_tilde(reference_params(motion=MotionSpec.alpha_stable(1.5)), PSI, 0.0, 0.0, 1.0)


def test_laplace_trivial_cases():
    phi = SpaceTimeTest(GaussianBump())
    assert laplace_K(P, phi.times(0.0), 10.0).K == 1.0
    assert laplace_K(reference_params(H=0.0, L=0.0), phi, 10.0).K == 1.0


def test_laplace_centred_functional_is_consistent():
    res = laplace_K(P, SpaceTimeTest(GaussianBump(0.5), PiecewiseLinear.ramp()), 4.0)
    assert 0.0 < res.K < 1.0
    assert res.log_L >= 0.0


def test_vgrid_csv(tmp_path):
    g = solve_v(P, PSI, 0.0, 0.1, refine_check=False)
    defect_u(P, PSI, g)
    path = tmp_path / "v.csv"
    write_vgrid_csv(g, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,tau,v,v_tilde,u"
    assert len(lines) == 1 + g.v.size
