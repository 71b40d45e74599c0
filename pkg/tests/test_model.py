import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from occuflux import (GaussianBump, MotionSpec, ParameterError, PiecewiseLinear, SpaceTimeTest, SystemParams,
                      eval_phi, fourier_phi, params_from_json, reference_params, validate_params)


def base(**kw):
    raw = {"V": 1.0, "q": 0.25, "H": 0.5, "L": 1.0, "motion": {"kind": "brownian", "sigma": 1.0}}
    raw.update(kw)
    return raw


def test_q_quarter_gives_half_death_rate():
    assert validate_params(base()).Q == 0.5


def test_pure_death_case():
    p = validate_params(base(V=2.0, q=0.0))
    assert p.Q == 2.0


def test_critical_branching_rejected():
    with pytest.raises(ParameterError, match="subcriticality violated"):
        validate_params(base(q=0.5))
    with pytest.raises(ParameterError, match="q must be < 1/2"):
        validate_params(base(q=0.7))


def test_norming_and_step_invariants():
    p = validate_params(base(T=9.0))
    assert p.F_T ** 2 == 9.0
    with pytest.raises(ParameterError, match="dt"):
        validate_params(base(dt=1.0))
    with pytest.raises(ParameterError, match="unknown"):
        validate_params(base(colour="red"))
    with pytest.raises(ParameterError, match="inconsistent"):
        validate_params(base(Q=0.7))


def test_validation_is_idempotent_and_json_round_trips():
    p = validate_params(base(T=4.0, box_radius=30.0, dt=0.01, seed=7))
    assert validate_params(p) == p
    assert params_from_json(p.to_json()) == p


@settings(max_examples=50, deadline=None)
@given(V=st.floats(0.01, 100), q=st.floats(0, 0.4999))
def test_accepted_params_are_subcritical(V, q):
    p = validate_params(base(V=V, q=q))
    assert p.Q > 0
    assert p.Q == V * (1.0 - 2.0 * q)


def test_eval_phi_examples():
    assert eval_phi(GaussianBump(), 0.0) == 1.0
    assert eval_phi(GaussianBump(), 1e3) == 0.0
    assert eval_phi(GaussianBump(2.0, (1.0,), 0.5), 1.0) == 2.0


def test_fourier_at_zero_and_one():
    phi = GaussianBump()
    assert fourier_phi(phi, 0.0) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-15)
    assert fourier_phi(phi, 1.0) == pytest.approx(math.sqrt(2 * math.pi) * math.exp(-0.5), rel=1e-10)


def test_fourier_conjugate_symmetry():
    phi = GaussianBump(1.3, (0.7,), 0.8)
    for z in (0.3, 1.0, 2.5):
        assert fourier_phi(phi, -z) == pytest.approx(np.conj(fourier_phi(phi, z)), rel=1e-14)


@pytest.mark.parametrize("phi", [GaussianBump(), GaussianBump(2.0, (1.0,), 0.5), GaussianBump(0.3, (-2.0,), 1.7)])
@pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0])
def test_fourier_matches_quadrature(phi, z):
    # the closed form carries exp(-i z mu): it is the transform with kernel exp(-i z x)
    re = integrate.quad(lambda x: phi(x) * math.cos(z * x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    im = integrate.quad(lambda x: -phi(x) * math.sin(z * x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    got = fourier_phi(phi, z)
    assert abs(got - complex(re, im)) <= 1e-8 * abs(phi.integral())


@pytest.mark.parametrize("phi", [GaussianBump(), GaussianBump(2.0, (1.0,), 0.5), GaussianBump(0.3, (-2.0,), 1.7)])
def test_integral_closed_form(phi):
    val = integrate.quad(phi, -np.inf, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert val == pytest.approx(phi.integral(), rel=1e-8)


def test_integral_closed_form_2d():
    phi = GaussianBump(1.5, (0.3, -0.2), 0.7)
    val = integrate.dblquad(lambda y, x: phi(np.array([x, y])), -10, 10, -10, 10, epsabs=0, epsrel=1e-11)[0]
    assert val == pytest.approx(phi.integral(), rel=1e-8)


def test_bump_validation():
    with pytest.raises(ParameterError):
        GaussianBump(width=0.0)
    with pytest.raises(ParameterError):
        GaussianBump(amplitude=-1.0)


def test_chi_profiles():
    ramp = PiecewiseLinear.ramp()
    assert ramp(0.0) == 1.0 and ramp(1.0) == 0.0 and ramp(0.25) == 0.75
    plat = PiecewiseLinear.plateau(0.5, 0.75, 2.0)
    assert plat(0.3) == 2.0 and plat(0.625) == pytest.approx(1.0) and plat(0.9) == 0.0
    s = np.linspace(0, 1, 101)
    assert np.all(np.diff(plat(s)) <= 0) and np.all(plat(s) >= 0)
    with pytest.raises(ParameterError, match="vanish"):
        PiecewiseLinear((0.0, 1.0), (1.0, 0.5))
    with pytest.raises(ParameterError, match="nonincreasing"):
        PiecewiseLinear((0.0, 0.5, 1.0), (0.5, 1.0, 0.0))


def test_space_time_scaling():
    psi = SpaceTimeTest(GaussianBump(), PiecewiseLinear.ramp())
    scaled = psi.scaled(4.0)
    assert scaled(0.0, 2.0) == pytest.approx(0.5 * 0.5)
    assert list(scaled.time_knots()) == [0.0, 4.0]
    assert psi.times(0.0).is_zero


def test_reference_configuration():
    p = reference_params()
    assert (p.V, p.q, p.H, p.L, p.Q, p.d) == (1.0, 0.25, 0.5, 1.0, 0.5, 1)
    assert p.L == p.stationary_density
    assert p.motion == MotionSpec.brownian(1.0)
    assert isinstance(p, SystemParams)
