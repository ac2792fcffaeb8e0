import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from nml import oscillator as O
from nml.oscillator import ForcingSeries, OscillatorParams, Regime

GRID = [OscillatorParams(g, w) for g in (0.1, 1.0, 3.0) for w in (0.5, 1.0, 2.0)]


def oracle(p, x0, f, t_eval):
    sol = solve_ivp(
        lambda t, y: [y[1], f(t) - 2 * p.gamma * y[1] - p.omega**2 * y[0]],
        (0, t_eval[-1]),
        [x0, 0.0],
        t_eval=t_eval,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    return sol.y[0]


def test_regimes():
    assert OscillatorParams(2, 1).regime is Regime.OVERDAMPED
    assert OscillatorParams(1, 1).regime is Regime.CRITICAL
    assert OscillatorParams(0.5, 1).regime is Regime.UNDERDAMPED
    assert OscillatorParams(1, np.sqrt(1 - 1e-12)).regime is Regime.CRITICAL
    with pytest.raises(ValueError):
        OscillatorParams(-1, 1)


def test_homogeneous_examples():
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(O.homogeneous(OscillatorParams(0.7, 0.7), 1.0, t), np.exp(-0.7 * t) * (1 + 0.7 * t), rtol=1e-14)
    assert O.homogeneous(OscillatorParams(0.0, 1.0), 1.0, np.pi) == pytest.approx(-1.0, abs=1e-14)
    np.testing.assert_allclose(O.homogeneous(OscillatorParams(2.5, 0.0), 3.0, t), 3.0, rtol=1e-14)


def test_green_examples():
    assert O.green(OscillatorParams(1, 2), 0.0) == 0.0
    t = np.linspace(0, 6, 13)
    np.testing.assert_allclose(O.green(OscillatorParams(0, 1), t), np.sin(t), atol=1e-15)
    assert O.green(OscillatorParams(1, 2), -1.0) == 0.0


@pytest.mark.parametrize("d", [1e-12, -1e-12, 1e-10, -1e-10])
def test_regime_boundary_continuity(d):
    crit = OscillatorParams(1.0, 1.0)
    near = OscillatorParams(1.0, np.sqrt(1.0 - d))
    assert abs(O.green(near, 1.0) - O.green(crit, 1.0)) <= 1e-9
    assert abs(O.homogeneous(near, 1.0, 1.0) - O.homogeneous(crit, 1.0, 1.0)) <= 1e-9


def test_no_overflow_when_heavily_overdamped():
    p = OscillatorParams(50.0, 1.0)
    x = O.homogeneous(p, 1.0, np.array([0.0, 10.0, 1e4]))
    assert np.all(np.isfinite(x)) and x[0] == 1.0
    assert x[1] == pytest.approx(np.exp(-10 / 100) * (1 + 1 / 100**2 * 0), rel=1e-3)


@pytest.mark.parametrize("p", GRID, ids=str)
def test_ode_residual_and_initial_conditions(p):
    k = 1e-4
    t = np.linspace(0.5, 8, 16)
    x = lambda s: np.asarray(O.homogeneous(p, 1.3, s))
    xpp = (x(t + k) - 2 * x(t) + x(t - k)) / k**2
    xp = (x(t + k) - x(t - k)) / (2 * k)
    residual = xpp + 2 * p.gamma * xp + p.omega**2 * x(t)
    assert np.max(np.abs(residual)) <= 1e-6 * (p.gamma**2 + p.omega**2) * 1.3
    assert x(0.0) == 1.3
    slope0 = (-3 * x(0.0) + 4 * x(k) - x(2 * k)) / (2 * k)
    assert abs(slope0) <= 1e-6 * 1.3 * max(1, p.omega**2)


@pytest.mark.parametrize("p", GRID, ids=str)
def test_homogeneous_matches_integrator(p):
    t = np.linspace(0, 10, 201)
    ref = oracle(p, 1.0, lambda s: 0.0, t)
    assert np.max(np.abs(O.homogeneous(p, 1.0, t) - ref)) <= 1e-5 * np.max(np.abs(ref))


@pytest.mark.parametrize("p", GRID, ids=str)
def test_constant_forcing_matches_integrator(p):
    dt = 1e-3
    f = ForcingSeries(np.full(10001, 0.7), dt)
    t = np.arange(0, 10001, 50) * dt
    ref = oracle(p, 0.4, lambda s: 0.7, t)
    assert np.max(np.abs(O.driven(p, 0.4, f, t) - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_zero_forcing_equals_homogeneous():
    p = OscillatorParams(0.3, 1.1)
    t = np.linspace(0, 4, 41)
    f = ForcingSeries(np.zeros(401), 0.01)
    np.testing.assert_array_equal(O.driven(p, 2.0, f, t), O.homogeneous(p, 2.0, t))


def test_impulse_response():
    p = OscillatorParams(0.3, 1.1)
    dt, i0 = 0.01, 100
    v = np.zeros(801)
    v[i0] = 5.0
    t = np.arange(0, 801) * dt
    expected = O.homogeneous(p, 1.0, t) + dt * 5.0 * O.green(p, t - i0 * dt)
    np.testing.assert_allclose(O.driven(p, 1.0, ForcingSeries(v, dt), t), expected, atol=1e-15)


def test_off_grid_times_agree_with_grid():
    p = OscillatorParams(0.4, 1.0)
    f = ForcingSeries(np.cos(np.arange(2001) * 0.005), 0.005)
    on = O.driven(p, 1.0, f, np.array([3.0]))
    off = O.driven(p, 1.0, f, np.array([3.0 + 1e-4]))
    assert abs(on[0] - off[0]) < 1e-3


def test_driven_quadrature_is_second_order():
    p = OscillatorParams(0.3, 1.2)
    errs = []
    for dt in (0.02, 0.01):
        n = int(round(5 / dt))
        f = ForcingSeries(np.sin(np.arange(n + 1) * dt), dt)
        ref = oracle(p, 1.0, np.sin, np.array([0.0, 5.0]))[-1]
        errs.append(abs(O.driven(p, 1.0, f, 5.0) - ref))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_first_order_examples():
    assert O.first_order(0.5, 2.0, None, 2.0) == pytest.approx(2 * np.exp(-1), rel=1e-15)
    assert O.first_order(0.5, 2.0, None, 0.0) == 2.0
    lam, c, dt = 0.5, 3.0, 0.002
    f = ForcingSeries(np.full(int(round(40 / dt)) + 1, c), dt)
    assert O.first_order(lam, 0.0, f, 20 / lam) == pytest.approx(c / lam, rel=1e-6)


def test_first_order_riemann_matches_recurrence():
    rng = np.random.default_rng(0)
    v = rng.uniform(size=50)
    lam, dt = 0.3, 0.1
    acc, r = 0.0, np.exp(-lam * dt)
    for x in v:
        acc = r * acc + dt * x
    got = O.first_order(lam, 0.0, ForcingSeries(np.append(v, 0.0), dt), 50 * dt, rule="riemann")
    assert got == pytest.approx(acc, rel=1e-13)


def test_support_errors():
    f = ForcingSeries(np.ones(11), 0.1)
    with pytest.raises(O.SupportError):
        O.first_order(1.0, 1.0, f, 1.5)
    with pytest.raises(O.SupportError):
        O.driven(OscillatorParams(1, 1), 1.0, f, 2.0)
    with pytest.raises(ValueError):
        O.first_order(1.0, 1.0, None, -1.0)
    with pytest.raises(ValueError):
        ForcingSeries(np.array([1.0, np.nan]), 0.1)
    with pytest.raises(ValueError):
        ForcingSeries(np.ones(3), 0.0)


def test_first_zero_and_half_period():
    p = OscillatorParams(0.2, 1.0)
    t0 = p.first_zero()
    assert abs(O.homogeneous(p, 1.0, t0)) < 1e-14
    assert np.all(np.asarray(O.homogeneous(p, 1.0, np.linspace(0, t0 * 0.999, 50))) > 0)
    with pytest.raises(ValueError):
        OscillatorParams(2, 1).half_period()


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 20.0))
def test_homogeneous_is_bounded_by_initial_value(g, w, t):
    # energy never grows, so |x| <= |x0| whenever x'(0) = 0
    x = O.homogeneous(OscillatorParams(g, w), 1.0, t)
    assert abs(x) <= 1.0 + 1e-9
