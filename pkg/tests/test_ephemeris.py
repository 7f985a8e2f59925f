import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

from sail_scvx.ephemeris import (
    BODIES,
    UNITS,
    KeplerError,
    OrbitalElements,
    StateVector,
    characteristic_acceleration,
    convert,
    days_to_tu,
    elements_to_state,
    propagate_state,
    solve_kepler,
    specific_energy,
    state_to_elements,
    tu_to_days,
)

TWO_PI = 2.0 * math.pi


def oracle_state(el: OrbitalElements, t_mjd: float):
    """Elements -> Cartesian via true anomaly, the conic equation and a scipy rotation."""
    m = math.fmod(el.m0 + el.a**-1.5 * (t_mjd - el.epoch) * TWO_PI / 365.25, TWO_PI)
    m %= TWO_PI
    ecc = brentq(lambda x: x - el.e * math.sin(x) - m, 0.0, TWO_PI, xtol=1e-15, rtol=1e-15)
    nu = 2.0 * math.atan2(math.sqrt(1 + el.e) * math.sin(ecc / 2), math.sqrt(1 - el.e) * math.cos(ecc / 2))
    p = el.a * (1 - el.e**2)
    rho = p / (1 + el.e * math.cos(nu))
    r_pf = rho * np.array([math.cos(nu), math.sin(nu), 0.0])
    v_pf = math.sqrt(1.0 / p) * np.array([-math.sin(nu), el.e + math.cos(nu), 0.0])
    rot = Rotation.from_euler("ZXZ", [el.raan, el.i, el.argp]).as_matrix()
    return rot @ r_pf, rot @ v_pf


def two_body_oracle(x0, dt):
    def rhs(_, y):
        return np.concatenate([y[3:], -y[:3] / np.linalg.norm(y[:3]) ** 3])

    sol = solve_ivp(rhs, (0.0, dt), x0, method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:, -1]


def bisect_kepler(m, e):
    lo, hi = 0.0, TWO_PI
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid - e * math.sin(mid) - m > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_units():
    assert UNITS.mu_sun == 1.0
    assert UNITS.time_unit == pytest.approx(365.25 * 86400 / TWO_PI, rel=1e-15)
    assert days_to_tu(0.0) == 0.0
    assert days_to_tu(365.25) == pytest.approx(TWO_PI, rel=1e-14)


def test_characteristic_acceleration():
    # beta 0.0843 corresponds to about 0.5 mm/s^2 at 1 AU
    assert characteristic_acceleration(0.0843) == pytest.approx(0.5, rel=5e-3)


@pytest.mark.parametrize("kind,value", [("days->tu", 123.4), ("mm/s2->canonical", 0.5), ("mjd->tu", 58782.0)])
def test_conversion_roundtrip(kind, value):
    a, b = kind.split("->")
    back = convert(convert(value, kind, ref_mjd=55840.0), f"{b}->{a}", ref_mjd=55840.0)
    assert back == pytest.approx(value, rel=1e-14)


def test_unknown_conversion_rejected():
    with pytest.raises(ValueError):
        convert(1.0, "furlongs_to_tu")


def test_kepler_examples():
    assert solve_kepler(0.0, 0.5) == 0.0
    assert solve_kepler(math.pi, 0.3) == pytest.approx(math.pi, abs=1e-15)
    # Mars row inputs against a 200-step bisection
    assert abs(solve_kepler(1.0011, 0.0935) - bisect_kepler(1.0011, 0.0935)) <= 1e-12


def test_kepler_residual_random():
    rng = np.random.default_rng(7)
    worst = 0.0
    for m, e in zip(rng.uniform(-20, 20, 10_000), rng.uniform(0, 0.95, 10_000)):
        ecc = solve_kepler(m, e)
        assert 0.0 <= ecc < TWO_PI
        worst = max(worst, abs(ecc - e * math.sin(ecc) - math.fmod(m, TWO_PI) % TWO_PI))
    assert worst <= 1e-13


@pytest.mark.parametrize("e", [1.0, 1.5, -0.1, float("nan")])
def test_kepler_rejects(e):
    with pytest.raises(KeplerError):
        solve_kepler(1.0, e)


def test_element_validation():
    with pytest.raises(ValueError):
        OrbitalElements(-1.0, 0.1, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        OrbitalElements(1.0, 1.0, 0, 0, 0, 0, 0)
    assert OrbitalElements(1.0, 0.1, 0.2, -1.0, 7.0, 13.0, 0).raan == pytest.approx(TWO_PI - 1.0)


def test_circular_canonical_state():
    st_ = elements_to_state(OrbitalElements(1, 0, 0, 0, 0, 0, 0), 0.0)
    assert np.allclose(st_.r, [1, 0, 0], atol=1e-15) and np.allclose(st_.v, [0, 1, 0], atol=1e-15)


@pytest.mark.parametrize("body,t_mjd", [("earth", 57800.0), ("earth", 55840.0), ("mars", 56417.0),
                                        ("venus", 58782.0), ("apophis", 56258.0)])
def test_body_state_matches_oracle(body, t_mjd):
    el = BODIES[body]
    st_ = elements_to_state(el, t_mjd)
    r, v = oracle_state(el, t_mjd)
    assert np.max(np.abs(st_.r - r)) <= 1e-10
    assert np.max(np.abs(st_.v - v)) <= 1e-10


@pytest.mark.parametrize("body", sorted(BODIES))
def test_vis_viva_and_angular_momentum(body):
    el = BODIES[body]
    st_ = elements_to_state(el, 56000.0)
    rho = np.linalg.norm(st_.r)
    assert abs(st_.v @ st_.v - (2 / rho - 1 / el.a)) <= 1e-11
    assert abs(np.linalg.norm(np.cross(st_.r, st_.v)) - math.sqrt(el.a * (1 - el.e**2))) <= 1e-11


def test_propagate_identity_and_period():
    x = StateVector([1, 0, 0], [0, 1, 0])
    same = propagate_state(x, 0.0)
    assert np.array_equal(same.r, x.r) and np.array_equal(same.v, x.v)
    back = propagate_state(x, TWO_PI)
    assert np.allclose(back.as_array(), x.as_array(), atol=1e-12)


def test_propagate_matches_integrator():
    x0 = elements_to_state(BODIES["earth"], 55840.0)
    dt = days_to_tu(100.0)
    got = propagate_state(x0, dt).as_array()
    assert np.max(np.abs(got - two_body_oracle(x0.as_array(), dt))) <= 1e-10


def test_propagate_rejects_unbound():
    with pytest.raises(KeplerError):
        propagate_state(StateVector([1, 0, 0], [0, 1.5, 0]), 1.0)


def test_energy_drift_ten_orbits():
    x = elements_to_state(BODIES["apophis"], 56258.0)
    e0 = specific_energy(x.r, x.v)
    h0 = np.cross(x.r, x.v)
    period = TWO_PI * BODIES["apophis"].a ** 1.5
    for _ in range(100):
        x = propagate_state(x, period / 10 + 0.0123)
    assert abs(specific_energy(x.r, x.v) - e0) <= 1e-12 * abs(e0)
    assert np.max(np.abs(np.cross(x.r, x.v) - h0)) <= 1e-12 * np.linalg.norm(h0)


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(0.5, 3.0), e=st.floats(0.01, 0.9), i=st.floats(0.01, 3.1),
    raan=st.floats(0, TWO_PI), argp=st.floats(0, TWO_PI), m=st.floats(0, TWO_PI), dt=st.floats(-30.0, 30.0),
)
def test_elements_roundtrip_after_propagation(a, e, i, raan, argp, m, dt):
    el = OrbitalElements(a, e, i, raan, argp, m, 0.0)
    x = propagate_state(elements_to_state(el, 0.0), dt)
    back = state_to_elements(x, tu_to_days(dt))
    assert back.a == pytest.approx(a, rel=1e-10)
    assert back.e == pytest.approx(e, abs=1e-10)
    assert back.i == pytest.approx(i, abs=1e-10)
    m_new = el.m0 + a**-1.5 * dt
    for got, want in ((back.raan, el.raan), (back.argp, el.argp), (back.m0, m_new)):
        d = (got - want + math.pi) % TWO_PI - math.pi
        assert abs(d) <= 1e-9
