import math

import numpy as np
import pytest

from sail_scvx.dynamics import SailParams, angles_to_u, control_defect, total_acceleration
from sail_scvx.ephemeris import BODIES, days_to_tu, elements_to_state, mjd_to_tu, propagate_state, tu_to_mjd
from sail_scvx.socp import SolverSolution, Status, solve
from sail_scvx.transcription import (
    DiscretizationGrid,
    ExtractionError,
    IterateSolution,
    ProgramLayout,
    TerminalLinearization,
    TrustRegionConfig,
    Weights,
    assemble_problem,
    control_jacobian,
    discrete_update,
    dynamics_jacobians,
    extract_iterate,
    linearize_terminal,
    stack_gamma,
    two_body_rate,
)

from _oracles import fd_jacobian, rel_err

P = SailParams(0.0843)
TWO_PI = 2.0 * math.pi


def random_gamma(rng):
    """Mars-case-like node pair: near-circular states about one node spacing apart."""
    rho = rng.uniform(0.8, 1.5)
    th = rng.uniform(0, TWO_PI)
    dt = rng.uniform(0.02, 0.1)
    r = rho * np.array([math.cos(th), math.sin(th), rng.uniform(-0.05, 0.05)])
    v = rho**-0.5 * np.array([-math.sin(th), math.cos(th), rng.uniform(-0.05, 0.05)])
    r1 = r + v * dt + 0.01 * rng.normal(size=3)
    v1 = v - r * dt / rho**3 + 0.01 * rng.normal(size=3)
    u = angles_to_u(rng.uniform(0.05, 1.5, 2), rng.uniform(0, TWO_PI, 2))
    return stack_gamma(dt, r, r1, v, v1, u[0], u[1])


def forward_trajectory(x0, u, dt, params=P):
    """States produced by the nonlinear node update itself, so the discrete dynamics hold exactly."""
    n = u.shape[0]
    r, v = np.empty((n, 3)), np.empty((n, 3))
    r[0], v[0] = x0[:3], x0[3:]
    for k in range(n - 1):
        # the update is implicit in (r_k1, v_k1); fixed-point iterate to round-off
        rk1, vk1 = r[k] + v[k] * dt, v[k].copy()
        for _ in range(60):
            rk1, vk1 = discrete_update(stack_gamma(dt, r[k], rk1, v[k], vk1, u[k], u[k + 1]), params)
        r[k + 1], v[k + 1] = rk1, vk1
    return r, v


def consistent_reference(n=10, dt=0.05, seed=0):
    rng = np.random.default_rng(seed)
    x0 = elements_to_state(BODIES["earth"], 55840.0).as_array()
    u = angles_to_u(rng.uniform(0.2, 1.2, n), rng.uniform(0, TWO_PI, n))
    r, v = forward_trajectory(x0, u, dt)
    ref = IterateSolution(DiscretizationGrid(n, dt), r, v, u, np.zeros((n, 3)))
    xf = np.concatenate([r[-1], v[-1]])
    return ref, x0, TerminalLinearization(xf, two_body_rate(xf), n - 1)


def test_discrete_update_kinematics():
    g = stack_gamma(0.3, [1, 2, 3], [0, 0, 0], [0.1, 0.2, 0.3], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    r, v = discrete_update(g, P, accel=lambda r, v, u: np.zeros(3))
    assert np.allclose(r, [1.03, 2.06, 3.09]) and np.allclose(v, [0.1, 0.2, 0.3])
    r, v = discrete_update(stack_gamma(0.0, [1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0], [1, 0, 0], [1, 0, 0]), P)
    assert np.array_equal(r, [1, 0, 0]) and np.array_equal(v, [0, 1, 0])


def test_discrete_update_constant_acceleration():
    a = np.array([0.2, -0.1, 0.05])
    g = stack_gamma(0.5, [1, 0, 0], [0, 0, 0], [0, 1, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    r, v = discrete_update(g, P, accel=lambda *_: a)
    assert np.allclose(r, np.array([1, 0, 0]) + np.array([0, 1, 0]) * 0.5 + 0.5 * a * 0.25, atol=1e-15)
    assert np.allclose(v, np.array([0, 1, 0]) + a * 0.5, atol=1e-15)


def test_dynamics_jacobians_vs_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        g = random_gamma(rng)
        f_r, f_v, A, B = dynamics_jacobians(g, P)
        # f_r, f_v are the increments r_k1 - r_k, v_k1 - v_k of the update
        fd_A = fd_jacobian(lambda z: discrete_update(z, P)[0] - z[1:4], g)
        fd_B = fd_jacobian(lambda z: discrete_update(z, P)[1] - z[7:10], g)
        assert rel_err(A, fd_A) <= 1e-5
        assert rel_err(B, fd_B) <= 1e-5
        r_next, v_next = discrete_update(g, P)
        assert np.allclose(f_r, r_next - g[1:4], rtol=0, atol=1e-15)
        assert np.allclose(f_v, v_next - g[7:10], rtol=0, atol=1e-15)


def test_dv_ddt_is_mean_acceleration():
    g = random_gamma(np.random.default_rng(12))
    _, _, _, B = dynamics_jacobians(g, P)
    ak = total_acceleration(g[1:4], g[7:10], g[13:16], P)
    ak1 = total_acceleration(g[4:7], g[10:13], g[16:19], P)
    assert np.allclose(B[:, 0], 0.5 * (ak + ak1), rtol=1e-14)


def test_dv_du_gravity_only_reference():
    g = random_gamma(np.random.default_rng(13))
    g[13:19] = 0.0
    _, _, _, B = dynamics_jacobians(g, P)
    r, v, dt = g[1:4], g[7:10], g[0]
    r_hat = r / np.linalg.norm(r)
    h = np.cross(r, v)
    h_hat = h / np.linalg.norm(h)
    triad = np.stack([r_hat, h_hat, np.cross(h_hat, r_hat)], axis=1)
    assert np.allclose(B[:, 13:16], 0.5 * dt * P.beta / (r @ r) * triad, rtol=1e-13, atol=1e-16)


def test_control_jacobian():
    assert np.array_equal(control_jacobian([0.0, 0, 0]), [0, 0, 0])
    assert np.allclose(control_jacobian([1.0, 0, 0]), [2 / 3, 0, 0])
    rng = np.random.default_rng(14)
    for _ in range(100):
        u = np.array([rng.uniform(0.01, 1), *rng.uniform(-1, 1, 2)])
        assert rel_err(control_jacobian(u), fd_jacobian(control_defect, u, h=1e-7)) <= 1e-7
    with pytest.raises(ValueError):
        control_jacobian([-0.1, 0, 0])


def test_terminal_rate_vs_finite_differences():
    rng = np.random.default_rng(15)
    for _ in range(100):
        body = BODIES[rng.choice(sorted(BODIES))]
        t = rng.uniform(0, 10)
        term = linearize_terminal(body, t, 55840.0, 100)
        fd = fd_jacobian(lambda z: elements_to_state(body, tu_to_mjd(z[0], 55840.0)).as_array(), [t])[:, 0]
        assert rel_err(term.g_ref, fd) <= 1e-5
        assert np.array_equal(term.g_ref[:3], term.x_ter_ref[3:])


def test_terminal_examples():
    assert np.allclose(two_body_rate([1, 0, 0, 0, 1, 0]), [0, 1, 0, -1, 0, 0])
    term = linearize_terminal(BODIES["venus"], 5.0, 58782.0, 100)
    assert np.array_equal(term.predict(0.0), term.x_ter_ref)
    exact = elements_to_state(BODIES["venus"], tu_to_mjd(5.0, 58782.0), 58782.0)

    def err(days):
        dtf = days_to_tu(days)
        return np.linalg.norm(term.predict(dtf / 99) - propagate_state(exact, dtf).as_array())

    ratio = err(1.0) / err(0.5)
    assert 3.8 < ratio < 4.2


def test_linearization_second_order():
    rng = np.random.default_rng(16)
    g = random_gamma(rng)
    f_r, f_v, A, B = dynamics_jacobians(g, P)
    d = rng.normal(size=19)
    d /= np.linalg.norm(d)

    def miss(eps):
        z = g + eps * d
        r, v = discrete_update(z, P)
        lin_r = z[1:4] + f_r + A @ (eps * d)
        lin_v = z[7:10] + f_v + B @ (eps * d)
        return np.linalg.norm(np.concatenate([r - lin_r, v - lin_v]))

    assert miss(0.0) <= 1e-15
    ratio = miss(1e-3) / miss(5e-4)
    assert 3.8 < ratio < 4.2


def test_layout_counts():
    for n in (2, 10, 100):
        L = ProgramLayout(n)
        assert L.size == 1 + 9 * n + 3 * n + n + 2
        idx = np.concatenate([[L.d_dt], L.r.ravel(), L.v.ravel(), L.u.ravel(), L.a_v.ravel(), L.s, [L.eta_u, L.eta_dt]])
        assert np.array_equal(np.sort(idx), np.arange(L.size))


def test_consistent_reference_satisfies_program():
    ref, x0, term = consistent_reference()
    prob = assemble_problem(ref, x0, term, P, Weights(), (0.05, 10.0))
    L = prob.layout
    n = ref.n_nodes
    x = L.pack(0.0, ref.r, ref.v, ref.u, np.zeros((n, 3)), np.zeros(n), 0.0, 0.0)
    prog = prob.program
    assert np.max(np.abs(prog.A @ x - prog.b)) <= 1e-9
    slack = prog.h - prog.G @ x
    assert slack[: prog.nonneg].min() >= -1e-12


def test_consistent_reference_is_kept():
    ref, x0, term = consistent_reference()
    prob = assemble_problem(ref, x0, term, P, Weights(), (1e-9, 1e-9))
    sol = solve(prob.program)
    assert sol.optimal
    new = extract_iterate(sol, prob)
    assert abs(new.grid.dt - ref.grid.dt) <= 1e-8
    assert np.max(np.linalg.norm(new.a_v, axis=1)) <= 1e-8
    # linearised manifold rows hold to solver tolerance
    C = control_jacobian(ref.u)
    resid = control_defect(ref.u) + np.einsum("kj,kj->k", C, new.u - ref.u)
    assert np.max(np.abs(resid)) <= 1e-7


def test_extract_roundtrip():
    ref, x0, term = consistent_reference(n=5)
    prob = assemble_problem(ref, x0, term, P, Weights(), (0.05, 10.0))
    L = prob.layout
    rng = np.random.default_rng(17)
    parts = dict(r=rng.normal(size=(5, 3)), v=rng.normal(size=(5, 3)), u=rng.normal(size=(5, 3)),
                 a_v=rng.normal(size=(5, 3)), s=rng.normal(size=5))
    x = L.pack(0.01, parts["r"], parts["v"], parts["u"], parts["a_v"], parts["s"], 0.3, 0.4)
    fake = SolverSolution(x, np.zeros(0), np.zeros(0), np.zeros(0), Status.OPTIMAL, 1, 0.0)
    it = extract_iterate(fake, prob)
    for k in ("r", "v", "u", "a_v"):
        assert np.array_equal(getattr(it, k), parts[k])
    assert it.grid.dt == ref.grid.dt + 0.01 and it.eta_u == 0.3 and it.eta_dt == 0.4
    bad = SolverSolution(x, np.zeros(0), np.zeros(0), np.zeros(0), Status.MAX_ITERATIONS, 1, 0.0)
    with pytest.raises(ExtractionError):
        extract_iterate(bad, prob)


def test_dt_update_example():
    ref, x0, term = consistent_reference(n=3, dt=0.1)
    prob = assemble_problem(ref, x0, term, P, Weights(), (0.05, 10.0))
    x = prob.layout.pack(0.01, ref.r, ref.v, ref.u, np.zeros((3, 3)), np.zeros(3), 0, 0)
    it = extract_iterate(SolverSolution(x, np.zeros(0), np.zeros(0), np.zeros(0), Status.OPTIMAL, 1, 0.0), prob)
    assert it.grid.dt == pytest.approx(0.11, abs=1e-16)


def test_assemble_rejects_bad_reference():
    ref, x0, term = consistent_reference(n=4)
    ref.u = ref.u[:3]
    with pytest.raises(ValueError):
        assemble_problem(ref, x0, term, P, Weights(), (0.05, 10.0))


def test_trust_config():
    tr = TrustRegionConfig(policy="schedule")
    assert tr.caps(1) == (0.5, 10.0) and tr.caps(3) == (0.5, 10.0)
    assert tr.caps(4) == pytest.approx((0.45, 9.0))
    assert tr.caps(10_000) == pytest.approx((0.005, 0.1))
    with pytest.raises(ValueError):
        TrustRegionConfig(shrink_factor=0.0)
    with pytest.raises(ValueError):
        TrustRegionConfig(policy="bogus")
    with pytest.raises(ValueError):
        DiscretizationGrid(1, 0.1)


def test_mjd_offsets_consistent():
    assert mjd_to_tu(tu_to_mjd(3.7, 55840.0), 55840.0) == pytest.approx(3.7, rel=1e-14)
