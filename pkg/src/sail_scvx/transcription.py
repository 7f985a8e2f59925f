"""Free-final-time transcription and its convex (SOCP) sub-problem.

Each node pair k, k+1 is described by the 19-component vector

    gamma = [dt, r_k(3), r_k1(3), v_k(3), v_k1(3), u_k(3), u_k1(3)]

and advanced with the first-order-hold update

    r_k1 = r_k + v_k dt + (c_cur a_k + c_next a_k1) dt^2
    v_k1 = v_k + (a_k + a_k1) dt / 2

with (c_cur, c_next) = (1/3, 1/6) by default, the exact double integral of a
linearly varying acceleration.  The sub-problem decision vector is laid out by
``ProgramLayout``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import SailParams, acceleration_partials, control_defect, total_acceleration
from .ephemeris import OrbitalElements, StateVector, days_to_tu, elements_to_state, tu_to_days, tu_to_mjd
from .socp import ConicProgram, SolverSolution

GAMMA_SIZE = 19
# column slices of gamma
DT = 0
R_K, R_K1 = slice(1, 4), slice(4, 7)
V_K, V_K1 = slice(7, 10), slice(10, 13)
U_K, U_K1 = slice(13, 16), slice(16, 19)

# multiplier mapping a node-spacing change onto the quantity the time trust radius bounds
TIME_TRUST_SCALE = {"spacing": lambda n: 1.0, "final": lambda n: n - 1.0}
SCHEMES = {"foh": (1.0 / 3.0, 1.0 / 6.0), "trapezoid": (0.25, 0.25)}


@dataclass(frozen=True)
class DiscretizationGrid:
    n_nodes: int
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("need at least two nodes")
        if not self.dt > 0.0:
            raise ValueError(f"node spacing must be positive, got {self.dt}")

    @property
    def k_f(self) -> int:
        return self.n_nodes - 1

    @property
    def t_f(self) -> float:
        return self.t0 + self.k_f * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_nodes)


@dataclass
class IterateSolution:
    """One SCP iterate (iteration 0 is the initial reference)."""

    grid: DiscretizationGrid
    r: np.ndarray  # (N, 3)
    v: np.ndarray  # (N, 3)
    u: np.ndarray  # (N, 3)
    a_v: np.ndarray  # (N, 3)
    eta_u: float = float("nan")
    eta_dt: float = float("nan")
    objective: float = float("nan")
    status: str = "Reference"
    solver_iterations: int = 0

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    @property
    def tof(self) -> float:
        return self.grid.t_f - self.grid.t0

    def states(self) -> list[StateVector]:
        return [StateVector(self.r[k], self.v[k], t) for k, t in enumerate(self.grid.times)]


TRUST_POLICIES = ("adaptive", "schedule")


@dataclass(frozen=True)
class TrustRegionConfig:
    """Trust-region caps and how they evolve.

    ``eta_dt_max_days`` bounds the change of the final time per iteration and
    ``eta_u_max`` the per-node control step.

    ``policy="schedule"``: both caps shrink by ``shrink_factor`` per iteration
    once past ``shrink_after``, never below ``floor_fraction`` of the initial cap.

    ``policy="adaptive"``: the control cap starts at ``eta_u_start`` and is
    left alone until the first iterate whose virtual control is below
    ``feasible_av``.  From then on it is multiplied by ``reject_factor`` when
    the time of flight gets worse and by ``grow_factor`` (up to
    ``eta_u_start``) when it improves; steps that lose feasibility leave it
    unchanged.  The time cap stays at ``eta_dt_max_days``.
    """

    eta_u_max: float = 0.5
    eta_dt_max_days: float = 10.0
    policy: str = "adaptive"
    shrink_factor: float = 0.9
    shrink_after: int = 3
    floor_fraction: float = 0.01
    eta_u_start: float = 0.05
    reject_factor: float = 0.5
    grow_factor: float = 2.0
    feasible_av: float = 1e-6

    def __post_init__(self):
        if not (self.eta_u_max > 0 and self.eta_dt_max_days > 0 and self.eta_u_start > 0):
            raise ValueError("trust-region caps must be positive")
        if self.eta_u_start > self.eta_u_max:
            raise ValueError("eta_u_start cannot exceed eta_u_max")
        if not 0.0 < self.shrink_factor <= 1.0 or not 0.0 < self.reject_factor < 1.0:
            raise ValueError("shrink factors must lie in (0, 1]")
        if self.grow_factor < 1.0:
            raise ValueError("grow factor must be >= 1")
        if self.policy not in TRUST_POLICIES:
            raise ValueError(f"unknown trust policy {self.policy!r}")

    def caps(self, iteration: int) -> tuple[float, float]:
        """Scheduled (eta_u cap, eta_dt cap in days) for a 1-based iteration index."""
        n = max(0, iteration - self.shrink_after)
        f = max(self.shrink_factor**n, self.floor_fraction)
        return self.eta_u_max * f, self.eta_dt_max_days * f


@dataclass(frozen=True)
class Weights:
    w_dt: float = 0.1
    w_u: float = 0.01
    w_av: float = 1e7


def stack_gamma(dt, r_k, r_k1, v_k, v_k1, u_k, u_k1) -> np.ndarray:
    return np.concatenate([[dt], r_k, r_k1, v_k, v_k1, u_k, u_k1])


def _split(gamma):
    g = np.asarray(gamma, dtype=float)
    return g[..., DT], g[..., R_K], g[..., R_K1], g[..., V_K], g[..., V_K1], g[..., U_K], g[..., U_K1]


def discrete_update(gamma, params: SailParams, scheme: str = "foh", accel=None):
    """Next-node position and velocity from a node-pair vector.

    ``accel`` overrides the acceleration model (``accel(r, v, u) -> a``),
    e.g. to test the kinematics with gravity switched off.
    """
    c_cur, c_next = SCHEMES[scheme]
    dt, rk, rk1, vk, vk1, uk, uk1 = _split(gamma)
    if accel is None:
        ak = total_acceleration(rk, vk, uk, params)
        ak1 = total_acceleration(rk1, vk1, uk1, params)
    else:
        ak, ak1 = accel(rk, vk, uk), accel(rk1, vk1, uk1)
    r_next = rk + vk * dt + (c_cur * ak + c_next * ak1) * dt**2
    v_next = vk + 0.5 * (ak + ak1) * dt
    return r_next, v_next


@dataclass
class LinearizedDynamics:
    """Per-segment f_r, f_v (n_seg, 3) and Jacobians A, B (n_seg, 3, 19)."""

    f_r: np.ndarray
    f_v: np.ndarray
    A: np.ndarray
    B: np.ndarray
    accel: np.ndarray  # node accelerations at the reference (N, 3)


def linearize_dynamics(dt: float, r, v, u, params: SailParams, scheme: str = "foh") -> LinearizedDynamics:
    """f_r, f_v and their gamma-Jacobians for every segment of a trajectory."""
    c_cur, c_next = SCHEMES[scheme]
    a, da_dr, da_dv, da_du = acceleration_partials(r, v, u, params)
    ak, ak1 = a[:-1], a[1:]
    nseg = ak.shape[0]
    dt2 = dt * dt
    f_r = v[:-1] * dt + (c_cur * ak + c_next * ak1) * dt2
    f_v = 0.5 * (ak + ak1) * dt

    A = np.zeros((nseg, 3, GAMMA_SIZE))
    B = np.zeros((nseg, 3, GAMMA_SIZE))
    A[:, :, DT] = v[:-1] + 2.0 * dt * (c_cur * ak + c_next * ak1)
    A[:, :, R_K] = c_cur * dt2 * da_dr[:-1]
    A[:, :, R_K1] = c_next * dt2 * da_dr[1:]
    A[:, :, V_K] = dt * np.eye(3) + c_cur * dt2 * da_dv[:-1]
    A[:, :, V_K1] = c_next * dt2 * da_dv[1:]
    A[:, :, U_K] = c_cur * dt2 * da_du[:-1]
    A[:, :, U_K1] = c_next * dt2 * da_du[1:]

    B[:, :, DT] = 0.5 * (ak + ak1)
    B[:, :, R_K] = 0.5 * dt * da_dr[:-1]
    B[:, :, R_K1] = 0.5 * dt * da_dr[1:]
    B[:, :, V_K] = 0.5 * dt * da_dv[:-1]
    B[:, :, V_K1] = 0.5 * dt * da_dv[1:]
    B[:, :, U_K] = 0.5 * dt * da_du[:-1]
    B[:, :, U_K1] = 0.5 * dt * da_du[1:]
    return LinearizedDynamics(f_r, f_v, A, B, a)


def dynamics_jacobians(gamma_ref, params: SailParams, scheme: str = "foh"):
    """(f_r, f_v, A, B) for a single node pair."""
    dt, rk, rk1, vk, vk1, uk, uk1 = _split(gamma_ref)
    lin = linearize_dynamics(
        float(dt), np.stack([rk, rk1]), np.stack([vk, vk1]), np.stack([uk, uk1]), params, scheme
    )
    return lin.f_r[0], lin.f_v[0], lin.A[0], lin.B[0]


def control_jacobian(u) -> np.ndarray:
    """dPhi/du = [2 u1 - (4/3) u1^(1/3), 2 u2, 2 u3]."""
    u = np.asarray(u, dtype=float)
    if np.any(u[..., 0] < 0.0):
        raise ValueError("control Jacobian is undefined for u1 < 0")
    return np.stack([2.0 * u[..., 0] - (4.0 / 3.0) * np.cbrt(u[..., 0]), 2.0 * u[..., 1], 2.0 * u[..., 2]], -1)


@dataclass(frozen=True)
class TerminalLinearization:
    x_ter_ref: np.ndarray  # 6
    g_ref: np.ndarray  # 6
    scale: int  # N - 1: maps a node-spacing change to a final-time change

    def predict(self, d_dt: float) -> np.ndarray:
        return self.x_ter_ref + self.g_ref * d_dt * self.scale


def two_body_rate(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = x[:3]
    return np.concatenate([x[3:], -r / np.linalg.norm(r) ** 3])


def linearize_terminal(
    target: OrbitalElements, t_f_ref: float, ref_mjd: float, n_nodes: int
) -> TerminalLinearization:
    """Target state recomputed exactly at the reference final time, plus its rate."""
    st = elements_to_state(target, tu_to_mjd(t_f_ref, ref_mjd), ref_mjd)
    x = st.as_array()
    return TerminalLinearization(x, two_body_rate(x), n_nodes - 1)


@dataclass(frozen=True)
class ProgramLayout:
    """Index map of the sub-problem decision vector."""

    n_nodes: int

    @property
    def d_dt(self) -> int:
        return 0

    def _blk(self, j):
        n = self.n_nodes
        return np.arange(1 + 3 * n * j, 1 + 3 * n * (j + 1)).reshape(n, 3)

    @property
    def r(self):
        return self._blk(0)

    @property
    def v(self):
        return self._blk(1)

    @property
    def u(self):
        return self._blk(2)

    @property
    def a_v(self):
        return self._blk(3)

    @property
    def s(self):
        return np.arange(1 + 12 * self.n_nodes, 1 + 13 * self.n_nodes)

    @property
    def eta_u(self) -> int:
        return 1 + 13 * self.n_nodes

    @property
    def eta_dt(self) -> int:
        return 2 + 13 * self.n_nodes

    @property
    def size(self) -> int:
        return 3 + 13 * self.n_nodes

    def pack(self, d_dt, r, v, u, a_v, s, eta_u, eta_dt) -> np.ndarray:
        x = np.empty(self.size)
        x[self.d_dt] = d_dt
        x[self.r] = r
        x[self.v] = v
        x[self.u] = u
        x[self.a_v] = a_v
        x[self.s] = s
        x[self.eta_u] = eta_u
        x[self.eta_dt] = eta_dt
        return x


class _Rows:
    """Incremental COO builder."""

    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs = [], [], [], []
        self.count = 0

    def add_block(self, cols, coef, rhs):
        """Rows with identical column pattern: coef (k, len(cols)), rhs (k,)."""
        coef = np.atleast_2d(coef)
        k, w = coef.shape
        idx = np.arange(self.count, self.count + k)
        self.rows.append(np.repeat(idx, w))
        self.cols.append(np.tile(np.asarray(cols), k) if np.ndim(cols) == 1 else np.asarray(cols).ravel())
        self.vals.append(coef.ravel())
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (k,)))
        self.count += k

    def build(self, n):
        if not self.count:
            return sp.csc_matrix((0, n)), np.zeros(0)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        keep = vals != 0.0
        mat = sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.count, n))
        return mat, np.concatenate(self.rhs)


@dataclass
class AssembledProblem:
    program: ConicProgram
    layout: ProgramLayout
    reference: IterateSolution
    terminal: TerminalLinearization
    caps: tuple[float, float]  # (eta_u cap, eta_dt cap in TU)
    time_scale: float = field(default=1.0)


def assemble_problem(
    ref: IterateSolution,
    x0: np.ndarray,
    terminal: TerminalLinearization,
    params: SailParams,
    weights: Weights,
    caps: tuple[float, float],
    scheme: str = "foh",
    time_trust: str = "final",
    time_scale: float = 1.0,
) -> AssembledProblem:
    """Convex sub-problem linearised about ``ref``.

    ``caps`` is (eta_u cap, eta_dt cap in days).  With ``time_trust="final"``
    the time trust variable bounds the final-time change, |d_dt| (N - 1) <=
    eta_dt, and is penalised per node spacing (w_dt eta_dt / (N - 1)) so the
    time objective and its trust penalty share a unit; ``"spacing"`` bounds
    |d_dt| itself.  ``time_scale`` converts canonical time into the unit
    the objective counts time in (1 keeps TU).
    """
    N = ref.n_nodes
    if ref.r.shape != (N, 3) or ref.v.shape != (N, 3) or ref.u.shape != (N, 3):
        raise ValueError("reference arrays must all have shape (N, 3)")
    L = ProgramLayout(N)
    n = L.size
    dt = ref.grid.dt
    c_cur, c_next = SCHEMES[scheme]
    lin = linearize_dynamics(dt, ref.r, ref.v, ref.u, params, scheme)
    if not (np.all(np.isfinite(lin.A)) and np.all(np.isfinite(lin.B))):
        raise FloatingPointError("non-finite dynamics Jacobian")
    eq = _Rows()

    # initial condition
    eq.add_block(L.r[0][:, None], np.ones((3, 1)), x0[:3])
    eq.add_block(L.v[0][:, None], np.ones((3, 1)), x0[3:6])
    # terminal condition, linear in d_dt
    g = terminal.g_ref * terminal.scale
    for j in range(3):
        eq.add_block([L.r[-1][j], L.d_dt], [[1.0, -g[j]]], terminal.x_ter_ref[j])
    for j in range(3):
        eq.add_block([L.v[-1][j], L.d_dt], [[1.0, -g[3 + j]]], terminal.x_ter_ref[3 + j])

    # dynamics: x_{k+1} = x_k + f(ref) + J (gamma - gamma_ref) + virtual terms
    k = np.arange(N - 1)
    gam_cols = np.concatenate(
        [np.full((N - 1, 1), L.d_dt), L.r[k], L.r[k + 1], L.v[k], L.v[k + 1], L.u[k], L.u[k + 1]], axis=1
    )  # (N-1, 19)
    gam_ref = np.concatenate(
        [np.zeros((N - 1, 1)), ref.r[k], ref.r[k + 1], ref.v[k], ref.v[k + 1], ref.u[k], ref.u[k + 1]], axis=1
    )
    own = {0: (R_K, R_K1, c_cur * dt * dt, c_next * dt * dt, lin.A, lin.f_r),
           1: (V_K, V_K1, 0.5 * dt, 0.5 * dt, lin.B, lin.f_v)}
    for which in (0, 1):
        s_k, s_k1, cv_k, cv_k1, J, f = own[which]
        blk = L.r if which == 0 else L.v
        # row scaling puts every dynamics row in acceleration-like units
        rs = 1.0 / (dt * dt) if which == 0 else 1.0 / dt
        for j in range(3):
            coef = -J[:, j, :].copy()
            coef[:, s_k.start + j] -= 1.0  # -x_k
            coef[:, s_k1.start + j] += 1.0  # +x_{k+1}
            rhs = f[:, j] - np.einsum("ki,ki->k", J[:, j, 1:], gam_ref[:, 1:])
            cols = np.concatenate([gam_cols, L.a_v[k][:, j : j + 1], L.a_v[k + 1][:, j : j + 1]], axis=1)
            vals = np.concatenate([coef, np.full((N - 1, 1), -cv_k), np.full((N - 1, 1), -cv_k1)], axis=1)
            eq.add_block(cols, vals * rs, rhs * rs)

    # linearised manifold Phi(u_ref) + C (u - u_ref) = 0
    u_ref = ref.u.copy()
    u_ref[:, 0] = np.maximum(u_ref[:, 0], 0.0)
    C = control_jacobian(u_ref)
    phi = control_defect(u_ref)
    eq.add_block(L.u, C, np.einsum("kj,kj->k", C, u_ref) - phi)
    A, b = eq.build(n)

    # cones: orthant first, then trust and virtual SOCs
    cone = _Rows()
    ones = np.ones((N, 1))
    cone.add_block(L.u[:, 0:1], -ones, 0.0)  # u1 >= 0
    cone.add_block(L.u[:, 0:1], ones, 1.0)  # u1 <= 1
    for j in (1, 2):
        cone.add_block(L.u[:, j : j + 1], -ones, 1.0)
        cone.add_block(L.u[:, j : j + 1], ones, 1.0)
    cap_u, cap_dt_days = caps
    cap_dt = days_to_tu(cap_dt_days)
    sc = TIME_TRUST_SCALE[time_trust](N)
    cone.add_block([L.d_dt, L.eta_dt], [[sc, -1.0], [-sc, -1.0]], 0.0)
    cone.add_block([L.eta_u], [[1.0]], cap_u)
    cone.add_block([L.eta_dt], [[1.0]], cap_dt)
    nonneg = cone.count
    for kk in range(N):
        cone.add_block(np.concatenate([[L.eta_u], L.u[kk]])[:, None], -np.ones((4, 1)), np.concatenate([[0.0], -u_ref[kk]]))
    for kk in range(N):
        cone.add_block(np.concatenate([[L.s[kk]], L.a_v[kk]])[:, None], -np.ones((4, 1)), 0.0)
    G, h = cone.build(n)

    c = np.zeros(n)
    c[L.d_dt] = time_scale
    c[L.eta_dt] = time_scale * weights.w_dt / sc
    c[L.eta_u] = weights.w_u
    c[L.s] = weights.w_av
    prog = ConicProgram(c, A, b, G, h, nonneg, (4,) * (2 * N))
    return AssembledProblem(prog, L, ref, terminal, (cap_u, cap_dt), time_scale)


class ExtractionError(RuntimeError):
    pass


def extract_iterate(sol: SolverSolution, problem: AssembledProblem) -> IterateSolution:
    """Unpack a solved sub-problem into the next iterate."""
    if not sol.optimal:
        raise ExtractionError(f"cannot extract from a solve with status {sol.status.value}")
    L = problem.layout
    ref = problem.reference
    x = sol.x
    d_dt = float(x[L.d_dt])
    grid = DiscretizationGrid(ref.n_nodes, ref.grid.dt + d_dt, ref.grid.t0)
    return IterateSolution(
        grid=grid,
        r=x[L.r].copy(),
        v=x[L.v].copy(),
        u=x[L.u].copy(),
        a_v=x[L.a_v].copy(),
        eta_u=float(x[L.eta_u]),
        eta_dt=float(x[L.eta_dt]),
        objective=problem.time_scale * ref.grid.dt + float(problem.program.c @ x),
        status=sol.status.value,
        solver_iterations=sol.iterations,
    )
