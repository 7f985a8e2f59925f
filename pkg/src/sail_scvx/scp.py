"""Successive convexification loop.

Starting from a coasting reference, every iteration re-linearises the
dynamics, the control manifold and the terminal rendezvous condition about
the previous iterate, solves the resulting SOCP and takes its solution as the
next reference.  Iteration 0 is the initial reference and is never counted.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics import SailParams, angles_to_u
from .ephemeris import OrbitalElements, UNITS, days_to_tu, elements_to_state, propagate_state, tu_to_days
from .socp import Status, solve
from .transcription import (
    DiscretizationGrid,
    IterateSolution,
    TrustRegionConfig,
    Weights,
    assemble_problem,
    extract_iterate,
    linearize_terminal,
)

log = logging.getLogger(__name__)

# objective time unit -> objective units per canonical time unit
TIME_UNITS = {"tu": 1.0, "day": UNITS.days_per_tu, "s": UNITS.time_unit}


class ScpError(RuntimeError):
    """Failure inside the loop, tagged with the iteration it happened in."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class ModelingError(ScpError):
    """The sub-problem was infeasible although virtual control should prevent that."""


@dataclass(frozen=True)
class Mission:
    """What is being solved: bodies, departure epoch and sail."""

    departure: OrbitalElements
    target: OrbitalElements
    t0_mjd: float
    beta: float = 0.0843
    departure_name: str = "departure"
    target_name: str = "target"

    def __post_init__(self):
        if not math.isfinite(self.t0_mjd):
            raise ValueError("t0_mjd must be finite")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def params(self) -> SailParams:
        return SailParams(self.beta)

    def departure_state(self):
        return elements_to_state(self.departure, self.t0_mjd, self.t0_mjd)


@dataclass(frozen=True)
class ScpConfig:
    n_nodes: int = 100
    tof_guess_days: float = 300.0
    weights: Weights = field(default_factory=Weights)
    trust: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    eps_u: float = 1e-5
    eps_dt_days: float = 1e-3
    i_max: int = 100
    av_accept_threshold: float = 1e-8
    escalate: bool = False
    escalation_factor: float = 1.5
    escalation_cap: float = 100.0
    time_unit: str = "day"
    scheme: str = "foh"
    solver_tol: float = 1e-8
    alpha0_deg: float = 30.0
    delta0_deg: float = 180.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        if not self.tof_guess_days > 0.0:
            raise ValueError("tof_guess_days must be positive")
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")
        if min(self.eps_u, self.eps_dt_days, self.av_accept_threshold) <= 0.0:
            raise ValueError("convergence thresholds must be positive")
        if self.time_unit not in TIME_UNITS:
            raise ValueError(f"time_unit must be one of {sorted(TIME_UNITS)}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    dt_days: float
    tof_days: float
    iter_err_u: float
    iter_err_dt_days: float
    max_av: float
    objective: float
    solver_status: str
    solver_iters: int
    wall_ms: float
    eta_u: float
    eta_dt_days: float
    eta_u_cap: float
    eta_dt_cap_days: float
    weights: Weights
    kkt_residual: float = float("nan")  # worst scaled residual of the sub-problem solve


@dataclass
class ConvergenceReport:
    converged: bool
    status: str  # "Converged" or "Infeasible"
    history: list[IterationRecord]

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def final_err_u(self) -> float:
        return self.history[-1].iter_err_u if self.history else float("nan")

    @property
    def penultimate_err_u(self) -> float:
        return self.history[-2].iter_err_u if len(self.history) > 1 else float("nan")

    @property
    def final_err_dt_days(self) -> float:
        return self.history[-1].iter_err_dt_days if self.history else float("nan")

    @property
    def max_av(self) -> float:
        return self.history[-1].max_av if self.history else float("nan")

    @property
    def wall_s(self) -> float:
        return sum(h.wall_ms for h in self.history) / 1000.0


def initial_reference(mission: Mission, config: ScpConfig) -> IterateSolution:
    """Departure body's own orbit sampled on the guessed grid, constant sail attitude."""
    N = config.n_nodes
    grid = DiscretizationGrid(N, days_to_tu(config.tof_guess_days) / (N - 1))
    x0 = mission.departure_state()
    states = [propagate_state(x0, t) for t in grid.times]
    u0 = angles_to_u(math.radians(config.alpha0_deg), math.radians(config.delta0_deg))
    return IterateSolution(
        grid=grid,
        r=np.array([s.r for s in states]),
        v=np.array([s.v for s in states]),
        u=np.tile(u0, (N, 1)),
        a_v=np.zeros((N, 3)),
    )


def control_step(u_new, u_old) -> float:
    """Largest per-node Euclidean control change."""
    return float(np.max(np.linalg.norm(np.asarray(u_new) - np.asarray(u_old), axis=1)))


def convergence_check(iter_i: IterateSolution, iter_prev: IterateSolution, config: ScpConfig):
    """(converged, iter_err_u, iter_err_dt in days, max node |a_v|)."""
    if iter_i.n_nodes != iter_prev.n_nodes:
        raise ValueError(f"grid mismatch: {iter_i.n_nodes} vs {iter_prev.n_nodes} nodes")
    err_u = control_step(iter_i.u, iter_prev.u)
    err_dt = float(tu_to_days(abs(iter_i.grid.dt - iter_prev.grid.dt)))
    max_av = float(np.max(np.linalg.norm(iter_i.a_v, axis=1)))
    ok = err_u <= config.eps_u and err_dt <= config.eps_dt_days and max_av <= config.av_accept_threshold
    return ok, err_u, err_dt, max_av


def _escalate(w: float, w0: float, pinned: bool, config: ScpConfig) -> float:
    if not pinned:
        return w
    return min(w * config.escalation_factor, w0 * config.escalation_cap)


def _at_cap(value: float, cap: float) -> bool:
    return value >= cap * (1.0 - 1e-6)


def update_weights_and_radii(history: list[IterationRecord], config: ScpConfig):
    """Weights and (eta_u cap, eta_dt cap in days) for the iteration after ``history``."""
    tr = config.trust
    i = len(history) + 1
    if not history:
        start = tr.eta_u_start if tr.policy == "adaptive" else tr.eta_u_max
        return config.weights, (start, tr.eta_dt_max_days)

    w = history[-1].weights
    if config.escalate and len(history) >= 2:
        a, b = history[-2], history[-1]
        w = replace(
            w,
            w_u=_escalate(w.w_u, config.weights.w_u,
                          _at_cap(a.eta_u, a.eta_u_cap) and _at_cap(b.eta_u, b.eta_u_cap), config),
            w_dt=_escalate(w.w_dt, config.weights.w_dt,
                           _at_cap(a.eta_dt_days, a.eta_dt_cap_days) and _at_cap(b.eta_dt_days, b.eta_dt_cap_days),
                           config),
        )

    if tr.policy == "schedule":
        return w, tr.caps(i)

    last = history[-1]
    cap_u = last.eta_u_cap
    feasible_before = any(h.max_av <= tr.feasible_av for h in history[:-1])
    if feasible_before and last.max_av <= tr.feasible_av:
        prev_tof = history[-2].tof_days
        if last.tof_days > prev_tof + 1e-7:
            cap_u *= tr.reject_factor
        else:
            cap_u = min(cap_u * tr.grow_factor, tr.eta_u_start)
    return w, (cap_u, tr.eta_dt_max_days)


def _solve_subproblem(ref, x0, terminal, mission, weights, caps, config, iteration):
    scale = TIME_UNITS[config.time_unit]
    prob = assemble_problem(ref, x0, terminal, mission.params, weights, caps,
                            scheme=config.scheme, time_trust="final", time_scale=scale)
    sol = solve(prob.program, tol=config.solver_tol)
    if sol.status is Status.PRIMAL_INFEASIBLE:
        # boundary and trust rows conflict: widen the time trust once
        log.warning("iteration %d: sub-problem infeasible, retrying with doubled time trust", iteration)
        caps = (caps[0], 2.0 * caps[1])
        prob = assemble_problem(ref, x0, terminal, mission.params, weights, caps,
                                scheme=config.scheme, time_trust="final", time_scale=scale)
        sol = solve(prob.program, tol=config.solver_tol)
        if sol.status is Status.PRIMAL_INFEASIBLE:
            raise ModelingError("sub-problem infeasible despite virtual control; check boundary data", iteration)
    if not sol.optimal:
        raise ScpError(f"solver returned {sol.status.value} ({sol.residuals})", iteration)
    return extract_iterate(sol, prob), sol, caps


def run(
    mission: Mission,
    config: ScpConfig | None = None,
    callback: Callable[[IterationRecord, IterateSolution], None] | None = None,
) -> tuple[IterateSolution, ConvergenceReport]:
    """Iterate until converged or ``i_max`` sub-problems have been solved.

    Returns the last iterate; ``report.status`` is "Infeasible" when the loop
    ran out of iterations.
    """
    config = config or ScpConfig()
    ref = initial_reference(mission, config)
    x0 = mission.departure_state().as_array()
    history: list[IterationRecord] = []
    for i in range(1, config.i_max + 1):
        t_start = time.perf_counter()
        weights, caps = update_weights_and_radii(history, config)
        terminal = linearize_terminal(mission.target, ref.grid.t_f, mission.t0_mjd, config.n_nodes)
        new, sol, caps = _solve_subproblem(ref, x0, terminal, mission, weights, caps, config, i)
        # interior-point round-off can leave u1 a hair below zero
        new.u[:, 0] = np.clip(new.u[:, 0], 0.0, 1.0)
        ok, err_u, err_dt, max_av = convergence_check(new, ref, config)
        rec = IterationRecord(
            iteration=i,
            dt_days=float(tu_to_days(new.grid.dt)),
            tof_days=float(tu_to_days(new.tof)),
            iter_err_u=err_u,
            iter_err_dt_days=err_dt,
            max_av=max_av,
            objective=new.objective,
            solver_status=sol.status.value,
            solver_iters=sol.iterations,
            wall_ms=1000.0 * (time.perf_counter() - t_start),
            eta_u=new.eta_u,
            eta_dt_days=float(tu_to_days(new.eta_dt)),
            eta_u_cap=caps[0],
            eta_dt_cap_days=caps[1],
            weights=weights,
            kkt_residual=max(sol.residuals.get(k, np.nan) for k in ("primal_eq", "primal_cone", "dual", "relative_gap")),
        )
        history.append(rec)
        log.info("iter %3d  tof %.4f d  err_u %.2e  err_dt %.2e d  max_av %.2e  cap_u %.3g",
                 i, rec.tof_days, err_u, err_dt, max_av, caps[0])
        if callback is not None:
            callback(rec, new)
        ref = new
        if ok:
            return ref, ConvergenceReport(True, "Converged", history)
    return ref, ConvergenceReport(False, "Infeasible", history)
