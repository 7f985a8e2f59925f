"""Independent checks of a converged trajectory.

Nothing here reuses the linearisation: the discrete defect evaluates the
nonlinear node update directly and the reintegration propagates the
continuous dynamics with an adaptive integrator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SailParams, control_defect, integrate_trajectory, project_to_manifold
from .ephemeris import OrbitalElements, StateVector, elements_to_state, tu_to_days, tu_to_mjd
from .transcription import IterateSolution, discrete_update, stack_gamma


@dataclass(frozen=True)
class VerificationReport:
    discrete_defect_pos: float
    discrete_defect_vel: float
    reintegration_pos_err: float  # AU
    reintegration_vel_err: float  # AU/TU
    manifold_residual_max: float
    tof_days: float
    rendezvous_mjd: float

    def __post_init__(self):
        for name in ("discrete_defect_pos", "discrete_defect_vel", "reintegration_pos_err",
                     "reintegration_vel_err", "manifold_residual_max"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be a nonnegative number")

    @property
    def discrete_defect_max(self) -> float:
        return max(self.discrete_defect_pos, self.discrete_defect_vel)


def discrete_defect(solution: IterateSolution, params: SailParams, scheme: str = "foh") -> np.ndarray:
    """Per-segment (position, velocity) defect norms of the nonlinear update, shape (N-1, 2).

    Virtual control is ignored on purpose: a physical trajectory must close
    without it.
    """
    r, v, u, dt = solution.r, solution.v, solution.u, solution.grid.dt
    out = np.empty((solution.n_nodes - 1, 2))
    for k in range(solution.n_nodes - 1):
        g = stack_gamma(dt, r[k], r[k + 1], v[k], v[k + 1], u[k], u[k + 1])
        rn, vn = discrete_update(g, params, scheme)
        out[k] = np.linalg.norm(rn - r[k + 1]), np.linalg.norm(vn - v[k + 1])
    return out


def _clip_u(u: np.ndarray) -> np.ndarray:
    u = np.array(u, dtype=float, copy=True)
    u[:, 0] = np.clip(u[:, 0], 0.0, 1.0)
    return u


def reintegrate(
    solution: IterateSolution,
    x0: StateVector,
    target: OrbitalElements,
    ref_mjd: float,
    params: SailParams,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    project: bool = False,
    scheme: str = "foh",
) -> VerificationReport:
    """Propagate from the exact departure state with the node controls and compare with the target.

    ``x0.t`` and the solution grid are in canonical time measured from
    ``ref_mjd``.  With ``project`` the controls are first mapped onto the
    control manifold.
    """
    u = _clip_u(solution.u)
    if project:
        u = project_to_manifold(u)
    states = integrate_trajectory(x0, u, solution.grid.dt, solution.n_nodes, params, rtol=rtol, atol=atol)
    arrival = states[-1]
    t_f = solution.grid.t_f
    tgt = elements_to_state(target, tu_to_mjd(t_f, ref_mjd), ref_mjd)
    defects = discrete_defect(solution, params, scheme)
    return VerificationReport(
        discrete_defect_pos=float(defects[:, 0].max()),
        discrete_defect_vel=float(defects[:, 1].max()),
        reintegration_pos_err=float(np.linalg.norm(arrival.r - tgt.r)),
        reintegration_vel_err=float(np.linalg.norm(arrival.v - tgt.v)),
        manifold_residual_max=float(np.max(np.abs(control_defect(u)))),
        tof_days=float(tu_to_days(solution.tof)),
        rendezvous_mjd=float(tu_to_mjd(t_f, ref_mjd)),
    )
