"""Ideal flat-sail force model, RTN frame and equivalent-control transform.

Functions accept single 3-vectors or stacks of shape (n, 3) where noted; the
vectorised forms are what the transcription uses for all nodes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .ephemeris import TWO_PI, StateVector

MU_SUN = 1.0
TOL_MANIFOLD = 1e-6


class FrameDegeneracyError(ValueError):
    """The RTN frame is undefined (zero radius or radial motion)."""


class ManifoldViolationError(ValueError):
    """An equivalent control lies too far from the manifold Phi(u) = 0."""


@dataclass(frozen=True)
class SailParams:
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ValueError(f"lightness number must be positive, got beta={self.beta}")


@dataclass(frozen=True)
class SailControl:
    """Cone angle ``alpha`` in [0, pi/2] and clock angle ``delta`` in [0, 2*pi)."""

    alpha: float
    delta: float

    def __post_init__(self):
        if not -1e-12 <= self.alpha <= math.pi / 2 + 1e-12:
            raise ValueError(f"cone angle must lie in [0, pi/2], got {self.alpha}")
        object.__setattr__(self, "delta", math.fmod(self.delta, TWO_PI) % TWO_PI)


@dataclass(frozen=True)
class ControlProfile:
    """Node controls ``u`` (N, 3) and optional virtual accelerations (N, 3)."""

    u: np.ndarray
    a_v: np.ndarray | None = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if u.ndim != 2 or u.shape[1] != 3:
            raise ValueError("controls must have shape (N, 3)")
        object.__setattr__(self, "u", u)
        if self.a_v is not None:
            av = np.asarray(self.a_v, dtype=float)
            if av.shape != u.shape:
                raise ValueError("virtual controls must match the control shape")
            object.__setattr__(self, "a_v", av)

    def __len__(self):
        return self.u.shape[0]


def _cross_matrix(w):
    """Skew matrices [w]x for w of shape (..., 3)."""
    w = np.asarray(w)
    z = np.zeros(w.shape[:-1])
    return np.stack(
        [
            np.stack([z, -w[..., 2], w[..., 1]], -1),
            np.stack([w[..., 2], z, -w[..., 0]], -1),
            np.stack([-w[..., 1], w[..., 0], z], -1),
        ],
        -2,
    )


def rtn_frame(r, v):
    """Radial, angular-momentum and transverse unit vectors.

    Returns ``(r_hat, h_hat, t_hat)`` with ``t_hat = h_hat x r_hat``.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    rho = np.linalg.norm(r, axis=-1, keepdims=True)
    h = np.cross(r, v)
    hn = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(rho <= 0.0) or np.any(hn <= 1e-12):
        raise FrameDegeneracyError("RTN frame undefined: zero radius or vanishing angular momentum")
    r_hat = r / rho
    h_hat = h / hn
    t_hat = np.cross(h_hat, r_hat)
    return r_hat, h_hat, t_hat


def sail_normal(ctrl: SailControl, frame) -> np.ndarray:
    r_hat, h_hat, t_hat = frame
    ca, sa = math.cos(ctrl.alpha), math.sin(ctrl.alpha)
    return ca * r_hat + sa * math.cos(ctrl.delta) * h_hat + sa * math.sin(ctrl.delta) * t_hat


def angles_to_u(alpha, delta) -> np.ndarray:
    """Equivalent control (cos^3 a, cos^2 a sin a cos d, cos^2 a sin a sin d)."""
    alpha = np.asarray(alpha, dtype=float)
    delta = np.asarray(delta, dtype=float)
    c, s = np.cos(alpha), np.sin(alpha)
    c2s = c * c * s
    return np.stack([c**3, c2s * np.cos(delta), c2s * np.sin(delta)], -1)


def control_defect(u) -> np.ndarray | float:
    """Phi(u) = |u|^2 - u1^(4/3); zero on the reachable control set."""
    u = np.asarray(u, dtype=float)
    u1 = u[..., 0]
    if np.any(u1 < 0.0):
        raise ValueError("control defect is undefined for u1 < 0")
    out = np.sum(u * u, axis=-1) - np.cbrt(u1) ** 4
    return float(out) if out.ndim == 0 else out


def u_to_angles(u, tol_manifold: float = TOL_MANIFOLD):
    """Recover (alpha, delta) from an equivalent control.

    Small negative ``u1`` (solver round-off) is clipped to zero.  Raises
    ``ManifoldViolationError`` if ``|Phi(u)|`` exceeds ``tol_manifold``.
    """
    u = np.asarray(u, dtype=float)
    u1 = np.clip(u[..., 0], 0.0, 1.0)
    phi = np.sum(u[..., 1:] ** 2, axis=-1) + u1 * u1 - np.cbrt(u1) ** 4
    if np.any(np.abs(phi) > tol_manifold):
        raise ManifoldViolationError(f"|Phi(u)| = {np.max(np.abs(phi)):.3e} exceeds {tol_manifold:g}")
    alpha = np.arccos(np.cbrt(u1))
    delta = np.mod(np.arctan2(u[..., 2], u[..., 1]), TWO_PI)
    return alpha, delta


def project_to_manifold(u) -> np.ndarray:
    """Nearest-angle projection: alpha from u1, delta from (u2, u3)."""
    u = np.asarray(u, dtype=float)
    u1 = np.clip(u[..., 0], 0.0, 1.0)
    alpha = np.arccos(np.cbrt(u1))
    delta = np.arctan2(u[..., 2], u[..., 1])
    return angles_to_u(alpha, delta)


def srp_acceleration(r, v, u, params: SailParams) -> np.ndarray:
    """Sail acceleration beta/r^2 (u1 r_hat + u2 h_hat + u3 t_hat)."""
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    r_hat, h_hat, t_hat = rtn_frame(r, v)
    rho2 = np.sum(r * r, axis=-1, keepdims=True)
    d = u[..., 0:1] * r_hat + u[..., 1:2] * h_hat + u[..., 2:3] * t_hat
    return params.beta * MU_SUN / rho2 * d


def total_acceleration(r, v, u, params: SailParams, a_v=None) -> np.ndarray:
    """Gravity plus sail acceleration, plus the virtual term when given."""
    r = np.asarray(r, dtype=float)
    rho = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(rho <= 0.0):
        raise FrameDegeneracyError("acceleration undefined at the origin")
    acc = -MU_SUN * r / rho**3 + srp_acceleration(r, v, u, params)
    if a_v is not None:
        acc = acc + np.asarray(a_v, dtype=float)
    return acc


def acceleration_partials(r, v, u, params: SailParams):
    """Acceleration and its partials with respect to r, v and u.

    Inputs are stacks of shape (n, 3); returns ``(a, da_dr, da_dv, da_du)``
    with the Jacobians of shape (n, 3, 3).  The RTN frame is differentiated
    through, not frozen.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    r_hat, h_hat, t_hat = rtn_frame(r, v)
    rho = np.linalg.norm(r, axis=-1)
    h = np.cross(r, v)
    hn = np.linalg.norm(h, axis=-1)
    eye = np.eye(3)

    drhat_dr = (eye - r_hat[:, :, None] * r_hat[:, None, :]) / rho[:, None, None]
    p_h = (eye - h_hat[:, :, None] * h_hat[:, None, :]) / hn[:, None, None]
    dhhat_dr = -p_h @ _cross_matrix(v)  # h = r x v = -[v]x r
    dhhat_dv = p_h @ _cross_matrix(r)
    dthat_dr = _cross_matrix(h_hat) @ drhat_dr - _cross_matrix(r_hat) @ dhhat_dr
    dthat_dv = -_cross_matrix(r_hat) @ dhhat_dv

    k = params.beta * MU_SUN / rho**2
    d = u[:, 0:1] * r_hat + u[:, 1:2] * h_hat + u[:, 2:3] * t_hat
    a = -MU_SUN * r / rho[:, None] ** 3 + k[:, None] * d

    u1 = u[:, 0, None, None]
    u2 = u[:, 1, None, None]
    u3 = u[:, 2, None, None]
    dd_dr = u1 * drhat_dr + u2 * dhhat_dr + u3 * dthat_dr
    dd_dv = u2 * dhhat_dv + u3 * dthat_dv
    grav = -MU_SUN * (eye / rho[:, None, None] ** 3 - 3.0 * r[:, :, None] * r[:, None, :] / rho[:, None, None] ** 5)
    dk_dr = -2.0 * k[:, None] * r / rho[:, None] ** 2
    da_dr = grav + d[:, :, None] * dk_dr[:, None, :] + k[:, None, None] * dd_dr
    da_dv = k[:, None, None] * dd_dv
    da_du = k[:, None, None] * np.stack([r_hat, h_hat, t_hat], axis=-1)
    return a, da_dr, da_dv, da_du


def _interp_nodes(values: np.ndarray, t: float, dt: float) -> np.ndarray:
    n = values.shape[0]
    s = min(max(t / dt, 0.0), n - 1.0)
    k = min(int(s), n - 2)
    w = s - k
    return (1.0 - w) * values[k] + w * values[k + 1]


def integrate_trajectory(
    x0: StateVector,
    profile: ControlProfile | Sequence,
    dt: float,
    n_nodes: int,
    params: SailParams,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    use_virtual: bool = False,
    method: str = "DOP853",
) -> list[StateVector]:
    """Propagate the continuous dynamics with linearly interpolated controls.

    Integration restarts at every node so the piecewise-linear control never
    forces the step-size controller across a kink.  Returns the state at every
    node time.
    """
    if not isinstance(profile, ControlProfile):
        profile = ControlProfile(np.asarray(profile, dtype=float))
    if n_nodes < 2 or not dt > 0.0:
        raise ValueError("need n_nodes >= 2 and dt > 0")
    if len(profile) != n_nodes:
        raise ValueError(f"profile has {len(profile)} nodes, expected {n_nodes}")
    u_nodes = profile.u
    av_nodes = profile.a_v if (use_virtual and profile.a_v is not None) else None

    def rhs(t, y):
        u = _interp_nodes(u_nodes, t, dt)
        av = None if av_nodes is None else _interp_nodes(av_nodes, t, dt)
        acc = total_acceleration(y[:3], y[3:], u, params, av)
        return np.concatenate([y[3:], acc])

    states = [StateVector(x0.r.copy(), x0.v.copy(), x0.t)]
    y = x0.as_array()
    for k in range(n_nodes - 1):
        sol = solve_ivp(rhs, (k * dt, (k + 1) * dt), y, method=method, rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"integration failed on segment {k}: {sol.message}")
        y = sol.y[:, -1]
        states.append(StateVector.from_array(y, x0.t + (k + 1) * dt))
    return states
