"""Two-body ephemerides in heliocentric canonical units.

Distances are in AU and times in units of one year / 2*pi, which makes the
solar gravitational parameter exactly one.  All public functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi
SECONDS_PER_DAY = 86400.0


class KeplerError(ValueError):
    """Raised for orbit classes the propagator does not handle."""


@dataclass(frozen=True)
class CanonicalUnits:
    """Heliocentric canonical unit system (mu_sun == 1)."""

    distance_unit: float = 1.495978707e11  # m
    year_days: float = 365.25
    gm_sun_si: float = 1.32712440018e20  # m^3/s^2, only for a_c <-> beta
    mu_sun: float = field(default=1.0, init=False)

    @property
    def time_unit(self) -> float:
        """Seconds per canonical time unit."""
        return self.year_days * SECONDS_PER_DAY / TWO_PI

    @property
    def days_per_tu(self) -> float:
        return self.year_days / TWO_PI

    @property
    def acceleration_unit(self) -> float:
        """m/s^2 per canonical acceleration unit."""
        return self.distance_unit / self.time_unit**2


UNITS = CanonicalUnits()


def days_to_tu(days, units: CanonicalUnits = UNITS):
    return days / units.days_per_tu


def tu_to_days(tu, units: CanonicalUnits = UNITS):
    return tu * units.days_per_tu


def mjd_to_tu(mjd, ref_mjd: float, units: CanonicalUnits = UNITS):
    """Canonical time elapsed since ``ref_mjd``."""
    return (mjd - ref_mjd) / units.days_per_tu


def tu_to_mjd(t, ref_mjd: float, units: CanonicalUnits = UNITS):
    return ref_mjd + t * units.days_per_tu


def mm_s2_to_canonical(acc, units: CanonicalUnits = UNITS):
    return acc * 1e-3 / units.acceleration_unit


def canonical_to_mm_s2(acc, units: CanonicalUnits = UNITS):
    return acc * units.acceleration_unit * 1e3


def characteristic_acceleration(beta: float, units: CanonicalUnits = UNITS) -> float:
    """Sun-facing sail acceleration at 1 AU in mm/s^2 for lightness number ``beta``."""
    return 1e3 * beta * units.gm_sun_si / units.distance_unit**2


def lightness_number(ac_mm_s2: float, units: CanonicalUnits = UNITS) -> float:
    return ac_mm_s2 * 1e-3 * units.distance_unit**2 / units.gm_sun_si


_CONVERSIONS = {
    "days->tu": (days_to_tu, tu_to_days),
    "tu->days": (tu_to_days, days_to_tu),
    "mm/s2->canonical": (mm_s2_to_canonical, canonical_to_mm_s2),
    "canonical->mm/s2": (canonical_to_mm_s2, mm_s2_to_canonical),
    "mjd->tu": (mjd_to_tu, tu_to_mjd),
    "tu->mjd": (tu_to_mjd, mjd_to_tu),
}


def convert(value, kind: str, ref_mjd: float | None = None, units: CanonicalUnits = UNITS):
    """Dispatch a unit conversion by name, e.g. ``convert(365.25, "days->tu")``.

    The MJD kinds need the scenario reference epoch ``ref_mjd``.
    """
    try:
        forward, _ = _CONVERSIONS[kind]
    except KeyError:
        raise ValueError(f"unknown conversion kind {kind!r}; expected one of {sorted(_CONVERSIONS)}") from None
    if kind in ("mjd->tu", "tu->mjd"):
        if ref_mjd is None:
            raise ValueError(f"conversion {kind!r} needs ref_mjd")
        return forward(value, ref_mjd, units)
    return forward(value, units)


def wrap_angle(x: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    y = math.fmod(x, TWO_PI)
    if y < 0.0:
        y += TWO_PI
    if y >= TWO_PI:  # fmod of tiny negatives can round up
        y = 0.0
    return y


@dataclass(frozen=True)
class OrbitalElements:
    """Classical elements; a in AU, angles in rad, epoch in MJD."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    m0: float
    epoch: float

    def __post_init__(self):
        vals = (self.a, self.e, self.i, self.raan, self.argp, self.m0, self.epoch)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("orbital elements must be finite")
        if self.a <= 0.0:
            raise ValueError(f"semi-major axis must be positive, got a={self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"only elliptic orbits are supported, got e={self.e}")
        if not 0.0 <= self.i <= math.pi:
            raise ValueError(f"inclination must lie in [0, pi], got i={self.i}")
        object.__setattr__(self, "raan", wrap_angle(self.raan))
        object.__setattr__(self, "argp", wrap_angle(self.argp))
        object.__setattr__(self, "m0", wrap_angle(self.m0))

    @property
    def mean_motion(self) -> float:
        """Canonical mean motion (rad/TU)."""
        return self.a**-1.5


@dataclass(frozen=True)
class StateVector:
    """Heliocentric state; r in AU, v in AU/TU, t in TU past the scenario epoch."""

    r: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])

    @classmethod
    def from_array(cls, x, t: float = 0.0) -> "StateVector":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6], t)


# Reference elements; Earth/Venus/Mars at MJD 57800, Apophis at MJD 54441.
BODIES: dict[str, OrbitalElements] = {
    "earth": OrbitalElements(0.9995, 0.0166, 0.0000, 3.5798, 4.4677, 0.7822, 57800.0),
    "venus": OrbitalElements(0.7233, 0.0067, 0.0592, 1.3375, 0.9602, 6.1517, 57800.0),
    "mars": OrbitalElements(1.5237, 0.0935, 0.0322, 0.8640, 5.0032, 1.0011, 57800.0),
    "apophis": OrbitalElements(0.9222, 0.1911, 0.0581, 3.5684, 2.2060, 3.7619, 54441.0),
}


def solve_kepler(mean_anomaly: float, e: float, tol: float = 1e-14) -> float:
    """Eccentric anomaly in [0, 2*pi) for an elliptic orbit.

    Newton's method seeded at ``M + e sin M``; falls back to bisection if
    Newton has not converged after 50 steps.
    """
    if not (math.isfinite(mean_anomaly) and math.isfinite(e)):
        raise KeplerError("Kepler equation inputs must be finite")
    if not 0.0 <= e < 1.0:
        raise KeplerError(f"Kepler solver supports 0 <= e < 1, got e={e}")
    m = wrap_angle(mean_anomaly)
    if e == 0.0:
        return m

    def resid(x):
        return x - e * math.sin(x) - m

    ecc = m + e * math.sin(m)
    for _ in range(50):
        f = resid(ecc)
        if abs(f) <= tol:
            break
        ecc -= f / (1.0 - e * math.cos(ecc))
        ecc = min(max(ecc, 0.0), TWO_PI)
    else:
        ecc = _bisect_kepler(m, e, tol)
    if abs(resid(ecc)) > tol:
        ecc = _bisect_kepler(m, e, tol)
    if ecc >= TWO_PI:
        ecc -= TWO_PI
    return ecc


def _bisect_kepler(m: float, e: float, tol: float) -> float:
    # E - e sin E is monotone on [0, 2pi] and spans [0, 2pi].
    lo, hi = 0.0, TWO_PI
    mid = m
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = mid - e * math.sin(mid) - m
        if abs(f) <= tol or hi - lo < 1e-16:
            break
        if f > 0.0:
            hi = mid
        else:
            lo = mid
    return mid


def perifocal_rotation(raan: float, inc: float, argp: float) -> np.ndarray:
    """Columns are the perifocal P, Q, W axes in the inertial frame."""
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array(
        [
            [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
            [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
            [sw * si, cw * si, ci],
        ]
    )


def elements_to_state(
    elements: OrbitalElements, t_mjd: float, ref_mjd: float | None = None, units: CanonicalUnits = UNITS
) -> StateVector:
    """Cartesian state of a body at ``t_mjd``.

    The returned time tag is measured from ``ref_mjd`` (defaults to ``t_mjd``
    itself, i.e. t = 0).
    """
    if not math.isfinite(t_mjd):
        raise ValueError("epoch must be finite")
    a, e = elements.a, elements.e
    dt = mjd_to_tu(t_mjd, elements.epoch, units)
    m = elements.m0 + elements.mean_motion * dt
    ecc = solve_kepler(m, e)
    ce, se = math.cos(ecc), math.sin(ecc)
    b = math.sqrt(1.0 - e * e)
    rho = a * (1.0 - e * ce)
    r_pf = np.array([a * (ce - e), a * b * se, 0.0])
    vfac = math.sqrt(a) / rho  # sqrt(mu a)/r with mu = 1
    v_pf = np.array([-vfac * se, vfac * b * ce, 0.0])
    rot = perifocal_rotation(elements.raan, elements.i, elements.argp)
    t = 0.0 if ref_mjd is None else mjd_to_tu(t_mjd, ref_mjd, units)
    return StateVector(rot @ r_pf, rot @ v_pf, t)


def body_state(name: str, t_mjd: float, ref_mjd: float | None = None) -> StateVector:
    """State of a built-in body (see ``BODIES``)."""
    try:
        el = BODIES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown body {name!r}; built-ins are {sorted(BODIES)}") from None
    return elements_to_state(el, t_mjd, ref_mjd)


def specific_energy(r, v) -> float:
    return 0.5 * float(np.dot(v, v)) - 1.0 / float(np.linalg.norm(r))


def propagate_state(state: StateVector, dt: float) -> StateVector:
    """Exact two-body advance by ``dt`` canonical time units.

    Uses Lagrange f and g coefficients with the eccentric-anomaly change from
    Kepler's equation in difference form, so circular and equatorial orbits
    need no special handling.
    """
    r0, v0 = state.r, state.v
    rho0 = float(np.linalg.norm(r0))
    if not rho0 > 0.0:
        raise KeplerError("cannot propagate a state at the origin")
    energy = specific_energy(r0, v0)
    if energy >= 0.0:
        raise KeplerError(f"only bound (elliptic) states can be propagated, energy={energy}")
    if dt == 0.0:
        return StateVector(r0.copy(), v0.copy(), state.t)
    a = -0.5 / energy
    n = a**-1.5
    period = TWO_PI / n
    # whole revolutions are exact identities; strip them before solving
    revs = math.floor(dt / period)
    tau = dt - revs * period
    sig0 = float(np.dot(r0, v0))  # r.v / sqrt(mu)
    sqa = math.sqrt(a)
    ec = 1.0 - rho0 / a  # e cos E0
    es = sig0 / sqa  # e sin E0
    mdt = n * tau

    def kep(x):
        return x + es * (1.0 - math.cos(x)) - ec * math.sin(x) - mdt

    x = mdt
    for _ in range(60):
        f = kep(x)
        fp = 1.0 + es * math.sin(x) - ec * math.cos(x)
        step = f / fp
        x -= step
        if abs(step) < 1e-15 * max(1.0, abs(x)):
            break
    cx, sx = math.cos(x), math.sin(x)
    rho = a + (rho0 - a) * cx + sig0 * sqa * sx
    f = 1.0 - a / rho0 * (1.0 - cx)
    g = tau + (sx - x) / n
    fdot = -sqa / (rho * rho0) * sx
    gdot = 1.0 - a / rho * (1.0 - cx)
    return StateVector(f * r0 + g * v0, fdot * r0 + gdot * v0, state.t + dt)


def state_to_elements(state: StateVector, epoch_mjd: float) -> OrbitalElements:
    """Osculating elements of a bound state (non-equatorial, non-circular)."""
    r, v = state.r, state.v
    rho = float(np.linalg.norm(r))
    energy = specific_energy(r, v)
    if energy >= 0.0:
        raise KeplerError("state is not bound")
    a = -0.5 / energy
    h = np.cross(r, v)
    hn = float(np.linalg.norm(h))
    evec = np.cross(v, h) - r / rho
    e = float(np.linalg.norm(evec))
    inc = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    node = np.array([-h[1], h[0], 0.0])
    nn = float(np.linalg.norm(node))
    raan = math.atan2(node[1], node[0])
    argp = math.atan2(np.dot(np.cross(node, evec), h) / hn, np.dot(node, evec))
    nu = math.atan2(np.dot(np.cross(evec, r), h) / hn, np.dot(evec, r))
    if nn == 0.0 or e == 0.0:
        raise KeplerError("elements are singular for circular or equatorial orbits")
    ecc = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(nu / 2), math.sqrt(1.0 + e) * math.cos(nu / 2))
    m = ecc - e * math.sin(ecc)
    return OrbitalElements(a, e, inc, raan, argp, m, epoch_mjd)


def with_epoch(elements: OrbitalElements, epoch_mjd: float) -> OrbitalElements:
    """Same orbit with the mean anomaly re-referenced to ``epoch_mjd``."""
    m = elements.m0 + elements.mean_motion * mjd_to_tu(epoch_mjd, elements.epoch)
    return replace(elements, m0=wrap_angle(m), epoch=epoch_mjd)
