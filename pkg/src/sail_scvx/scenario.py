"""Scenario files.

Line-based ``key = value`` text with ``#`` comments.  Keys are
case-sensitive.  Bodies are either built-in names or inline element groups::

    body.ceres.a = 2.77
    body.ceres.e = 0.0758
    ...              # i, raan, argp, M (rad) and epoch (MJD) likewise

An inline group with a built-in's name replaces the built-in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .ephemeris import BODIES, OrbitalElements
from .scp import TIME_UNITS, Mission, ScpConfig
from .transcription import SCHEMES, TRUST_POLICIES, TrustRegionConfig, Weights

ELEMENT_KEYS = ("a", "e", "i", "raan", "argp", "M", "epoch")
REQUIRED = ("departure_body", "target_body", "t0")
DEFAULT_REINTEGRATION_TOL = 1e-5  # AU, position error at arrival


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = "" if line is None else f"line {line}" + ("" if column is None else f", column {column}") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


def _float(v):
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("not a finite number")
    return x


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(sorted(options))}")
        return v

    return conv


# key -> converter; every key except REQUIRED has a default
KEYS = {
    "departure_body": str,
    "target_body": str,
    "t0": _float,
    "tof_guess": _float,
    "beta": _float,
    "N": int,
    "w_dt": _float,
    "w_u": _float,
    "w_av": _float,
    "eta_u_max": _float,
    "eta_dt_max": _float,
    "eta_u_start": _float,
    "trust_policy": _choice(TRUST_POLICIES),
    "shrink_factor": _float,
    "eps_u": _float,
    "eps_dt": _float,
    "i_max": int,
    "av_accept": _float,
    "escalate": _bool,
    "time_unit": _choice(TIME_UNITS),
    "scheme": _choice(SCHEMES),
    "reintegration_tol": _float,
}


@dataclass(frozen=True)
class Scenario:
    departure_body: str
    target_body: str
    departure: OrbitalElements
    target: OrbitalElements
    t0_mjd: float
    tof_guess_days: float
    beta: float
    config: ScpConfig = field(default_factory=ScpConfig)
    reintegration_tol: float = DEFAULT_REINTEGRATION_TOL

    def mission(self) -> Mission:
        return Mission(self.departure, self.target, self.t0_mjd, self.beta, self.departure_body, self.target_body)

    def with_guess(self, tof_guess_days: float) -> "Scenario":
        return replace(self, tof_guess_days=tof_guess_days,
                       config=replace(self.config, tof_guess_days=tof_guess_days))


def _resolve(name: str, inline: dict[str, OrbitalElements]) -> OrbitalElements:
    if name in inline:
        return inline[name]
    if name.lower() in BODIES:
        return BODIES[name.lower()]
    raise ScenarioError(f"unknown body {name!r} (built-ins: {', '.join(sorted(BODIES))}; or define body.{name}.*)")


def parse_scenario(text: str) -> Scenario:
    values: dict[str, object] = {}
    elems: dict[str, dict[str, float]] = {}
    first_line: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError("expected 'key = value'", lineno, len(raw) - len(raw.lstrip()) + 1)
        key, val = (p.strip() for p in line.split("=", 1))
        eq = raw.index("=")
        col = eq + 2 + len(raw[eq + 1 :]) - len(raw[eq + 1 :].lstrip())  # 1-based start of the value
        if not key or not val:
            raise ScenarioError("expected 'key = value'", lineno, 1 if not key else col)
        if key.startswith("body."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1] or parts[2] not in ELEMENT_KEYS:
                raise ScenarioError(f"bad body key {key!r}; expected body.<name>.<{'|'.join(ELEMENT_KEYS)}>", lineno)
            try:
                elems.setdefault(parts[1], {})[parts[2]] = _float(val)
            except ValueError as exc:
                raise ScenarioError(f"{key}: {exc}", lineno, col) from None
            first_line.setdefault(parts[1], lineno)
            continue
        if key not in KEYS:
            raise ScenarioError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ScenarioError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = KEYS[key](val)
        except ValueError as exc:
            raise ScenarioError(f"{key}: {exc}", lineno, col) from None

    for key in REQUIRED:
        if key not in values:
            raise ScenarioError(f"missing required key: {key}")

    inline = {}
    for name, group in elems.items():
        missing = [k for k in ELEMENT_KEYS if k not in group]
        if missing:
            raise ScenarioError(f"body {name!r} is missing {', '.join(missing)}", first_line[name])
        try:
            inline[name] = OrbitalElements(group["a"], group["e"], group["i"], group["raan"], group["argp"],
                                           group["M"], group["epoch"])
        except ValueError as exc:
            raise ScenarioError(f"body {name!r}: {exc}", first_line[name]) from None

    d = ScpConfig()
    w = Weights(values.get("w_dt", d.weights.w_dt), values.get("w_u", d.weights.w_u),
                values.get("w_av", d.weights.w_av))
    tof = values.get("tof_guess", d.tof_guess_days)
    beta = values.get("beta", 0.0843)
    if not beta > 0.0:
        raise ScenarioError(f"beta: must be positive, got {beta}")
    for key in ("w_dt", "w_u", "w_av"):
        if key in values and not values[key] >= 0.0:
            raise ScenarioError(f"{key}: must be nonnegative")
    try:
        t = d.trust
        trust = TrustRegionConfig(
            eta_u_max=values.get("eta_u_max", t.eta_u_max),
            eta_dt_max_days=values.get("eta_dt_max", t.eta_dt_max_days),
            policy=values.get("trust_policy", t.policy),
            shrink_factor=values.get("shrink_factor", t.shrink_factor),
            eta_u_start=values.get("eta_u_start", min(t.eta_u_start, values.get("eta_u_max", t.eta_u_max))),
        )
        config = ScpConfig(
            n_nodes=values.get("N", d.n_nodes),
            tof_guess_days=tof,
            weights=w,
            trust=trust,
            eps_u=values.get("eps_u", d.eps_u),
            eps_dt_days=values.get("eps_dt", d.eps_dt_days),
            i_max=values.get("i_max", d.i_max),
            av_accept_threshold=values.get("av_accept", d.av_accept_threshold),
            escalate=values.get("escalate", d.escalate),
            time_unit=values.get("time_unit", d.time_unit),
            scheme=values.get("scheme", d.scheme),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    tol = values.get("reintegration_tol", DEFAULT_REINTEGRATION_TOL)
    if not tol > 0.0:
        raise ScenarioError("reintegration_tol: must be positive")

    dep, tgt = str(values["departure_body"]), str(values["target_body"])
    return Scenario(
        departure_body=dep,
        target_body=tgt,
        departure=_resolve(dep, inline),
        target=_resolve(tgt, inline),
        t0_mjd=float(values["t0"]),
        tof_guess_days=tof,
        beta=beta,
        config=config,
        reintegration_tol=tol,
    )


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
