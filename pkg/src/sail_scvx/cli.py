"""Command-line front end: ``sail-scvx solve | verify | sweep``.

Exit codes: 0 success, 1 usage / I/O / configuration error, 2 solve failed
(not converged or solver failure), 3 an acceptance bound was missed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import project_to_manifold, u_to_angles
from .ephemeris import tu_to_days, tu_to_mjd
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .scp import ConvergenceReport, ScpError, run
from .transcription import DiscretizationGrid, IterateSolution
from .verification import VerificationReport, reintegrate

log = logging.getLogger("sail_scvx")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_BOUND = 0, 1, 2, 3
SHIPPED = ("mars", "apophis", "venus")
MJD_EPOCH = _dt.datetime(1858, 11, 17)

TRAJECTORY_COLUMNS = ["k", "t_mjd", "rx_au", "ry_au", "rz_au", "vx_autu", "vy_autu", "vz_autu",
                      "u1", "u2", "u3", "alpha_deg", "delta_deg", "avx", "avy", "avz"]
HISTORY_COLUMNS = ["iter", "dt_days", "tof_days", "iter_err_u", "iter_err_dt_days", "max_av", "objective",
                   "solver_status", "solver_iters", "wall_ms"]
SWEEP_COLUMNS = ["guess_days", "converged", "tof_days", "iterations"]
DEFECT_TOL = 1e-6  # canonical; stored states must satisfy the nonlinear node update


class CliError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def mjd_to_date(mjd: float) -> str:
    """MM-DD-YYYY of the calendar day containing ``mjd``."""
    return (MJD_EPOCH + _dt.timedelta(days=float(mjd))).strftime("%m-%d-%Y")


def shipped_scenario(name: str) -> str:
    return resources.files("sail_scvx").joinpath("scenarios", f"{name}.scn").read_text(encoding="utf-8")


def read_scenario_arg(arg: str) -> tuple[Scenario, str]:
    """Scenario from a path, or from a shipped name (``mars`` / ``mars.scn``)."""
    p = Path(arg)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    elif p.stem in SHIPPED and p.parent == Path("."):
        text = shipped_scenario(p.stem)
    else:
        raise CliError(f"cannot read scenario {arg!r}")
    return parse_scenario(text), text


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _angles(u):
    try:
        return u_to_angles(u)
    except ValueError:
        # off-manifold (unconverged) controls: report the nearest attitude
        return u_to_angles(project_to_manifold(u))


def write_trajectory(path: Path, sol: IterateSolution, t0_mjd: float):
    alpha, delta = _angles(sol.u)
    rows = []
    for k in range(sol.n_nodes):
        rows.append([k, tu_to_mjd(sol.grid.times[k], t0_mjd), *sol.r[k], *sol.v[k], *sol.u[k],
                     math.degrees(alpha[k]), math.degrees(delta[k]), *sol.a_v[k]])
    _write_csv(path, TRAJECTORY_COLUMNS, rows)


def write_history(path: Path, report: ConvergenceReport):
    rows = [[h.iteration, h.dt_days, h.tof_days, h.iter_err_u, h.iter_err_dt_days, h.max_av, h.objective,
             h.solver_status, h.solver_iters, h.wall_ms] for h in report.history]
    _write_csv(path, HISTORY_COLUMNS, rows)


def read_trajectory(path: Path, dt: float) -> IterateSolution:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRAJECTORY_COLUMNS:
        raise CliError(f"{path}: unexpected header")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(TRAJECTORY_COLUMNS):
        raise CliError(f"{path}: malformed table")
    return IterateSolution(DiscretizationGrid(data.shape[0], dt), data[:, 2:5], data[:, 5:8], data[:, 8:11],
                           data[:, 13:16])


def _kv_lines(pairs) -> str:
    return "".join(f"{k} = {fmt(v) if not isinstance(v, str) else v}\n" for k, v in pairs)


def _read_kv(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _verify_solution(sc: Scenario, sol: IterateSolution) -> VerificationReport:
    m = sc.mission()
    return reintegrate(sol, m.departure_state(), sc.target, sc.t0_mjd, m.params, scheme=sc.config.scheme)


def solve_to_dir(sc: Scenario, text: str, out: Path):
    """Run one solve and write its files; returns (converged, solution, report)."""
    out.mkdir(parents=True, exist_ok=True)
    sol, report = run(sc.mission(), sc.config)
    (out / "scenario.scn").write_text(text, encoding="utf-8")
    write_trajectory(out / "trajectory.csv", sol, sc.t0_mjd)
    write_history(out / "history.csv", report)
    ver = _verify_solution(sc, sol)
    t_f = sol.grid.t_f
    (out / "report.txt").write_text(_kv_lines([
        ("status", report.status),
        ("iterations", report.iterations),
        ("departure_date", mjd_to_date(sc.t0_mjd)),
        ("tof_days", tu_to_days(sol.tof)),
        ("rendezvous_date", mjd_to_date(tu_to_mjd(t_f, sc.t0_mjd))),
        ("rendezvous_mjd", tu_to_mjd(t_f, sc.t0_mjd)),
        ("final_iteration_error", report.final_err_u),
        ("penultimate_iteration_error", report.penultimate_err_u),
        ("final_iteration_error_dt_days", report.final_err_dt_days),
        ("max_virtual_control", report.max_av),
        ("rendezvous_error_au", ver.reintegration_pos_err),
        ("rendezvous_error_vel", ver.reintegration_vel_err),
        ("wall_s", report.wall_s),
        ("node_spacing_tu", sol.grid.dt),
    ]), encoding="utf-8")
    return report.converged, sol, report


def cmd_solve(scenario_path: str, out_dir: str) -> int:
    try:
        sc, text = read_scenario_arg(scenario_path)
    except (CliError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        converged, sol, report = solve_to_dir(sc, text, Path(out_dir))
    except ScpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not converged:
        print(f"not converged after {report.iterations} iterations (Infeasible)", file=sys.stderr)
        return EXIT_FAILED
    print(f"converged in {report.iterations} iterations, TOF {tu_to_days(sol.tof):.4f} days")
    return EXIT_OK


def cmd_verify(solution_dir: str) -> int:
    d = Path(solution_dir)
    try:
        sc = load_scenario(d / "scenario.scn")
        kv = _read_kv(d / "report.txt")
        dt = float(kv["node_spacing_tu"])
        sol = read_trajectory(d / "trajectory.csv", dt)
        ver = _verify_solution(sc, sol)
    except (OSError, KeyError, ValueError, CliError, ScenarioError) as exc:
        print(f"error: cannot verify {solution_dir!r}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    (d / "verify.txt").write_text(_kv_lines([
        ("discrete_defect_pos", ver.discrete_defect_pos),
        ("discrete_defect_vel", ver.discrete_defect_vel),
        ("reintegration_pos_err", ver.reintegration_pos_err),
        ("reintegration_vel_err", ver.reintegration_vel_err),
        ("manifold_residual_max", ver.manifold_residual_max),
        ("tof_days", ver.tof_days),
        ("rendezvous_mjd", ver.rendezvous_mjd),
        ("acceptance_bound", sc.reintegration_tol),
        ("defect_bound", DEFECT_TOL),
    ]), encoding="utf-8")
    ok_pos = ver.reintegration_pos_err <= sc.reintegration_tol
    ok_defect = ver.discrete_defect_max <= DEFECT_TOL
    print(f"reintegration position error {ver.reintegration_pos_err:.3e} AU "
          f"({'within' if ok_pos else 'exceeds'} bound {sc.reintegration_tol:g}); "
          f"discrete defect {ver.discrete_defect_max:.3e} ({'within' if ok_defect else 'exceeds'} {DEFECT_TOL:g})")
    return EXIT_OK if ok_pos and ok_defect else EXIT_BOUND


def _sweep_member(args):
    text, guess, out = args
    sc = parse_scenario(text).with_guess(guess)
    try:
        converged, sol, report = solve_to_dir(sc, text, Path(out))
    except ScpError as exc:
        return guess, False, float("nan"), exc.iteration, str(exc)
    return guess, converged, tu_to_days(sol.tof), report.iterations, ""


def sweep_workers() -> int:
    env = os.environ.get("SAIL_SCVX_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError(f"SAIL_SCVX_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise CliError("SAIL_SCVX_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def cmd_sweep(scenario_path: str, guesses: list[float], out_dir: str, spread_tol: float = 0.1) -> int:
    try:
        if len(guesses) < 2:
            raise CliError("usage: sweep needs at least two guesses")
        if any(not g > 0 for g in guesses):
            raise CliError("guesses must be positive")
        sc, text = read_scenario_arg(scenario_path)
        workers = min(sweep_workers(), len(guesses))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    except (CliError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    jobs = [(text, g, str(out / f"guess_{fmt(g)}")) for g in guesses]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
               [[g, "true" if ok else "false", tof, its] for g, ok, tof, its, _ in results])
    failed = [(g, msg) for g, ok, _, _, msg in results if not ok]
    if failed:
        for g, msg in failed:
            print(f"error: guess {fmt(g)} days failed: {msg or 'not converged'}", file=sys.stderr)
        return EXIT_FAILED
    tofs = [r[2] for r in results]
    spread = max(tofs) - min(tofs)
    print(f"all {len(results)} guesses converged; TOF spread {spread:.4f} days")
    return EXIT_OK if spread <= spread_tol else EXIT_BOUND


def _parse_guesses(text: str) -> list[float]:
    try:
        return [float(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise CliError(f"bad guess list {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def main(argv=None) -> int:
    p = _Parser(prog="sail-scvx", description="Solar-sail rendezvous by successive convexification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every SCP iteration")
    sub = p.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("solve", help="solve a scenario")
    s.add_argument("scenario")
    s.add_argument("-o", "--out", required=True)
    v = sub.add_parser("verify", help="reintegrate a solution directory")
    v.add_argument("dir")
    w = sub.add_parser("sweep", help="solve from several TOF guesses")
    w.add_argument("scenario")
    w.add_argument("--guesses", required=True, help="comma-separated days, e.g. 100,150,200")
    w.add_argument("-o", "--out", required=True)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    if args.cmd == "solve":
        return cmd_solve(args.scenario, args.out)
    if args.cmd == "verify":
        return cmd_verify(args.dir)
    try:
        guesses = _parse_guesses(args.guesses)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_sweep(args.scenario, guesses, args.out)


if __name__ == "__main__":
    sys.exit(main())
