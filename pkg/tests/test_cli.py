import csv
import math

import pytest

from sail_scvx import cli
from sail_scvx.ephemeris import BODIES
from sail_scvx.scenario import ScenarioError, parse_scenario

SMALL = """\
departure_body = earth
target_body = venus
t0 = 58782
tof_guess = 300
N = 20
reintegration_tol = 0.1
"""


@pytest.fixture(scope="module")
def small_scn(tmp_path_factory):
    p = tmp_path_factory.mktemp("scn") / "small.scn"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def solved(tmp_path_factory, small_scn):
    out = tmp_path_factory.mktemp("solve")
    assert cli.main(["solve", str(small_scn), "-o", str(out)]) == 0
    return out


def kv(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def test_shipped_mars_matches_parameter_table():
    sc = parse_scenario(cli.shipped_scenario("mars"))
    assert (sc.departure_body, sc.target_body) == ("earth", "mars")
    assert sc.t0_mjd == 55840 and sc.tof_guess_days == 300 and sc.beta == 0.0843
    c = sc.config
    assert c.n_nodes == 100 and c.eps_u == 1e-5 and c.eps_dt_days == 1e-3
    assert (c.weights.w_dt, c.weights.w_u, c.weights.w_av) == (0.1, 0.01, 1e7)
    assert (c.trust.eta_u_max, c.trust.eta_dt_max_days) == (0.5, 10)
    assert sc.departure == BODIES["earth"] and sc.target == BODIES["mars"]


@pytest.mark.parametrize("name,t0", [("apophis", 56258), ("venus", 58782)])
def test_shipped_scenarios_parse(name, t0):
    sc = parse_scenario(cli.shipped_scenario(name))
    assert sc.t0_mjd == t0 and sc.target_body == name


def test_empty_file():
    with pytest.raises(ScenarioError, match="missing required key: departure_body"):
        parse_scenario("")


def test_negative_beta():
    with pytest.raises(ScenarioError, match="beta"):
        parse_scenario("departure_body = earth\ntarget_body = mars\nt0 = 55840\nbeta = -1\n")


def test_unknown_key_reports_line():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario("departure_body = earth\n\n# note\nwarp = 9\n")
    assert exc.value.line == 4 and "warp" in str(exc.value)


def test_bad_value_reports_column():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario("t0 = soon\n")
    assert exc.value.line == 1 and exc.value.column == 6


def test_duplicate_key():
    with pytest.raises(ScenarioError, match="duplicate"):
        parse_scenario("t0 = 1\nt0 = 2\n")


def test_inline_body():
    text = SMALL + "".join(f"body.ceres.{k} = {v}\n" for k, v in
                           dict(a=2.77, e=0.0758, i=0.185, raan=1.4, argp=1.28, M=1.0, epoch=58000).items())
    sc = parse_scenario(text.replace("target_body = venus", "target_body = ceres"))
    assert sc.target.a == 2.77 and sc.target.epoch == 58000
    with pytest.raises(ScenarioError, match="missing"):
        parse_scenario(SMALL + "body.ceres.a = 2.77\n")
    with pytest.raises(ScenarioError, match="e="):
        parse_scenario(SMALL + "".join(f"body.x.{k} = {v}\n" for k, v in
                                       dict(a=1, e=1.5, i=0, raan=0, argp=0, M=0, epoch=0).items()))


def test_unknown_body():
    with pytest.raises(ScenarioError, match="unknown body"):
        parse_scenario(SMALL.replace("venus", "vulcan"))


def test_dates():
    assert cli.mjd_to_date(55840) == "10-06-2011"
    assert cli.mjd_to_date(58782) == "10-26-2019"
    assert cli.mjd_to_date(56258) == "11-27-2012"


def test_number_format():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.fmt(3) == "3" and float(cli.fmt(math.pi)) == math.pi


def test_solve_outputs(solved):
    with open(solved / "trajectory.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == cli.TRAJECTORY_COLUMNS and len(rows) == 21
    with open(solved / "history.csv", newline="") as fh:
        hist = list(csv.reader(fh))
    assert hist[0] == cli.HISTORY_COLUMNS
    assert b"\r" not in (solved / "trajectory.csv").read_bytes()
    rep = kv(solved / "report.txt")
    assert rep["status"] == "Converged" and int(rep["iterations"]) == len(hist) - 1
    assert rep["departure_date"] == "10-26-2019"
    assert float(rep["max_virtual_control"]) <= 1e-8
    assert float(rep["rendezvous_mjd"]) == pytest.approx(58782 + float(rep["tof_days"]), abs=1e-9)


def test_verify_reproduces_solve(solved):
    assert cli.main(["verify", str(solved)]) == 0
    ver = kv(solved / "verify.txt")
    rep = kv(solved / "report.txt")
    # re-parsed CSV reintegrates to the in-memory result
    assert abs(float(ver["reintegration_pos_err"]) - float(rep["rendezvous_error_au"])) <= 1e-12
    assert float(ver["discrete_defect_pos"]) <= 1e-6


def test_verify_flags_tampered_state(solved, tmp_path):
    for f in ("scenario.scn", "report.txt", "history.csv"):
        (tmp_path / f).write_bytes((solved / f).read_bytes())
    with open(solved / "trajectory.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    rows[10][2] = repr(float(rows[10][2]) + 1e-3)
    with open(tmp_path / "trajectory.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert cli.main(["verify", str(tmp_path)]) == 3


def test_verify_empty_dir(tmp_path):
    assert cli.main(["verify", str(tmp_path)]) == 1


def test_solve_is_deterministic(solved, small_scn, tmp_path):
    assert cli.main(["solve", str(small_scn), "-o", str(tmp_path)]) == 0
    for f in ("trajectory.csv",):
        assert (tmp_path / f).read_bytes() == (solved / f).read_bytes()
    a = [r[:-1] for r in csv.reader(open(solved / "history.csv"))]  # wall time differs
    b = [r[:-1] for r in csv.reader(open(tmp_path / "history.csv"))]
    assert a == b


def test_solve_not_converged(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text(SMALL + "i_max = 2\n")
    assert cli.main(["solve", str(p), "-o", str(tmp_path / "out")]) == 2


def test_solve_bad_scenario(tmp_path):
    assert cli.main(["solve", str(tmp_path / "missing.scn"), "-o", str(tmp_path)]) == 1
    p = tmp_path / "bad.scn"
    p.write_text("beta = -1\n")
    assert cli.main(["solve", str(p), "-o", str(tmp_path)]) == 1


def test_sweep_usage_errors(tmp_path, small_scn, monkeypatch):
    assert cli.main(["sweep", str(small_scn), "--guesses", "300", "-o", str(tmp_path)]) == 1
    assert cli.main(["sweep", str(small_scn), "--guesses", "300,abc", "-o", str(tmp_path)]) == 1
    monkeypatch.setenv("SAIL_SCVX_THREADS", "zero")
    assert cli.main(["sweep", str(small_scn), "--guesses", "290,300", "-o", str(tmp_path)]) == 1


def test_sweep_two_guesses(tmp_path, small_scn, monkeypatch):
    monkeypatch.setenv("SAIL_SCVX_THREADS", "2")
    assert cli.main(["sweep", str(small_scn), "--guesses", "290,300", "-o", str(tmp_path)]) == 0
    with open(tmp_path / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["guess_days"] for r in rows] == ["290", "300"]
    assert all(r["converged"] == "true" for r in rows)
    tofs = [float(r["tof_days"]) for r in rows]
    assert max(tofs) - min(tofs) <= 0.1
    assert (tmp_path / "guess_290" / "report.txt").exists()


def test_argparse_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve"])
    assert exc.value.code == 1
