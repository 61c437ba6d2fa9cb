import csv
import json

import pytest

from acoe_lab.cli import main

SCHEDULE = "0.9,0.99,0.999,0.9999"


@pytest.fixture
def inst(tmp_path, instance_a_json):
    path = tmp_path / "a.json"
    path.write_text(json.dumps(instance_a_json))
    return path


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    root = tmp_path_factory.mktemp("solved")
    data = {
        "K": 10, "c_bar": 1, "h_breakpoints": [[None, -3], [0, 2]],
        "demand": {"support": [0, 1, 2], "probs": [0.3, 0.4, 0.3]},
        "lattice": {"x_min": -30, "x_max": 40, "step": 1},
    }
    inst = root / "a.json"
    inst.write_text(json.dumps(data))
    out = root / "avg"
    code = main(["solve-average", "--instance", str(inst), "--out", str(out), "--schedule", SCHEDULE, "--mc-paths", "20000"])
    return code, inst, out


def _read_json(p):
    return json.loads(p.read_text())


def test_solve_discounted(inst, tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["solve-discounted", "--instance", str(inst), "--alpha", "0.9", "--out", str(out)]) == 0
    pol = _read_json(out / "policy.json")
    assert pol["type"] == "sS" and pol["s"] < pol["S"]
    rep = _read_json(out / "report.json")
    assert rep["k_convexity"]["G_alpha"]["is_k_convex"]
    man = _read_json(out / "manifest.json")
    assert man["command"] == "solve-discounted" and str(out / "v_alpha.csv") in man["artifacts"]
    assert "(s, S)" in capsys.readouterr().out


def test_solve_average_artifacts(solved):
    code, _, out = solved
    assert code == 0
    rep = _read_json(out / "report.json")
    assert (rep["s_star"], rep["S_star"]) == (0.0, 3.0)
    assert rep["bounds_check"]["pass"]
    assert rep["alphas"] == [0.9, 0.99, 0.999, 0.9999]
    for name in ("u_tilde.csv", "H.csv", "u_alpha_3.csv", "G_alpha_0.csv", "manifest.json"):
        assert (out / name).exists()


def test_verify_passes(solved, capsys):
    _, inst, out = solved
    assert main(["verify", "--instance", str(inst), "--solution", str(out), "--mc-paths", "20000"]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and "PASS" in text
    assert _read_json(out / "verification.json")["all_pass"]


def test_verify_flat_tolerance_is_honest(solved):
    # the flat residual on the interior is ~0.11 at alpha_N = 0.9999
    _, inst, out = solved
    assert main(["verify", "--instance", str(inst), "--solution", str(out), "--mc-paths", "2000", "--acoe-tol", "5e-3"]) == 1


def test_verify_detects_corruption(solved, tmp_path):
    _, inst, out = solved
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in out.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    rows = list(csv.reader(open(bad / "u_tilde.csv")))
    for r in rows[1:]:
        if float(r[0]) == 10.0:
            r[1] = repr(float(r[1]) + 1.0)
    with open(bad / "u_tilde.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["verify", "--instance", str(inst), "--solution", str(bad), "--mc-paths", "2000"]) == 1
    checks = {c["check"]: c["pass"] for c in _read_json(bad / "verification.json")["checks"]}
    assert not checks["ACOE residual (scaled by (1-alpha_N)(1+u))"]


def test_simulate_golden_policy(solved, tmp_path):
    _, inst, out = solved
    sim = tmp_path / "sim"
    policy = out / "policy.json"
    policy.write_text(json.dumps({"type": "sS", "s": 0.0, "S": 3.0}))
    args = ["simulate", "--instance", str(inst), "--policy", str(policy), "--out", str(sim),
            "--replications", "20", "--horizon", "2000", "--burn-in", "200", "--seed", "42", "--trajectory"]
    assert main(args) == 0
    first = (sim / "estimate.json").read_bytes()
    assert main(args) == 0
    assert (sim / "estimate.json").read_bytes() == first
    est = json.loads(first)["average"]
    w = _read_json(out / "report.json")["w"]
    assert abs(est["mean"] - w) <= 3 * est["half_width_95"] + 0.05
    assert (sim / "trajectory.csv").exists()


def test_simulate_off_lattice_policy(inst, tmp_path):
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"type": "sS", "s": 0.5, "S": 2.0}))
    assert main(["simulate", "--instance", str(inst), "--policy", str(policy), "--out", str(tmp_path / "s")]) == 2


def test_alpha_one_rejected(inst, tmp_path, capsys):
    assert main(["solve-discounted", "--instance", str(inst), "--alpha", "1.0", "--out", str(tmp_path / "x")]) == 2
    assert "[0, 1)" in capsys.readouterr().err


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n \"K\": ,\n}")
    assert main(["solve-discounted", "--instance", str(bad), "--alpha", "0.5", "--out", str(tmp_path / "x")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["solve-discounted", "--instance", str(tmp_path / "nope.json"), "--alpha", "0.5"]) == 2


def test_schedule_below_threshold(tmp_path, instance_a_json, capsys):
    instance_a_json["h_breakpoints"] = [[None, -0.5], [0, 2]]  # alpha* = 0.5
    path = tmp_path / "i.json"
    path.write_text(json.dumps(instance_a_json))
    code = main(["solve-average", "--instance", str(path), "--schedule", "0.4,0.9", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "alpha* = 0.5" in capsys.readouterr().err


def test_single_alpha_warning(inst, tmp_path, caplog):
    code = main(["solve-average", "--instance", str(inst), "--schedule", "0.9", "--out", str(tmp_path / "o"), "--mc-paths", "2000"])
    assert code == 0
    assert "single discount factor" in caplog.text


def test_non_convergence_exit_code(inst, tmp_path):
    code = main(["solve-discounted", "--instance", str(inst), "--alpha", "0.999999", "--tol", "1e-12", "--out", str(tmp_path / "o")])
    assert code == 3


def test_sweep(inst, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--instance", str(inst), "--param", "K", "--values", "0,10", "--schedule", "0.9,0.99", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [float(r["K"]) for r in rows] == [0.0, 10.0]
    # with K = 0 the policy is base-stock: s = S
    assert float(rows[0]["s_star"]) == float(rows[0]["S_star"])


@pytest.mark.parametrize(
    "patch, invariant",
    [
        ({"demand": {"support": [0], "probs": [1.0]}}, "P(D>0) > 0"),
        ({"c_bar": 0}, "c_bar > 0"),
        ({"c_bar": -1}, "c_bar > 0"),
        ({"h_breakpoints": [[None, -1], [0, -2], [1, 3]]}, "convex"),
    ],
)
def test_invalid_instances_exit_2(tmp_path, instance_a_json, capsys, patch, invariant):
    instance_a_json.update(patch)
    path = tmp_path / "i.json"
    path.write_text(json.dumps(instance_a_json))
    assert main(["solve-discounted", "--instance", str(path), "--alpha", "0.5", "--out", str(tmp_path / "o")]) == 2
    assert invariant in capsys.readouterr().err
