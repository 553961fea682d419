import csv
import json
import math

import numpy as np
import pytest

from wpstab.cli import PERTURBATIONS, main


def run(argv, capsys=None):
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out = capsys.readouterr() if capsys else None
    return code, out


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_bohm_solve_round(tmp_path, capsys):
    code, out = run(["bohm", "solve", "--p", "2", "--q", "2", "--alpha", "0", "--grid", "1001",
                     "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = _csv(tmp_path / "bohm_p2_q2_a0.csv")
    t = np.array([float(r["t"]) for r in rows])
    a = np.array([float(r["a"]) for r in rows])
    assert len(t) == 1001 and np.max(np.abs(a - np.sin(t))) < 1e-8
    assert out.out.splitlines()[0].startswith("p,q,alpha,topology")


def test_bohm_solve_product_json(tmp_path, capsys):
    code, _ = run(["bohm", "solve", "--alpha", "1", "--grid", "1001", "--format", "json", "--out", str(tmp_path)],
                  capsys)
    assert code == 0
    d = json.loads((tmp_path / "bohm_p2_q2_a1.json").read_text())
    assert d["topology"] == "product"
    assert abs(d["T"] - math.pi * math.sqrt(0.5)) < 1e-8
    assert max(abs(b - 0.5) for b in d["b"]) < 1e-8


@pytest.mark.parametrize("argv", [
    ["bohm", "solve", "--alpha", "-1"],
    ["bohm", "solve", "--p", "1"],
    ["bohm", "solve", "--grid", "8"],
    ["bohm", "solve", "--tol", "0"],
    ["stability", "--perturbation", "nope"],
    ["stability", "--bogus"],
    ["limit-tables", "--max-total", "x"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    code, out = run(argv + ["--out", str(tmp_path)] if argv else argv, capsys)
    assert code == 2


def test_unknown_perturbation_lists_valid_names(tmp_path, capsys):
    code, out = run(["stability", "--perturbation", "nope", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert all(name in out.err for name in PERTURBATIONS)


def test_missing_branch_exit_1(tmp_path, capsys):
    code, out = run(["bohm", "solve", "--alpha", "40", "--grid", "201", "--out", str(tmp_path)], capsys)
    assert code == 1
    assert "not found" in out.err and "b0,event,value" in out.err


def test_stability_ghp_product(tmp_path, capsys):
    code, out = run(["stability", "--p", "2", "--q", "2", "--alpha", "1", "--perturbation", "ghp",
                     "--out", str(tmp_path)], capsys)
    assert code == 0
    row = _csv(tmp_path / "stability_p2_q2_a1.csv")[0]
    assert row["verdict_rf"] == "unstable" and row["verdict_bh"] == "unstable"
    assert float(row["Q"]) >= -1e-8
    assert list(row) == ["p", "q", "alpha", "perturbation", "Q", "norm_sq", "rayleigh", "threshold_rf",
                         "threshold_bh", "verdict_rf", "verdict_bh", "gap_pct"]
    rep = json.loads((tmp_path / "stability_p2_q2_a1_ghp.json").read_text())
    assert rep["gates"] == {"div": True, "ortho": True, "trace": True}


def test_stability_cone_ballooning(tmp_path, capsys):
    code, _ = run(["stability", "--cone", "--perturbation", "ballooning", "phi3", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = _csv(tmp_path / "stability_p2_q2_cone.csv")
    assert [r["perturbation"] for r in rows] == ["ballooning", "phi3"]
    assert all(r["verdict_rf"] == "inconclusive" and r["verdict_bh"] == "inconclusive" for r in rows)
    assert float(rows[1]["Q"]) == pytest.approx(8 * math.pi / 3, rel=1e-10)
    code, _ = run(["stability", "--cone", "--perturbation", "ghp", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_stability_ballooning_on_smooth_metric_fails(tmp_path, capsys):
    code, out = run(["stability", "--alpha", "2", "--grid", "1001", "--perturbation", "ballooning",
                     "--out", str(tmp_path)], capsys)
    assert code == 1 and "--cone" in out.err


def test_stability_fibre_tt(tmp_path, capsys):
    base = ["stability", "--p", "2", "--q", "4", "--alpha", "3", "--perturbation", "fibre-tt", "--out", str(tmp_path)]
    code, _ = run(base, capsys)
    assert code == 2
    code, _ = run(base + ["--fibre-factors", "2,2"], capsys)
    assert code == 0
    assert _csv(tmp_path / "stability_p2_q4_a3.csv")[0]["verdict_rf"] == "unstable"
    code, _ = run(base + ["--fibre-factors", "2,3"], capsys)
    assert code == 1


def test_stability_tracefree(tmp_path, capsys):
    code, _ = run(["stability", "--alpha", "1", "--grid", "2001", "--perturbation", "ricci", "--tracefree",
                   "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "stability_p2_q2_a1_ricci.json").read_text())
    assert rep["gates"]["trace"] and rep["trace_max"] < 1e-8


def test_limit_tables(tmp_path, capsys):
    code, _ = run(["limit-tables", "--out", str(tmp_path)], capsys)
    assert code == 0
    coeff = {(r["n"], r["m"]): r for r in _csv(tmp_path / "theorem1_coefficients.csv")}
    assert coeff[("3", "2")]["coefficient"] == "25/18"
    assert coeff[("3", "3")]["coefficient"] == "0"
    lim = {(r["p"], r["q"]): r for r in _csv(tmp_path / "limiting_integral.csv")}
    assert abs(float(lim[("2", "2")]["I_quadrature"]) - 8 * math.pi / 3) < 1e-8
    assert all(float(r["I_quadrature"]) > 0 for r in lim.values())
    assert len(lim) == sum(1 for p in range(2, 9) for q in range(2, 9) if p + q + 1 <= 9)
    w = {r["n"]: r for r in _csv(tmp_path / "wallis.csv")}
    assert w["4"]["coefficient"] == "3/8" and w["4"]["unit"] == "pi"


def test_limit_tables_empty_range(tmp_path, capsys):
    code, _ = run(["limit-tables", "--max-total", "4", "--out", str(tmp_path)], capsys)
    assert code == 0
    for stem in ("theorem1_coefficients", "limiting_integral", "wallis"):
        lines = (tmp_path / f"{stem}.csv").read_text().splitlines()
        assert len(lines) == 1 and "," in lines[0]


def test_outputs_are_bit_identical(tmp_path, capsys):
    files = {}
    for k in ("a", "b"):
        out = tmp_path / k
        assert run(["limit-tables", "--plot", "--out", str(out)], capsys)[0] == 0
        assert run(["bohm", "solve", "--alpha", "2", "--grid", "1001", "--format", "json", "--plot",
                    "--out", str(out)], capsys)[0] == 0
        files[k] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert files["a"].keys() == files["b"].keys()
    assert any(name.endswith(".png") for name in files["a"])
    for name in files["a"]:
        assert files["a"][name] == files["b"][name], name


def test_output_directory_precedence(tmp_path, capsys, monkeypatch):
    env = tmp_path / "env"
    monkeypatch.setenv("WPSTAB_OUT", str(env))
    assert run(["limit-tables", "--max-total", "5"], capsys)[0] == 0
    assert (env / "wallis.csv").exists()
    flag = tmp_path / "flag"
    assert run(["limit-tables", "--max-total", "5", "--out", str(flag)], capsys)[0] == 0
    assert (flag / "wallis.csv").exists()


def test_verify_default_and_coarse(tmp_path, capsys):
    code, out = run(["verify", "--out", str(tmp_path)], capsys)
    assert code == 0
    s = json.loads((tmp_path / "verify_summary.json").read_text())
    assert s["ok"] and s["counts"]["fail"] == 0
    code, out = run(["verify", "--grid", "33", "--out", str(tmp_path)], capsys)
    assert code == 0
    s = json.loads((tmp_path / "verify_summary.json").read_text())
    orders = [c for c in s["checks"] if c["kind"] == "order"]
    assert orders and all(c["status"] == "pass" for c in orders)


def test_verify_corrupted_solution(tmp_path, capsys):
    assert run(["bohm", "solve", "--alpha", "1", "--grid", "1001", "--format", "json", "--out", str(tmp_path)],
               capsys)[0] == 0
    path = tmp_path / "bohm_p2_q2_a1.json"
    assert run(["verify", "--grid", "101", "--solution", str(path), "--out", str(tmp_path)], capsys)[0] == 0
    d = json.loads(path.read_text())
    d["b"][10] = 0.75
    path.write_text(json.dumps(d))
    code, out = run(["verify", "--grid", "101", "--solution", str(path), "--out", str(tmp_path)], capsys)
    assert code == 1
    s = json.loads((tmp_path / "verify_summary.json").read_text())
    bad = [c for c in s["checks"] if c["status"] == "fail"]
    assert len(bad) == 1 and "digest" in bad[0]["detail"]
