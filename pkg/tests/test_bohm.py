import json
import math

import numpy as np
import pytest

from wpstab.bohm import (
    BohmParams,
    BohmTopology,
    ConeMetric,
    certify,
    closed_form_product,
    closed_form_residuals,
    closed_form_round,
    cone_convergence_report,
    einstein_residuals,
    pole_taylor,
    product_radius,
    solve_bohm,
)
from wpstab.errors import DomainError, NotFoundError
from wpstab.io import IntegrityError, load_solution, save_solution, solution_filename

PQ = [(2, 2), (2, 3), (3, 3)]


@pytest.mark.parametrize("p,q", PQ + [(3, 2), (2, 4), (4, 3)])
def test_closed_forms_solve_einstein_equations(p, q):
    for sol in (closed_form_round(p, q, 801), closed_form_product(p, q, 801)):
        for r in closed_form_residuals(sol):
            assert np.max(np.abs(r[1:-1])) < 1e-12


def test_closed_form_residuals_refuse_numerical_solutions(solve):
    with pytest.raises(DomainError):
        closed_form_residuals(solve(2, 2, 2))


def test_product_closed_form_is_not_the_printed_frequency():
    # a = r sin(t / r) solves EE1; a = sin(r t) / r does not
    p, q = 2, 3
    r = product_radius(p, q)
    t = np.linspace(0.05, 1.0, 50)
    b = math.sqrt((q - 1) / (p + q)) * np.ones_like(t)
    z = 0 * t
    good = einstein_residuals(r * np.sin(t / r), np.cos(t / r), -np.sin(t / r) / r, b, z, z, p, q)
    bad = einstein_residuals(np.sin(r * t) / r, np.cos(r * t), -r * np.sin(r * t), b, z, z, p, q)
    assert max(np.max(np.abs(x)) for x in good) < 1e-13
    assert max(np.max(np.abs(x)) for x in bad) > 1e-2


def test_cone_amplitudes_solve_the_singular_limit():
    for p, q in PQ:
        c = ConeMetric(p, q)
        t = np.linspace(0.1, 3.0, 40)
        res = einstein_residuals(*c.profiles(t), p, q)
        assert max(np.max(np.abs(x)) for x in res) < 1e-10  # 1/sin^2 roundoff near the tips


@pytest.mark.parametrize("p,q", PQ)
def test_solver_recovers_closed_forms(solve, p, q):
    s0, s1 = solve(p, q, 0), solve(p, q, 1)
    assert s0.topology is BohmTopology.SPHERE and s1.topology is BohmTopology.PRODUCT
    assert np.max(np.abs(s0.a - np.sin(s0.t))) < 1e-8
    assert np.max(np.abs(s0.b - np.cos(s0.t))) < 1e-8
    ref = closed_form_product(p, q, len(s1.t))
    assert abs(s1.T - ref.T) < 1e-8
    assert np.max(np.abs(s1.a - ref.a)) < 1e-8
    assert np.max(np.abs(s1.b - ref.b)) < 1e-8


@pytest.mark.parametrize("p,q", PQ)
def test_solver_finds_a_nontrivial_branch(solve, p, q):
    s = solve(p, q, 2)
    assert s.topology is BohmTopology.SPHERE
    assert s.b0 < 0.5
    assert s.diagnostics["boundary_mismatch"] < 1e-6
    assert certify(s)["constraint_drift_max"] < 1e-7
    # regularity: a(0) = 0, a'(0) = 1 and the far pole closes b smoothly
    assert s.a[0] == 0.0 and abs(s.adot[0] - 1) < 1e-12
    assert abs(s.b[-1]) < 1e-12 and abs(s.bdot[-1] + 1) < 1e-8


def test_branches_alternate_and_approach_the_cone(solve):
    rows = cone_convergence_report([solve(2, 2, a) for a in range(4)])
    b0 = [solve(2, 2, a).b0 for a in range(4)]
    assert all(x > y for x, y in zip(b0, b0[1:]))
    assert [solve(2, 2, a).topology.value for a in range(4)] == ["sphere", "product", "sphere", "product"]
    dev = [r["deviation"] for r in rows]
    assert dev[3] < dev[1]


def test_missing_branch_raises_with_scan_report():
    with pytest.raises(NotFoundError) as exc:
        solve_bohm(BohmParams(2, 2, 40, n_points=201))
    assert exc.value.scan_report


@pytest.mark.parametrize("kw", [dict(p=1, q=2), dict(p=2, q=1), dict(p=2, q=2, alpha=-1),
                                dict(p=2, q=2, bracket=(0.5, 0.1))])
def test_params_validation(kw):
    with pytest.raises(DomainError):
        BohmParams(**kw)


def test_existence_range_flag():
    assert BohmParams(4, 4).in_existence_range
    assert not BohmParams(4, 5).in_existence_range


def test_pole_series_matches_equations():
    ser = pole_taylor(0.4, 2, 3)
    s = np.linspace(1e-3, 0.5 * ser.switch, 7)
    a, ad, add, b, bd, bdd = ser.eval(s)
    res = einstein_residuals(a, ad, add, b, bd, bdd, 2, 3)
    assert max(np.max(np.abs(x)) for x in res[:2]) < 1e-9


def test_solution_round_trip(solve, tmp_path):
    s = solve(2, 2, 2)
    path = save_solution(s, tmp_path / solution_filename(2, 2, 2))
    back = load_solution(path)
    assert back.digest() == s.digest()
    np.testing.assert_array_equal(back.a, s.a)
    np.testing.assert_array_equal(back.bdot, s.bdot)
    assert back.T == s.T and back.topology is s.topology


def test_corrupted_solution_is_detected(solve, tmp_path):
    path = save_solution(solve(2, 2, 1), tmp_path / "s.json")
    d = json.loads(path.read_text())
    d["a"][100] += 1e-9
    path.write_text(json.dumps(d))
    with pytest.raises(IntegrityError, match="digest"):
        load_solution(path)
    d["a"] = d["a"][:-1]
    path.write_text(json.dumps(d))
    with pytest.raises(IntegrityError):
        load_solution(path)
    path.write_text("{not json")
    with pytest.raises(IntegrityError):
        load_solution(path)


def test_solution_files_are_bit_identical(tmp_path):
    s1 = closed_form_round(2, 3, 201)
    s2 = closed_form_round(2, 3, 201)
    a = save_solution(s1, tmp_path / "a.json").read_bytes()
    b = save_solution(s2, tmp_path / "b.json").read_bytes()
    assert a == b
