import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpstab.bohm import closed_form_product
from wpstab.errors import DomainError, IntegrabilityError
from wpstab.geometry import BaseGeometry, FibreDescriptor, FibreEigentensor, Perturbation, SolitonData, WarpedProduct
from wpstab.perturbations import fibre_tt, ghp_variation, phi1, phi3, ricci_variation
from wpstab.stability import (
    Verdict,
    ballooning_limit_integral,
    cone_amplitudes,
    cone_quadratic_form,
    laplacian_coefficient,
    limiting_integral_I,
    rayleigh,
    rdp1_evaluate,
    sin_power_integral,
    theorem1_closed_form,
    theorem1_coefficient,
    theorem2_integral,
    theorem3_check,
)

ADMISSIBLE = [(p, q) for p in range(2, 7) for q in range(2, 7) if p + q + 1 <= 9]


# --------------------------------------------------------------------------- two routes to Q


def _cases(solve, n):
    s2 = solve(2, 2, 2, n)
    wp2 = s2.warped_product()
    wp3 = solve(2, 2, 3, n).warped_product()
    return [
        (wp2, ricci_variation(wp2)),
        (wp2, phi1(s2).to_perturbation()),
        (wp2, phi3(s2).to_perturbation()),
        (wp3, ghp_variation(wp3)),
    ]


@pytest.mark.parametrize("n,limit", [(4001, 1.0), (8001, 0.25)])
def test_action_route_agrees_with_lemmas(solve, n, limit):
    for wp, h in _cases(solve, n):
        r = rayleigh(wp, h)
        assert r.gap_pct < limit, (h.name, r.gap_pct)


def test_action_route_refuses_eigentensor_parts(solve):
    from wpstab.stability import eh_quadratic_form

    wp = solve(2, 4, 1).warped_product(FibreDescriptor.einstein_product((2, 2), 3.0))
    with pytest.raises(DomainError):
        eh_quadratic_form(wp, fibre_tt(wp))


# --------------------------------------------------------------------------- verdict gating


def test_verdicts_follow_the_gates(solve):
    s = solve(2, 2, 2)
    wp = s.warped_product()
    ric = rayleigh(wp, ricci_variation(wp))
    assert ric.gates == {"div": True, "ortho": True, "trace": False}
    assert ric.verdict_rf is Verdict.UNSTABLE and ric.verdict_bh is Verdict.INCONCLUSIVE
    # Phi_1 is not orthogonal to Ric, so neither criterion may fire
    r1 = rayleigh(wp, phi1(s).to_perturbation())
    assert not r1.gates["ortho"] and r1.verdict_rf is Verdict.INCONCLUSIVE
    g = rayleigh(wp, Perturbation.metric(wp.grid))
    assert g.verdict_rf is Verdict.INCONCLUSIVE and g.verdict_bh is Verdict.INCONCLUSIVE
    assert ric.threshold_rf == -2 * wp.lam and ric.threshold_bh == -(9 - wp.dim) * wp.lam / 4


def test_ghp_on_product_branch_is_unstable_for_both(solve):
    wp = solve(2, 2, 3).warped_product()
    r = rayleigh(wp, ghp_variation(wp))
    assert r.Q > 0 and all(r.gates.values())
    assert r.verdict_rf is Verdict.UNSTABLE and r.verdict_bh is Verdict.UNSTABLE


def test_report_serialises():
    wp = closed_form_product(2, 2, 801).warped_product()
    d = rayleigh(wp, ghp_variation(wp)).to_dict()
    assert d["verdict_rf"] in ("unstable", "inconclusive") and isinstance(d["gates"], dict)


def test_rayleigh_refuses_zero_perturbation():
    wp = closed_form_product(2, 2, 201).warped_product()
    z = np.zeros(201)
    with pytest.raises(IntegrabilityError):
        rayleigh(wp, Perturbation(wp.grid, z, z, z))


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=-1e3, max_value=1e3).filter(lambda c: abs(c) > 1e-3))
def test_rayleigh_is_scale_invariant(c):
    wp = closed_form_product(2, 3, 401).warped_product()
    h = ghp_variation(wp)
    r0 = rayleigh(wp, h, eh_route=False)
    r1 = rayleigh(wp, h.scaled(c), eh_route=False)
    assert r1.rayleigh == pytest.approx(r0.rayleigh, rel=1e-12, abs=1e-12)


# --------------------------------------------------------------------------- Theorems 1 and 2


def test_theorem1_coefficients_exact():
    assert theorem1_coefficient(3, 2) == Fraction(25, 18)
    assert theorem1_coefficient(3, 3) == 0
    assert isinstance(theorem1_coefficient(3, 3), Fraction)
    for n in range(4, 11):
        for m in range(2, 13 - n):
            assert theorem1_coefficient(n, m) < 0, (n, m)
    # m^3 n + 2m^2 n^2 + 2m^2 + m n^3 - 4m n^2 + 4mn - 4n^3 + 6n^2 at (m, n) = (2, 3)
    assert laplacian_coefficient(2, 3) == Fraction(24 + 72 + 8 + 54 - 72 + 24 - 108 + 54, 18)


@pytest.mark.parametrize("p,q,alpha", [(2, 2, 3), (3, 2, 3)])
def test_theorem1_closed_form_matches_direct(solve, p, q, alpha):
    wp = solve(p, q, alpha).warped_product()
    d = theorem1_closed_form(wp)
    r = rayleigh(wp, ghp_variation(wp), eh_route=False)
    assert abs(d.Q) > 1.0
    assert r.Q == pytest.approx(d.Q, rel=1e-6)


def test_theorem1_refuses_sphere_topology(solve):
    with pytest.raises(IntegrabilityError):
        theorem1_closed_form(solve(2, 2, 2).warped_product())


def test_theorem2_matches_rayleigh(solve):
    wp = solve(2, 4, 3).warped_product(FibreDescriptor.einstein_product((2, 2), 3.0))
    h = fibre_tt(wp)
    r = rayleigh(wp, h)
    d = theorem2_integral(wp, h.sigma)
    assert r.Q == pytest.approx(d.Q, rel=1e-8)
    assert r.norm_sq == pytest.approx(d.norm_sq, rel=1e-10)
    assert d.bound_applies and d.bound_holds
    assert r.verdict_rf is Verdict.UNSTABLE


def test_theorem2_vanishes_for_constant_warping(solve):
    wp = solve(2, 4, 1).warped_product(FibreDescriptor.einstein_product((2, 2), 3.0))
    d = theorem2_integral(wp, fibre_tt(wp).sigma)
    assert abs(d.Q) < 1e-10 * d.norm_sq


def test_theorem2_bound_needs_k_below_mu():
    wp = closed_form_product(2, 4, 401).warped_product(FibreDescriptor.einstein_product((2, 2), 3.0))
    sig = FibreEigentensor(k=10.0, norm_sq=1.0, mean_sq=1.0)
    d = theorem2_integral(wp, sig)
    assert not d.bound_applies and not d.bound_holds


# --------------------------------------------------------------------------- limiting integrals


def test_wallis_values():
    assert sin_power_integral(0).value == math.pi
    assert sin_power_integral(1).value == 2.0
    assert sin_power_integral(4).coefficient == Fraction(3, 8) and sin_power_integral(4).unit == "pi"
    assert sin_power_integral(5).coefficient == Fraction(8, 15) and sin_power_integral(5).unit == "2"
    from scipy.integrate import quad

    for n in range(9):
        assert sin_power_integral(n).value == pytest.approx(quad(lambda t: math.sin(t) ** n, 0, math.pi)[0], rel=1e-13)
    with pytest.raises(DomainError):
        sin_power_integral(-1)


@pytest.mark.parametrize("p,q", ADMISSIBLE)
def test_limiting_integral(p, q):
    li = limiting_integral_I(p, q)
    assert abs(li.quadrature - li.closed_form) < 1e-8
    assert li.quadrature > 0
    # the same number comes out of the operator lemmas on the cone
    assert cone_quadratic_form(p, q, "phi3") == pytest.approx(li.quadrature, rel=1e-10)


def test_limiting_integral_value():
    assert abs(limiting_integral_I(2, 2).quadrature - 8 * math.pi / 3) < 1e-8
    with pytest.raises(DomainError):
        limiting_integral_I(1, 3)


@pytest.mark.parametrize("p,q", ADMISSIBLE)
def test_ballooning_limit_matches_derived_closed_form(p, q):
    s = p + q
    A, B = cone_amplitudes(p, q)
    expected = p * q * s * (6 - s) * A**p * B**q * sin_power_integral(s - 4).value / (s - 2)
    assert ballooning_limit_integral(p, q) == pytest.approx(expected, rel=1e-10, abs=1e-12)
    assert ballooning_limit_integral(p, q, 3.0) == pytest.approx(9 * expected, rel=1e-10, abs=1e-12)


# --------------------------------------------------------------------------- solitons and families


def _soliton(phi, dphi, ddphi, n=2001, lam=2.0):
    base = BaseGeometry.round_sphere(2, n)
    return SolitonData(base, phi, lam, dphi, ddphi)


def test_trivial_soliton_ratio():
    z = np.zeros(2001)
    r = rdp1_evaluate(_soliton(z + 0.5, z, z), FibreDescriptor.round_sphere(3, mu=2.0), 1.0)
    assert abs(r.ratio_h2 - 2.0) < 1e-10
    assert abs(r.direct_ratio_h2 - 2.0) < 1e-10
    assert r.value_h1 / r.norm_h1 == pytest.approx(2.0, rel=1e-12)
    assert r.h1_destabilising


def test_synthetic_soliton_fails_inequality():
    t = BaseGeometry.round_sphere(2, 2001).grid.nodes
    A = 4.0
    r = rdp1_evaluate(_soliton(A * np.cos(t), -A * np.sin(t), -A * np.cos(t)),
                      FibreDescriptor.round_sphere(3, mu=2.0), 1.0)
    assert not r.inequality_holds and not r.h1_destabilising
    assert r.direct_ratio_h2 is None
    for A in (1.0, 0.2):
        r = rdp1_evaluate(_soliton(A * np.cos(t), -A * np.sin(t), -A * np.cos(t)),
                          FibreDescriptor.round_sphere(3, mu=2.0), 1.0)
        assert r.inequality_holds and r.h1_destabilising


def _family(fm, lam=2.0, ms=range(2, 11), n=2001):
    base = BaseGeometry.round_sphere(2, n)
    z = np.zeros(n)
    out = []
    for m in ms:
        wp = WarpedProduct(base, z + fm(m), FibreDescriptor.round_sphere(m, mu=lam), lam, fdot=z, fddot=z)
        out.append((wp, ricci_variation(wp)))
    return out


def test_theorem3_trivial_family():
    res = theorem3_check(_family(lambda m: 1.0))
    assert max(abs(r["deviation"]) for r in res["rows"]) < 1e-10
    assert [r["m"] for r in res["rows"]] == list(range(2, 11))


def test_theorem3_synthetic_family():
    lam, n = 2.0, 3
    fm = lambda m: 1.0 + 0.3 / m  # noqa: E731
    res = theorem3_check(_family(fm, lam))
    for r in res["rows"]:
        m = r["m"]
        exact = (lam / fm(m) ** 2 - lam) * n / (m + n)
        assert r["deviation"] == pytest.approx(exact, rel=1e-4)
    assert res["monotone"]
    assert res["decay_exponent"] < -1.0


def test_theorem3_single_member():
    res = theorem3_check(_family(lambda m: 1.2, ms=[4]))
    assert np.isfinite(res["rows"][0]["deviation"]) and res["monotone"] is None
