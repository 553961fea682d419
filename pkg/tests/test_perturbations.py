import math

import numpy as np
import pytest

from wpstab.bohm import closed_form_product, closed_form_round
from wpstab.errors import DomainError, NotInvertibleError, PreconditionError, SingularPerturbationError
from wpstab.geometry import (
    BaseGeometry,
    FibreDescriptor,
    Perturbation,
    SolitonData,
    divergence,
    l2_integral,
    norm_sq,
    trace,
)
from wpstab.perturbations import (
    UVGPerturbation,
    ballooning,
    cone_limit_profiles,
    fibre_tt,
    ghp_variation,
    is_round_sphere,
    perturbation_bundle,
    phi1,
    phi2,
    phi3,
    phi3_coefficients,
    product_soliton_tensors,
    ricci_variation,
    tracefree_correct,
)


def test_ghp_is_pointwise_trace_free(solve):
    wp = solve(2, 2, 1).warped_product()
    h = ghp_variation(wp)
    assert np.max(np.abs(trace(wp, h))) < 1e-12 * np.max(np.abs(h.htt))


def test_ghp_refuses_vanishing_warping(solve):
    with pytest.raises(SingularPerturbationError):
        ghp_variation(solve(2, 2, 0).warped_product())


@pytest.mark.parametrize("alpha", [1, 2])
def test_ricci_variation_has_zero_mean_trace(solve, alpha):
    wp = solve(2, 3, alpha).warped_product()
    h = ricci_variation(wp)
    tr = l2_integral(wp, trace(wp, h))
    assert abs(tr) < 1e-10 * math.sqrt(norm_sq(wp, h) * l2_integral(wp, np.ones(wp.grid.n_points)))


def test_fibre_dimension_one_is_refused():
    with pytest.raises(DomainError):
        FibreDescriptor.round_sphere(1)
    with pytest.raises(DomainError):
        FibreDescriptor.round_sphere(3, mu=-1.0)


def test_phi3_is_the_stated_combination(solve):
    sol = solve(2, 3, 2)
    c1, c2 = phi3_coefficients(2, 3)
    a, b, c = phi1(sol), phi2(sol), phi3(sol)
    for key in ("u", "v", "gamma"):
        np.testing.assert_allclose(getattr(c, key), c1 * getattr(a, key) + c2 * getattr(b, key), atol=1e-13)


def test_uvg_fields_are_finite_at_poles(solve):
    sol = solve(2, 2, 2)
    for h in (phi1(sol), phi2(sol), phi3(sol)):
        assert all(np.all(np.isfinite(getattr(h, k))) for k in ("u", "v", "gamma"))
        assert h.parent == sol.digest()
    bal = ballooning(sol)
    assert not np.isfinite(bal.v[0]) and not np.isfinite(bal.u[-1])


@pytest.mark.parametrize("p,q", [(2, 2), (2, 3), (3, 3)])
def test_cone_limits_of_phi3_and_ballooning_are_trace_free(p, q):
    t = np.linspace(0.2, 2.9, 30)
    for which in ("phi3", "ballooning"):
        d = cone_limit_profiles(p, q, t, which)
        assert np.max(np.abs(p * d["u"].v + q * d["v"].v + d["gamma"].v)) < 1e-12
    with pytest.raises(DomainError):
        cone_limit_profiles(p, q, t, "nope")


def test_uvg_round_trip_and_bundle(solve):
    sol = solve(2, 2, 1)
    h = phi1(sol)
    back = UVGPerturbation.from_perturbation(h.to_perturbation(), h.parent)
    for key in ("u", "v", "gamma"):
        np.testing.assert_array_equal(getattr(back, key), getattr(h, key))
    b = h.bundle()
    assert b["tags"] == {"construction": "phi1", "parent": sol.digest()}
    assert b["n_points"] == sol.grid.n_points and set(b["fields"]) == {"u", "v", "gamma"}
    assert np.max(np.abs(h.trace(2, 2) - (h.gamma + 2 * h.u + 2 * h.v))) == 0


def _product_fibre_wp(solve):
    return solve(2, 4, 1).warped_product(FibreDescriptor.einstein_product((2, 2), 3.0))


def test_fibre_tt_is_transverse_and_trace_free(solve):
    wp = _product_fibre_wp(solve)
    h = fibre_tt(wp)
    assert np.max(np.abs(trace(wp, h))) < 1e-12
    assert np.max(np.abs(divergence(wp, h)[wp.interior_mask()])) < 1e-10
    assert perturbation_bundle(h)["fields"].keys() == {"htt", "hsph", "fib", "sig"}


def test_fibre_tt_needs_a_split_fibre(solve):
    with pytest.raises(DomainError):
        fibre_tt(solve(2, 2, 1).warped_product())


@pytest.mark.parametrize("p,q,alpha", [(2, 2, 1), (2, 3, 1), (2, 2, 3)])
def test_tracefree_correction(solve, p, q, alpha):
    wp = solve(p, q, alpha).warped_product()
    h = ricci_variation(wp)
    out = tracefree_correct(wp, h)
    norm = math.sqrt(norm_sq(wp, out))
    assert np.max(np.abs(trace(wp, out))) < 1e-8 * norm
    assert np.max(np.abs(divergence(wp, out)[wp.interior_mask()] - divergence(wp, h)[wp.interior_mask()])) < 1e-6


def test_tracefree_correction_fixes_trace_free_input(solve):
    wp = solve(2, 2, 1).warped_product()
    h = ghp_variation(wp)
    out = tracefree_correct(wp, h)
    scale = np.max(np.abs(h.htt))
    for key in ("htt", "hsph", "fib"):
        assert np.max(np.abs(getattr(out, key) - getattr(h, key))) < 1e-10 * scale


def test_tracefree_refusals(solve):
    with pytest.raises(NotInvertibleError):
        wp = closed_form_round(2, 2, 801).warped_product()
        tracefree_correct(wp, ricci_variation(wp))
    wp = solve(2, 2, 1).warped_product()
    with pytest.raises(PreconditionError):
        tracefree_correct(wp, Perturbation.metric(wp.grid))


def test_round_sphere_detection(solve):
    assert is_round_sphere(closed_form_round(2, 3, 801).warped_product())
    assert not is_round_sphere(closed_form_product(2, 3, 801).warped_product())
    assert not is_round_sphere(solve(2, 3, 2).warped_product())


def test_product_soliton_tensors():
    base = BaseGeometry.round_sphere(2, 801)
    t = base.grid.nodes
    phi = 0.3 * np.cos(t)
    s = SolitonData(base, phi, 2.0, -0.3 * np.sin(t), -0.3 * np.cos(t))
    fib = FibreDescriptor.round_sphere(3, mu=2.0)
    h1, h2 = product_soliton_tensors(s, fib, 1.0)
    # h1 is trace-free for the product metric; h2 is weighted-orthogonal to Ric = Ric(gbar) + lam g_F
    assert np.max(np.abs(h1.htt + 2 * h1.hsph + 3 * h1.fib)) < 1e-14
    w = base.grid.simpson_weights() * base.volume_density() * np.exp(-phi)
    rt, rs = base.ricci()
    ortho = np.dot(w, h2.htt * rt + 2 * h2.hsph * rs + 3 * h2.fib * 2.0)
    assert abs(ortho) < 1e-12
    with pytest.raises(PreconditionError):
        product_soliton_tensors(s, fib, 2.0)
