"""Destabilising perturbations and the trace-free correction.

Cohomogeneity-one perturbations of ``dt^2 + a^2 dOmega_p^2 + b^2 dOmega_q^2``
are carried as :class:`UVGPerturbation`, the first-order part of
``a -> a sqrt(1+u)``, ``b -> b sqrt(1+v)``, ``dt -> sqrt(1+gamma) dt``.  Its
coefficients are exactly those of :class:`~wpstab.geometry.Perturbation` on the
warped product with ``f = b`` (``gamma -> htt``, ``u -> hsph``, ``v -> fib``),
so the conversion is a relabelling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from wpstab.errors import (
    DomainError,
    NotInvertibleError,
    PreconditionError,
    SingularPerturbationError,
)
from wpstab.geometry import (
    FibreDescriptor,
    FibreEigentensor,
    FibreKind,
    Perturbation,
    SolitonData,
    WarpedProduct,
    _endpoint_zeros,
    l2_integral,
    norm_sq,
    trace,
)
from wpstab.grid import Grid, Jet, d1_sparse, d2_sparse, fill_endpoints
from wpstab.io import field_bundle

TRACE_INTEGRAL_TOL = 1e-8
ROUND_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class UVGPerturbation:
    """``h = gamma dt^2 + u a^2 dOmega_p^2 + v b^2 dOmega_q^2``."""

    grid: Grid
    u: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    name: str = ""
    parent: str = ""

    def __post_init__(self):
        n = self.grid.n_points
        for key in ("u", "v", "gamma"):
            arr = np.broadcast_to(np.asarray(getattr(self, key), dtype=float), (n,)).copy()
            object.__setattr__(self, key, arr)

    def to_perturbation(self) -> Perturbation:
        return Perturbation(self.grid, self.gamma, self.u, self.v, name=self.name)

    @classmethod
    def from_perturbation(cls, h: Perturbation, parent: str = "") -> "UVGPerturbation":
        if h.sig is not None:
            raise DomainError("a fibre eigentensor part has no (u, v, gamma) form")
        return cls(h.grid, h.hsph, h.fib, h.htt, h.name, parent)

    def trace(self, p: int, q: int) -> np.ndarray:
        return self.gamma + p * self.u + q * self.v

    def combine(self, c1: float, other: "UVGPerturbation", c2: float, name: str = "") -> "UVGPerturbation":
        self.grid.check_same(other.grid)
        return UVGPerturbation(
            self.grid,
            c1 * self.u + c2 * other.u,
            c1 * self.v + c2 * other.v,
            c1 * self.gamma + c2 * other.gamma,
            name,
            self.parent,
        )

    def scaled(self, c: float) -> "UVGPerturbation":
        return UVGPerturbation(self.grid, c * self.u, c * self.v, c * self.gamma, self.name, self.parent)

    def bundle(self) -> dict:
        return field_bundle(
            self.grid.T,
            {"u": self.u, "v": self.v, "gamma": self.gamma},
            {"construction": self.name, "parent": self.parent},
        )


def perturbation_bundle(h: Perturbation, parent: str = "") -> dict:
    fields = {"htt": h.htt, "hsph": h.hsph, "fib": h.fib}
    if h.sig is not None:
        fields["sig"] = h.sig
    return field_bundle(h.grid.T, fields, {"construction": h.name, "parent": parent})


# --------------------------------------------------------------------------- general warped products


def ghp_variation(wp: WarpedProduct) -> Perturbation:
    """``(f^{-(n+m)}/n) gbar (+) (-f^{2-(n+m)}/m) g_F``, trace-free and transverse."""
    if any(_endpoint_zeros(wp.f)) or np.min(wp.f) <= 0:
        raise SingularPerturbationError("GHP variation is singular where the warping function vanishes")
    n, m = wp.n, wp.m
    w = wp.f_jet ** (-(n + m))
    return Perturbation.from_jets(wp.grid, w * (1.0 / n), w * (1.0 / n), w * (-1.0 / m), name="ghp")


def ricci_variation(wp: WarpedProduct) -> Perturbation:
    """``f P (+) 0 + c g`` with ``P = Ric(gbar) - rho/(m-1) gbar`` and ``int tr h = 0``."""
    m, n = wp.m, wp.n
    if m == 1:
        raise DomainError("the Ricci variation needs fibre dimension m != 1")
    rt, rs = wp.base.ricci()
    rho = (n - 1) * wp.lam - (rt + wp.base.p * rs)
    pt = wp.f * (rt - rho / (m - 1))
    ps = wp.f * (rs - rho / (m - 1))
    zero = np.zeros_like(pt)
    raw = Perturbation(wp.grid, pt, ps, zero)
    vol = l2_integral(wp, np.ones_like(pt))
    c = -l2_integral(wp, trace(wp, raw)) / (wp.dim * vol)
    return Perturbation(wp.grid, pt + c, ps + c, zero + c, name="ricci")


def _builtin_sigma(fibre: FibreDescriptor) -> FibreEigentensor:
    if fibre.kind is FibreKind.EINSTEIN_PRODUCT:
        return FibreEigentensor.product_split(fibre)
    raise DomainError("this fibre carries no transverse trace-free eigentensor data")


def fibre_tt(wp: WarpedProduct, sigma: FibreEigentensor | None = None) -> Perturbation:
    """``0 (+) sigma``; without ``sigma`` the built-in product-fibre tensor is used."""
    if sigma is None:
        sigma = _builtin_sigma(wp.fibre)
    n = wp.grid.n_points
    zero = np.zeros(n)
    return Perturbation(wp.grid, zero, zero, zero, np.ones(n), sigma, name="fibre-tt")


# --------------------------------------------------------------------------- Böhm perturbations


def _pole_sides(sol) -> tuple[bool, bool]:
    a0, a1 = _endpoint_zeros(sol.a)
    b0, b1 = _endpoint_zeros(sol.b)
    return a0 or b0, a1 or b1


def _regular(sol, *arrays):
    """Pole samples replaced by their limits (extrapolated from the series layer)."""
    sides = _pole_sides(sol)
    return [fill_endpoints(x, sides) for x in arrays]


def phi1(sol) -> UVGPerturbation:
    p, q = sol.p, sol.q
    a, b, ad, bd = sol.a, sol.b, sol.adot, sol.bdot
    with np.errstate(divide="ignore", invalid="ignore"):
        mixed = ad * bd / a
        curv = (bd**2 - 1.0) / b
        u = mixed - curv
        g = -(p + q) * b - p * mixed - q * curv
    u, g = _regular(sol, u, g)
    return UVGPerturbation(sol.grid, u, np.zeros_like(u), g, "phi1", sol.digest())


def phi2(sol) -> UVGPerturbation:
    p, q = sol.p, sol.q
    a, b, ad, bd = sol.a, sol.b, sol.adot, sol.bdot
    with np.errstate(divide="ignore", invalid="ignore"):
        mixed = ad * bd / b
        curv = (ad**2 - 1.0) / a
        v = mixed - curv
        g = -(p + q) * a - q * mixed - p * curv
    v, g = _regular(sol, v, g)
    return UVGPerturbation(sol.grid, np.zeros_like(v), v, g, "phi2", sol.digest())


def phi3_coefficients(p: int, q: int) -> tuple[float, float]:
    s = p + q - 1
    return q * math.sqrt((q - 1) / s), -p * math.sqrt((p - 1) / s)


def phi3(sol) -> UVGPerturbation:
    c1, c2 = phi3_coefficients(sol.p, sol.q)
    return phi1(sol).combine(c1, phi2(sol), c2, "phi3")


def ballooning(sol) -> UVGPerturbation:
    """``u = q bdot/b``, ``v = -p adot/a``; genuinely singular (and left so) where ``a`` or ``b`` vanishes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        u = sol.q * sol.bdot / sol.b
        v = -sol.p * sol.adot / sol.a
    return UVGPerturbation(sol.grid, u, v, np.zeros_like(u), "ballooning", sol.digest())


def cone_limit_profiles(p: int, q: int, t, which: str) -> dict:
    """Exact limiting ``(u, v, gamma)`` jets on the double cone.

    ``which`` is one of ``phi1, phi2, phi3, ballooning``.
    """
    t = np.asarray(t, dtype=float)
    s = p + q - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        csc = Jet(1.0 / np.sin(t), -np.cos(t) / np.sin(t) ** 2, (1.0 + np.cos(t) ** 2) / np.sin(t) ** 3)
        cot = Jet(np.cos(t) / np.sin(t), -1.0 / np.sin(t) ** 2, 2.0 * np.cos(t) / np.sin(t) ** 3)
    zero = Jet.const(0.0, t)
    if which == "phi1":
        u = csc * math.sqrt(s / (q - 1))
        return {"u": u, "v": zero, "gamma": u * (p / s)}
    if which == "phi2":
        v = csc * math.sqrt(s / (p - 1))
        return {"u": zero, "v": v, "gamma": v * (q / s)}
    if which == "phi3":
        return {"u": csc * q, "v": csc * (-p), "gamma": zero}
    if which == "ballooning":
        return {"u": cot * q, "v": cot * (-p), "gamma": zero}
    raise DomainError(f"unknown cone perturbation '{which}'")


# --------------------------------------------------------------------------- trace-free correction


def is_round_sphere(wp: WarpedProduct, tol: float = ROUND_TOL) -> bool:
    """Constant sectional curvature test on the profiles (interior nodes)."""
    if wp.fibre.kind is not FibreKind.ROUND_SPHERE:
        return False
    K = wp.lam / (wp.dim - 1)
    a, f = wp.base.a_jet, wp.f_jet
    kf = wp.fibre.mu / (wp.m - 1)
    mask = wp.interior_mask()
    checks = [f.d2 + K * f.v, f.d1**2 + K * f.v**2 - kf]
    if wp.base.p:
        checks += [a.d2 + K * a.v, a.d1**2 + K * a.v**2 - 1.0]
    return max(float(np.max(np.abs(c[mask]))) for c in checks) < tol


_EVEN_D1 = (np.zeros(4), np.array([-8.0, 1.0, 8.0, -1.0]) / 12.0)
_EVEN_D2 = (np.array([-30.0, 32.0, -2.0, 0.0]) / 12.0, np.array([16.0, -31.0, 16.0, -1.0]) / 12.0)


def _even_stencils(grid: Grid, sides):
    """Derivative matrices whose first two rows at a pole use the even reflection ``phi(-t) = phi(t)``.

    Invariant functions are even in the distance to a singular orbit, so this
    builds ``phi'(pole) = 0`` into the discretisation.
    """
    n, h = grid.n_points, grid.h
    D1, D2 = d1_sparse(n, h).tolil(), d2_sparse(n, h).tolil()
    for side, flag in enumerate(sides):
        if not flag:
            continue
        for i in range(2):
            row = i if side == 0 else n - 1 - i
            cols = list(range(4)) if side == 0 else [n - 1 - j for j in range(4)]
            sgn = 1.0 if side == 0 else -1.0
            D1[row, :] = 0.0
            D2[row, :] = 0.0
            for c, w1, w2 in zip(cols, _EVEN_D1[i], _EVEN_D2[i]):
                D1[row, c] = sgn * w1 / h
                D2[row, c] = w2 / h**2
    return D1.tocsr(), D2.tocsr()


def _laplace_matrix(wp: WarpedProduct):
    """Scalar Laplacian ``phi'' + (p adot/a + m fdot/f) phi'`` with pole rows replaced by their limits."""
    g = wp.grid
    p, m = wp.base.p, wp.m
    a, f = wp.base.a_jet, wp.f_jet
    with np.errstate(divide="ignore", invalid="ignore"):
        La = a.d1 / a.v if p else np.zeros(g.n_points)
        Lf = f.d1 / f.v
    ca = np.ones(g.n_points)  # coefficient of phi''
    a_poles, f_poles = wp.base.poles, _endpoint_zeros(wp.f)
    D1, D2 = _even_stencils(g, tuple(x or y for x, y in zip(a_poles, f_poles)))
    for side, idx in ((0, 0), (1, -1)):
        if a_poles[side]:
            ca[idx] += p
            La[idx] = 0.0
        if f_poles[side]:
            ca[idx] += m
            Lf[idx] = 0.0
    drift = p * La + m * Lf
    return sparse.diags(ca) @ D2 + sparse.diags(drift) @ D1, D1, D2


def _weights(wp: WarpedProduct) -> np.ndarray:
    dens = wp.base.volume_density() * np.abs(wp.f) ** wp.m * wp.fibre.vol
    return wp.grid.simpson_weights() * dens


@dataclass(frozen=True, eq=False)
class ScalarOperators:
    """``T(phi)`` and ``S(phi)`` on functions of ``t``."""

    wp: WarpedProduct

    def laplacian(self, phi) -> np.ndarray:
        L, _, _ = _laplace_matrix(self.wp)
        return L @ np.asarray(phi, dtype=float)

    def T(self, phi) -> np.ndarray:
        N = self.wp.dim
        return self.laplacian(phi) + N * self.wp.lam / (N - 1) * np.asarray(phi, dtype=float)

    def S(self, phi, rhs=None, name: str = "S") -> Perturbation:
        """``(Lap phi + lambda phi) g - Hess phi``.

        The component derivatives are assembled from ``phi'`` and the equation
        ``T(phi) = rhs`` (``rhs`` defaults to ``T(phi)`` itself), which avoids
        differencing ``phi`` three times.
        """
        wp = self.wp
        g = wp.grid
        N, lam, p, m = wp.dim, wp.lam, wp.base.p, wp.m
        kap = N * lam / (N - 1)
        Lmat, D1, D2 = _laplace_matrix(wp)
        phi = np.asarray(phi, dtype=float)
        r = Lmat @ phi + kap * phi if rhs is None else np.asarray(rhs, dtype=float)
        d1, d2 = D1 @ phi, D2 @ phi
        a, f = wp.base.a_jet, wp.f_jet
        with np.errstate(divide="ignore", invalid="ignore"):
            La = a.d1 / a.v if p else np.zeros_like(phi)
            Lf = f.d1 / f.v
            dLa = a.d2 / a.v - La**2 if p else np.zeros_like(phi)
            dLf = f.d2 / f.v - Lf**2
            d3 = g.d1(r) - kap * d1 - (p * dLa + m * dLf) * d1 - (p * La + m * Lf) * d2
            hs, hf = La * d1, Lf * d1
            dhs, dhf = dLa * d1 + La * d2, dLf * d1 + Lf * d2
        sides = wp.poles
        d3, hs, hf, dhs, dhf = (fill_endpoints(x, sides) for x in (d3, hs, hf, dhs, dhf))
        base = Lmat @ phi + lam * phi
        dbase = g.d1(r) + (lam - kap) * d1
        comps = [(base - d2, dbase - d3), (base - hs, dbase - dhs), (base - hf, dbase - dhf)]
        jets = [Jet(v, dv, g.d1(dv)) for v, dv in comps]
        return Perturbation.from_jets(g, *jets, name=name)


def tracefree_correct(wp: WarpedProduct, h: Perturbation) -> Perturbation:
    """``h - S(phi)`` with ``T(phi) = tr h/(N-1)`` and ``int phi = 0``; pointwise trace-free output."""
    if not wp.is_einstein():
        raise PreconditionError("trace-free correction needs an Einstein background")
    if is_round_sphere(wp):
        raise NotInvertibleError("T is not invertible on the round sphere")
    N = wp.dim
    tr = trace(wp, h)
    w = _weights(wp)
    tr_int = float(np.dot(w, fill_endpoints(tr, wp.poles)))
    bound = math.sqrt(N * norm_sq(wp, h) * float(np.sum(w)))
    if abs(tr_int) > TRACE_INTEGRAL_TOL * max(bound, 1e-300):
        raise PreconditionError(f"int tr(h) dV = {tr_int:.3e} is not zero")
    L, _, _ = _laplace_matrix(wp)
    T = L + sparse.identity(wp.grid.n_points) * (N * wp.lam / (N - 1))
    wc = sparse.csr_matrix(w.reshape(-1, 1))
    A = sparse.bmat([[T, wc], [wc.T, None]], format="csc")
    rhs = np.concatenate([tr / (N - 1), [0.0]])
    sol = spsolve(A, rhs)
    phi = sol[:-1]
    out = h - ScalarOperators(wp).S(phi, rhs[:-1])
    return Perturbation(wp.grid, out.htt, out.hsph, out.fib, out.sig, out.sigma, f"tf({h.name})", out.derivs)


# --------------------------------------------------------------------------- product solitons


def product_soliton_tensors(s: SolitonData, fibre: FibreDescriptor, f_inf: float, tol: float = 1e-8):
    """``h1 = e^phi (gbar/n (+) -f^2 g_F/m)`` and ``h2 = Ric(gbar) (+) c f^2 g_F``."""
    lam = s.lam
    if abs(fibre.mu - f_inf**2 * lam) > tol * max(1.0, abs(fibre.mu)):
        raise PreconditionError("product soliton needs mu = f_inf^2 lambda")
    base = s.base
    n, m, p = base.p + 1, fibre.m, base.p
    e = s.phi_jet.exp()
    h1 = Perturbation.from_jets(base.grid, e * (1.0 / n), e * (1.0 / n), e * (-1.0 / m), name="h1")
    rt, rs = base.ricci()
    w = base.grid.simpson_weights() * base.volume_density() * np.exp(-s.phi)
    c = -float(np.dot(w, rt**2 + p * rs**2)) / (m * lam * float(np.sum(w)))
    h2 = Perturbation(base.grid, rt, rs, np.full_like(rt, c), name="h2")
    return h1, h2


__all__ = [
    "UVGPerturbation",
    "ScalarOperators",
    "ballooning",
    "cone_limit_profiles",
    "fibre_tt",
    "ghp_variation",
    "is_round_sphere",
    "perturbation_bundle",
    "phi1",
    "phi2",
    "phi3",
    "phi3_coefficients",
    "product_soliton_tensors",
    "ricci_variation",
    "tracefree_correct",
]
