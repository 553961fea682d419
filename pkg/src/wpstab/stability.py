"""Rayleigh quotients, closed-form stability integrals and verdicts.

Quadratic forms are ``Q = int <Delta_L h, h> dV``.  A report only ever says
``unstable`` or ``inconclusive``: one test tensor can witness an instability
but never prove stability.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import integrate

from wpstab.errors import DomainError, IntegrabilityError
from wpstab.geometry import (
    BaseGeometry,
    FibreDescriptor,
    FibreEigentensor,
    Perturbation,
    SolitonData,
    WarpedProduct,
    _endpoint_zeros,
    base_hessian,
    curvature_action,
    connection_laplacian,
    divergence,
    inner_product,
    l2_integral,
    lichnerowicz,
    norm_sq,
    soliton_residual,
    sphere_volume,
    trace,
)
from wpstab.grid import Grid, Jet, fill_endpoints
from wpstab.perturbations import cone_limit_profiles, product_soliton_tensors

DIV_GATE = 1e-6
ORTHO_GATE = 1e-6
TRACE_GATE = 1e-8
EH_STEP = 1e-4
GAP_FLOOR = 1e-6  # |Q| below this fraction of lambda |h|^2 counts as zero for the gap

REPORT_COLUMNS = [
    "p", "q", "alpha", "perturbation", "Q", "norm_sq", "rayleigh",
    "threshold_rf", "threshold_bh", "verdict_rf", "verdict_bh", "gap_pct",
]


class Verdict(str, Enum):
    UNSTABLE = "unstable"
    INCONCLUSIVE = "inconclusive"


@dataclass
class StabilityReport:
    perturbation: str
    Q: float
    norm_sq: float
    rayleigh: float
    div_max: float
    trace_integral: float
    ric_inner: float
    trace_max: float
    threshold_rf: float
    threshold_bh: float
    verdict_rf: Verdict
    verdict_bh: Verdict
    Q_eh: Optional[float] = None
    gap_pct: Optional[float] = None
    einstein: bool = True
    gates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict_rf"] = self.verdict_rf.value
        d["verdict_bh"] = self.verdict_bh.value
        return d


# --------------------------------------------------------------------------- Einstein-Hilbert route


def _scalar_curvature(p, m, mu, N: Jet, A: Jet, F: Jet) -> np.ndarray:
    """Scalar curvature of ``N^2 dt^2 + A^2 g_{S^p} + F^2 g_F`` (``Ric(g_F) = mu g_F``)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        As, Fs = A.d1 / N.v, F.d1 / N.v
        Ass = (A.d2 * N.v - A.d1 * N.d1) / N.v**3
        Fss = (F.d2 * N.v - F.d1 * N.d1) / N.v**3
        R = -2.0 * m * Fss / F.v + m * (mu - (m - 1) * Fs**2) / F.v**2
        if p:
            R = R - 2.0 * p * Ass / A.v + p * (p - 1) * (1.0 - As**2) / A.v**2 - 2.0 * p * m * As * Fs / (A.v * F.v)
    return R


_LD = np.longdouble
_EXTRAP_LD = np.array([5, -10, 10, -5, 1], dtype=_LD)


class _LDJet:
    """Extended-precision value/derivative triple; only what the action needs."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1, d2):
        self.v, self.d1, self.d2 = (np.asarray(x, dtype=_LD) for x in (v, d1, d2))

    @classmethod
    def of(cls, j: Jet) -> "_LDJet":
        return cls(j.v, j.d1, j.d2)

    def __mul__(self, o: "_LDJet") -> "_LDJet":
        return _LDJet(self.v * o.v, self.d1 * o.v + self.v * o.d1, self.d2 * o.v + 2 * self.d1 * o.d1 + self.v * o.d2)

    def sqrt(self) -> "_LDJet":
        r = np.sqrt(self.v)
        return _LDJet(r, self.d1 / (2 * r), self.d2 / (2 * r) - self.d1**2 / (4 * r**3))


def _fill_ld(y, sides):
    y = y.copy()
    if sides[0]:
        y[0] = np.dot(_EXTRAP_LD, y[1:6])
    if sides[1]:
        y[-1] = np.dot(_EXTRAP_LD, y[-2:-7:-1])
    return y


def einstein_hilbert_action(wp: WarpedProduct, h: Perturbation | None = None, eps: float = 0.0):
    """``int (R - (N-2) lambda) dV`` for the metric ``g + eps h`` (cohomogeneity one, no sigma part).

    Evaluated in extended precision: the second difference in ``eps`` cancels
    about eight digits, which float64 cannot spare.
    """
    p, m, dim = wp.base.p, wp.m, wp.dim
    n = wp.grid.n_points
    e = _LD(eps)
    comps = []
    for k in ("htt", "hsph", "fib"):
        if h is None:
            comps.append(_LDJet(np.ones(n), np.zeros(n), np.zeros(n)))
        else:
            j = _LDJet.of(h.jet(k))
            comps.append(_LDJet(1 + e * j.v, e * j.d1, e * j.d2))
    gt, gs, gf = comps
    N = gt.sqrt()
    A = _LDJet.of(wp.base.a_jet) * gs.sqrt()
    F = _LDJet.of(wp.f_jet) * gf.sqrt()
    R = _scalar_curvature(p, m, _LD(wp.fibre.mu), N, A, F)
    with np.errstate(invalid="ignore"):
        g = (R - (dim - 2) * _LD(wp.lam)) * N.v * np.abs(A.v) ** p * np.abs(F.v) ** m
    g = _fill_ld(g, wp.poles)
    if not np.all(np.isfinite(g)):
        raise IntegrabilityError("Einstein-Hilbert integrand is not finite")
    w = wp.grid.simpson_weights().astype(_LD)
    return _LD(sphere_volume(p) * wp.fibre.vol) * np.sum(w * g)


def eh_second_variation(wp: WarpedProduct, h: Perturbation, step: float = EH_STEP) -> float:
    """``d^2/de^2 int (R - (N-2) lambda) dV(g + e h)`` by Richardson-extrapolated central differences."""
    scale = max(float(np.max(np.abs(x))) for x in (h.htt, h.hsph, h.fib))
    eps = step / max(scale, 1e-300)
    S0 = einstein_hilbert_action(wp)

    def D(e):
        return (einstein_hilbert_action(wp, h, e) - 2 * S0 + einstein_hilbert_action(wp, h, -e)) / _LD(e) ** 2

    return float((4 * D(0.5 * eps) - D(eps)) / 3)


def eh_quadratic_form(wp: WarpedProduct, h: Perturbation, step: float = EH_STEP) -> float:
    """``int <Delta_L h, h>`` from the action's second variation plus its gauge terms.

    On ``Ric = lambda g`` one has ``E'' = Q/2 + lambda|h|^2 + |div h|^2 - <div h, d tr h>
    + |d tr h|^2/2 - lambda (tr h)^2/2`` after integration by parts.
    """
    if h.sig is not None:
        raise DomainError("the action route covers diagonal (u, v, gamma) perturbations only")
    E2 = eh_second_variation(wp, h, step)
    tau = wp.grid.jet(trace(wp, h))
    div = fill_endpoints(divergence(wp, h), wp.poles)
    lam = wp.lam
    return (
        2.0 * E2
        - 2.0 * lam * norm_sq(wp, h)
        - 2.0 * l2_integral(wp, div**2)
        + 2.0 * l2_integral(wp, div * tau.d1)
        - l2_integral(wp, tau.d1**2)
        + lam * l2_integral(wp, tau.v**2)
    )


# --------------------------------------------------------------------------- Rayleigh quotient


def quadratic_form(wp: WarpedProduct, h: Perturbation, einstein: bool | None = None) -> float:
    return l2_integral(wp, inner_product(wp, lichnerowicz(wp, h, einstein), h))


def _ricci_tensor(wp: WarpedProduct) -> Perturbation:
    rt, rs, rf = wp.ricci()
    return Perturbation(wp.grid, rt, rs, rf, name="ric")


def rayleigh(wp: WarpedProduct, h: Perturbation, eh_route: bool | None = None, step: float = EH_STEP) -> StabilityReport:
    """Rayleigh quotient with gauge residuals and both verdicts.

    ``eh_route`` (default: whenever ``h`` has no fibre-eigentensor part) adds the
    Einstein-Hilbert evaluation of ``Q`` and the relative gap between the two.
    """
    einstein = wp.is_einstein()
    nsq = norm_sq(wp, h)
    if not np.isfinite(nsq) or nsq <= 0:
        raise IntegrabilityError(f"|h|^2 of '{h.name}' is not a finite positive number")
    Q = quadratic_form(wp, h)
    mask = wp.interior_mask()
    pointwise = np.sqrt(np.abs(inner_product(wp, h, h)))
    scale = max(float(np.max(pointwise[mask])), 1e-300)
    div_max = float(np.max(np.abs(divergence(wp, h)[mask]))) / scale
    tr = trace(wp, h)
    tr_int = l2_integral(wp, tr)
    ric = _ricci_tensor(wp)
    ric_inner = l2_integral(wp, inner_product(wp, ric, h))
    ric_norm = math.sqrt(max(norm_sq(wp, ric), 0.0))
    trace_max = float(np.max(np.abs(tr[mask]))) / scale
    lam, dim = wp.lam, wp.dim
    th_rf, th_bh = -2.0 * lam, -(9 - dim) * lam / 4.0
    ray = Q / nsq
    gates = {
        "div": div_max < DIV_GATE,
        "ortho": abs(ric_inner) < ORTHO_GATE * ric_norm * math.sqrt(nsq),
        "trace": trace_max < TRACE_GATE,
    }
    rf = gates["div"] and gates["ortho"] and ray > th_rf
    bh = rf and gates["trace"] and ray > th_bh
    Q_eh = gap = None
    if eh_route is None:
        eh_route = h.sig is None and einstein
    if eh_route:
        Q_eh = eh_quadratic_form(wp, h, step)
        denom = max(abs(Q), abs(Q_eh), GAP_FLOOR * abs(lam) * nsq)
        gap = 100.0 * abs(Q - Q_eh) / denom
    return StabilityReport(
        h.name or "h", Q, nsq, ray, div_max, tr_int, ric_inner, trace_max, th_rf, th_bh,
        Verdict.UNSTABLE if rf else Verdict.INCONCLUSIVE,
        Verdict.UNSTABLE if bh else Verdict.INCONCLUSIVE,
        Q_eh, gap, einstein, gates,
    )


# --------------------------------------------------------------------------- Theorems 1 and 2


def theorem1_coefficient(n: int, m: int) -> Fraction:
    n, m = Fraction(n), Fraction(m)
    return (m + n) ** 2 * (2 * m + 4 * n - m * n - n**2) / (m * n**2)


def laplacian_coefficient(m: int, n: int) -> Fraction:
    """``C_{m,n}`` in the pointwise expansion of ``<Delta h, h>`` for the GHP variation."""
    m, n = Fraction(m), Fraction(n)
    num = (m**3 * n + 2 * m**2 * n**2 + 2 * m**2 + m * n**3 - 4 * m * n**2
           + 4 * m * n - 4 * n**3 + 6 * n**2)
    return num / (m * n**2)


@dataclass(frozen=True)
class Theorem1Data:
    n: int
    m: int
    coefficient: Fraction
    C_mn: Fraction
    integral: float
    vol_F: float

    @property
    def Q(self) -> float:
        return self.vol_F * float(self.coefficient) * self.integral


def _base_integral(wp: WarpedProduct, field_) -> float:
    g = fill_endpoints(np.asarray(field_, dtype=float) * wp.base.volume_density(), wp.base.poles)
    return wp.grid.integrate(g)


def theorem1_closed_form(wp: WarpedProduct) -> Theorem1Data:
    if any(_endpoint_zeros(wp.f)) or np.min(wp.f) <= 0:
        raise IntegrabilityError("Theorem 1 integrals diverge when the warping function vanishes")
    n, m = wp.n, wp.m
    f = wp.f_jet
    integral = _base_integral(wp, f.v ** (-(m + 2 * n + 2)) * f.d1**2)
    return Theorem1Data(n, m, theorem1_coefficient(n, m), laplacian_coefficient(m, n), integral, wp.fibre.vol)


@dataclass(frozen=True)
class Theorem2Data:
    Q: float
    norm_sq: float
    lower_bound: float
    bound_applies: bool
    bound_holds: bool


def theorem2_integral(wp: WarpedProduct, sigma: FibreEigentensor) -> Theorem2Data:
    """``2|sigma|^2 int_B [(mu - k/2) f^{m-6} - lambda f^{m-4} - 2 f^{m-6}|grad f|^2]`` and the ``-lambda|h|^2`` bound."""
    m, mu, lam, k = wp.m, wp.fibre.mu, wp.lam, sigma.k
    f = wp.f_jet
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = f.v ** (m - 6) * ((mu - 0.5 * k) - lam * f.v**2 - 2.0 * f.d1**2)
        g4 = f.v ** (m - 4)
    Q = 2.0 * sigma.norm_sq * _base_integral(wp, integrand)
    nsq = sigma.norm_sq * _base_integral(wp, g4)
    if not (np.isfinite(Q) and np.isfinite(nsq)):
        raise IntegrabilityError("Theorem 2 integrals diverge on this background")
    bound = -lam * nsq
    applies = k <= mu
    return Theorem2Data(Q, nsq, bound, applies, (Q >= bound) if applies else False)


# --------------------------------------------------------------------------- limiting integrals


@dataclass(frozen=True)
class WallisValue:
    n: int
    coefficient: Fraction
    unit: str  # "pi" or "2"

    @property
    def value(self) -> float:
        return float(self.coefficient) * (math.pi if self.unit == "pi" else 2.0)


def sin_power_integral(n: int) -> WallisValue:
    """``W_n = int_0^pi sin^n``: ``W_n = (n-1)/n W_{n-2}``, ``W_0 = pi``, ``W_1 = 2``."""
    if n < 0:
        raise DomainError("W_n needs n >= 0")
    c = Fraction(1)
    k = n
    while k > 1:
        c *= Fraction(k - 1, k)
        k -= 2
    return WallisValue(n, c, "pi" if n % 2 == 0 else "2")


def cone_amplitudes(p: int, q: int) -> tuple[float, float]:
    s = p + q - 1
    return math.sqrt((p - 1) / s), math.sqrt((q - 1) / s)


@dataclass(frozen=True)
class LimitIntegral:
    p: int
    q: int
    quadrature: float
    closed_form: float
    prefactor: float


def limiting_integral_I(p: int, q: int) -> LimitIntegral:
    if p < 2 or q < 2:
        raise DomainError("the limiting integral needs p, q >= 2 (p + q >= 4)")
    s = p + q
    A, B = cone_amplitudes(p, q)
    C = -p * q * s * A**p * B**q

    def integrand(t):
        st = math.sin(t)
        return (2 * s * s - 10 * s + 9) * st ** (s - 4) - (2 * s * s - 8 * s + 5) * st ** (s - 2)

    val, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=1e-12, epsrel=1e-12, limit=200)
    closed = 3.0 * p * q * s / (s - 2) * A**p * B**q * sin_power_integral(s - 4).value
    return LimitIntegral(p, q, C * val, closed, C)


def _cone_geometry(p: int, q: int, nodes: np.ndarray) -> WarpedProduct:
    """Double cone sampled at arbitrary interior nodes; every jet is exact so no stencil is used."""
    A, B = cone_amplitudes(p, q)
    s, c = np.sin(nodes), np.cos(nodes)
    grid = Grid(math.pi, len(nodes))  # only the sample count matters here
    with np.errstate(divide="ignore"):
        kappa = (1.0 - A**2 * c**2) / (A**2 * s**2)
    base = BaseGeometry(grid, p, A * s, adot=A * c, addot=-A * s, kappa=kappa)
    return WarpedProduct(base, B * s, FibreDescriptor.round_sphere(q), float(p + q), fdot=B * c, fddot=-B * s)


def cone_quadratic_form(p: int, q: int, which: str, amplitude: float = 1.0, n_nodes: int = 400) -> float:
    """``int_0^pi <Delta_L h, h> a^p b^q dt`` for a limiting perturbation on the double cone.

    Gauss-Legendre nodes avoid the conical endpoints; the sphere volumes are
    left out, matching the normalisation of the limiting integral.
    """
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    t = 0.5 * math.pi * (x + 1.0)
    w = 0.5 * math.pi * w
    wp = _cone_geometry(p, q, t)
    prof = cone_limit_profiles(p, q, t, which)
    h = Perturbation.from_jets(
        wp.grid, prof["gamma"] * amplitude, prof["u"] * amplitude, prof["v"] * amplitude, name=which
    )
    val = inner_product(wp, lichnerowicz(wp, h, einstein=True), h)
    dens = wp.base.a**p * wp.f**q
    return float(np.dot(w, val * dens))


def ballooning_limit_integral(p: int, q: int, amplitude: float = 1.0) -> float:
    return cone_quadratic_form(p, q, "ballooning", amplitude)


# --------------------------------------------------------------------------- product solitons


@dataclass(frozen=True)
class RDP1Result:
    value_h1: float
    norm_h1: float
    value_h2: float
    norm_h2: float
    ratio_h2: float
    direct_ratio_h2: Optional[float]
    inequality_lhs: float
    inequality_rhs: float
    inequality_holds: bool
    h1_destabilising: bool
    normalisation_residual: float
    soliton_residual: float


def rdp1_evaluate(s: SolitonData, fibre: FibreDescriptor, f_inf: float) -> RDP1Result:
    """Stability integrals of ``h1`` and ``h2`` on a product soliton.

    ``Vol(F)`` is the volume of ``(F, f_inf^2 g_F)``.  For constant ``phi`` the
    background is an Einstein product and ``<N(h2), h2>`` is also evaluated
    directly from the operator lemmas.
    """
    h1, h2 = product_soliton_tensors(s, fibre, f_inf)
    base, lam = s.base, s.lam
    n, m = base.p + 1, fibre.m
    volF = fibre.vol * abs(f_inf) ** m
    phi = s.phi_jet
    e = phi.exp()
    w = base.grid.simpson_weights() * base.volume_density()

    def bint(x):
        return float(np.dot(w, fill_endpoints(x, base.poles)))

    grad_e2 = e.d1**2
    weight = np.exp(-phi.v)
    value_h1 = volF * bint((-(1 / (2 * n) + 1 / (2 * m) + 1 / n**2) * grad_e2 + (1 / n + 1 / m) * lam * e.v**2) * weight)
    norm_h1 = volF * bint((1 / n + 1 / m) * e.v**2 * weight)
    rt, rs = base.ricci()
    norm_h2 = volF * bint((rt**2 + base.p * rs**2 + m * h2.fib**2) * weight)
    value_h2 = lam * norm_h2
    direct = None
    if float(np.ptp(phi.v)) == 0.0:
        wp = WarpedProduct(base, np.full_like(phi.v, f_inf), fibre, lam, fdot=np.zeros_like(phi.v),
                           fddot=np.zeros_like(phi.v))
        Q = quadratic_form(wp, h2, einstein=True)
        direct = (0.5 * Q + lam * norm_sq(wp, h2)) / norm_sq(wp, h2)
    lhs = bint(phi.v * e.v)
    rhs = 2 * n * (m + n) / (n**2 + m * n + 2 * m) * bint(e.v)
    with np.errstate(divide="ignore", invalid="ignore"):
        Ht, Hs = base_hessian(base.a_jet, base.p, phi)
        drift = Ht + base.p * Hs - phi.d1**2
    norm_res = drift + 2.0 * lam * phi.v
    mask = np.isfinite(norm_res)
    return RDP1Result(
        value_h1, norm_h1, value_h2, norm_h2, value_h2 / norm_h2, direct, lhs, rhs, lhs < rhs,
        value_h1 > 0.0, float(np.max(np.abs(norm_res[mask]))), soliton_residual(s),
    )


# --------------------------------------------------------------------------- Theorem 3 families


def stability_operator_form(wp: WarpedProduct, h: Perturbation) -> float:
    """``int <N(h), h>`` with ``N(h) = Delta h / 2 + Rm(h, .)`` (gauge-fixed form)."""
    lap = connection_laplacian(wp, h)
    rm = curvature_action(wp, h)
    Nh = lap.combine(0.5, rm, 1.0)
    return l2_integral(wp, inner_product(wp, Nh, h))


def theorem3_check(family, labels=None) -> dict:
    """Deviation ``<N(h), h>/|h|^2 - lambda`` per member plus decay diagnostics."""
    rows = []
    for i, (wp, h) in enumerate(family):
        nsq = norm_sq(wp, h)
        dev = stability_operator_form(wp, h) / nsq - wp.lam
        rows.append({"index": i, "label": labels[i] if labels else wp.m, "m": wp.m, "norm_sq": nsq, "deviation": dev})
    out = {"rows": rows, "monotone": None, "decay_exponent": None}
    if len(rows) >= 2:
        mags = np.array([abs(r["deviation"]) for r in rows])
        ms = np.array([r["m"] for r in rows], dtype=float)
        out["monotone"] = bool(np.all(np.diff(mags) <= 0))
        if np.all(mags > 0) and np.ptp(ms) > 0:
            out["decay_exponent"] = float(np.polyfit(np.log(ms), np.log(mags), 1)[0])
    return out


__all__ = [
    "LimitIntegral",
    "RDP1Result",
    "REPORT_COLUMNS",
    "StabilityReport",
    "Theorem1Data",
    "Theorem2Data",
    "Verdict",
    "WallisValue",
    "ballooning_limit_integral",
    "cone_quadratic_form",
    "eh_quadratic_form",
    "eh_second_variation",
    "einstein_hilbert_action",
    "laplacian_coefficient",
    "limiting_integral_I",
    "quadratic_form",
    "rayleigh",
    "rdp1_evaluate",
    "sin_power_integral",
    "stability_operator_form",
    "theorem1_closed_form",
    "theorem1_coefficient",
    "theorem2_integral",
    "theorem3_check",
]
