"""Böhm cohomogeneity-one Einstein metrics ``dt^2 + a^2 dOmega_p^2 + b^2 dOmega_q^2``.

Solutions are found by shooting in the initial value ``b0 = b(0)`` from the
regular pole ``a(0) = 0``, then polished by matching the pole trajectory
against a trajectory launched from the terminal pole.  Branches are indexed
by decreasing ``b0``: branch 0 is the round sphere, branch 1 the homogeneous
product, and topologies alternate from there.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from numpy.polynomial import polynomial as P
from scipy.optimize import least_squares

from wpstab.errors import DomainError, NotFoundError
from wpstab.geometry import (
    BaseGeometry,
    FibreDescriptor,
    Topology,
    WarpedProduct,
    interior_mask,
)
from wpstab.grid import Grid

RTOL = 1e-12
ATOL = 1e-13
SHOOT_THRESHOLD = 0.1
SERIES_ORDER = 12
SERIES_SWITCH_MAX = 0.05
SERIES_SWITCH_FRACTION = 0.15


class BohmTopology(str, Enum):
    SPHERE = "sphere"
    PRODUCT = "product"


@dataclass(frozen=True)
class BohmParams:
    p: int
    q: int
    alpha: int = 0
    n_points: int = 4001
    tol: float = 1e-10
    bracket: tuple = (0.05, 1.5)
    scan_points: int = 400

    def __post_init__(self):
        if self.p < 2 or self.q < 2:
            raise DomainError("Böhm metrics need p, q >= 2")
        if self.alpha < 0:
            raise DomainError("branch index alpha must be non-negative")
        if not 0 < self.bracket[0] < self.bracket[1]:
            raise DomainError("b0 bracket must be a positive increasing pair")

    @property
    def Lambda(self) -> float:
        return float(self.p + self.q)

    @property
    def in_existence_range(self) -> bool:
        return self.p + self.q + 1 <= 9


@dataclass(frozen=True, eq=False)
class BohmSolution:
    params: BohmParams
    T: float
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    adot: np.ndarray
    bdot: np.ndarray
    addot: np.ndarray
    bddot: np.ndarray
    topology: BohmTopology
    b0: float
    diagnostics: dict = field(default_factory=dict)
    label: str = "numerical"
    kappa: Optional[np.ndarray] = None  # (1 - adot^2)/a^2, cancellation-free at poles

    @property
    def grid(self) -> Grid:
        return Grid(self.T, len(self.t))

    @property
    def p(self) -> int:
        return self.params.p

    @property
    def q(self) -> int:
        return self.params.q

    def base_geometry(self) -> BaseGeometry:
        return BaseGeometry(self.grid, self.p, self.a, Topology.CLOSED_INTERVAL_BASE, self.adot, self.addot,
                            kappa=self.kappa)

    def warped_product(self, fibre: FibreDescriptor | None = None) -> WarpedProduct:
        """Base ``(0,T) x S^p``, warping ``f = b``, fibre ``S^q`` (``mu = q - 1``) unless given."""
        fibre = FibreDescriptor.round_sphere(self.q) if fibre is None else fibre
        if fibre.m != self.q or abs(fibre.mu - (self.q - 1)) > 1e-12:
            raise DomainError("fibre must have dimension q and Einstein constant q - 1")
        return WarpedProduct(self.base_geometry(), self.b, fibre, self.params.Lambda, self.bdot, self.bddot)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t, self.a, self.b):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ConeMetric:
    p: int
    q: int

    @property
    def A(self) -> float:
        return math.sqrt((self.p - 1) / (self.p + self.q - 1))

    @property
    def B(self) -> float:
        return math.sqrt((self.q - 1) / (self.p + self.q - 1))

    def profiles(self, t):
        t = np.asarray(t, dtype=float)
        s, c = np.sin(t), np.cos(t)
        return self.A * s, self.A * c, -self.A * s, self.B * s, self.B * c, -self.B * s


# --------------------------------------------------------------------------- equations


def ode_rhs(state, p: int, q: int, Lambda: float | None = None) -> np.ndarray:
    """``(a, adot, b, bdot) -> (adot, addot, bdot, bddot)`` from the two second-order equations."""
    a, ad, b, bd = state
    Lam = float(p + q) if Lambda is None else Lambda
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise DomainError("pole reached: a or b is not positive")
    add = a * (-Lam - q * ad * bd / (a * b) - (p - 1) * (ad**2 - 1.0) / a**2)
    bdd = b * (-Lam - p * ad * bd / (a * b) - (q - 1) * (bd**2 - 1.0) / b**2)
    return np.array([ad, add, bd, bdd])


def constraint(state, p: int, q: int, Lambda: float | None = None):
    """First integral; vanishes on every solution."""
    a, ad, b, bd = state
    Lam = float(p + q) if Lambda is None else Lambda
    return (
        p * (p - 1) * (ad**2 - 1.0) / a**2
        + q * (q - 1) * (bd**2 - 1.0) / b**2
        + 2.0 * p * q * ad * bd / (a * b)
        + (p + q - 1) * Lam
    )


def einstein_residuals(a, ad, add, b, bd, bdd, p, q, Lambda=None, kappa_a=None, kappa_b=None):
    """Residuals of the two second-order equations and the first integral.

    ``kappa_a``/``kappa_b`` optionally replace ``(1 - adot^2)/a^2`` and
    ``(1 - bdot^2)/b^2``, which lose all digits next to a pole.
    """
    Lam = float(p + q) if Lambda is None else Lambda
    ka = (1.0 - ad**2) / a**2 if kappa_a is None else kappa_a
    kb = (1.0 - bd**2) / b**2 if kappa_b is None else kappa_b
    cross = ad * bd / (a * b)
    ee1 = add / a + q * cross - (p - 1) * ka + Lam
    ee2 = bdd / b + p * cross - (q - 1) * kb + Lam
    ee3 = -p * (p - 1) * ka - q * (q - 1) * kb + 2.0 * p * q * cross + (p + q - 1) * Lam
    return ee1, ee2, ee3


def closed_form_residuals(sol):
    """EE1-EE3 on closed-form samples with their exact sectional-curvature terms."""
    p, q = sol.p, sol.q
    if sol.label == "closed-form round":
        ka, kb = 1.0, 1.0
    elif sol.label == "closed-form product":
        ka, kb = 1.0 / product_radius(p, q) ** 2, 1.0 / sol.b0**2
    else:
        raise DomainError("closed_form_residuals needs a closed-form solution")
    with np.errstate(divide="ignore", invalid="ignore"):
        return einstein_residuals(sol.a, sol.adot, sol.addot, sol.b, sol.bdot, sol.bddot, p, q,
                                  kappa_a=ka, kappa_b=kb)


def pole_series(b0: float, p: int, q: int, Lambda: float | None = None) -> tuple[float, float]:
    """``(a3, b2)`` in ``a = t + a3 t^3``, ``b = b0 + b2 t^2`` at a collapsing ``S^p``."""
    Lam = float(p + q) if Lambda is None else Lambda
    b2 = b0 / (2.0 * (p + 1)) * ((q - 1) / b0**2 - Lam)
    a3 = -(Lam + 2.0 * q * b2 / b0) / (6.0 * p)
    return a3, b2


@dataclass(frozen=True)
class PoleSeries:
    """Taylor data at a regular pole: ``x = s + x3 s^3 + ...`` collapses, ``y = y0 + y2 s^2 + ...`` survives."""

    x: np.ndarray
    y: np.ndarray

    @property
    def radius(self) -> float:
        # ratio test on the even/odd coefficient sequences
        ratios = []
        for c, start in ((self.x, 1), (self.y, 0)):
            tail = np.abs(c[start::2])
            for k in range(len(tail) - 4, len(tail) - 1):
                if tail[k] > 0 and tail[k + 1] > 0:
                    ratios.append(tail[k + 1] / tail[k])
        r = max(ratios) if ratios else 0.0
        return np.inf if r == 0 else 1.0 / math.sqrt(r)

    @property
    def switch(self) -> float:
        return float(min(SERIES_SWITCH_MAX, SERIES_SWITCH_FRACTION * self.radius))

    def eval(self, s):
        """``(x, x', x'', y, y', y'')`` in the local coordinate ``s`` (distance to the pole)."""
        s = np.asarray(s, dtype=float)
        out = []
        for c in (self.x, self.y):
            out.extend(P.polyval(s, P.polyder(c, k)) for k in range(3))
        return tuple(out)


def _collapse_kappa(series: PoleSeries, s):
    """``(1 - x'^2)/x^2`` for the collapsing factor, with the ``s^2`` cancelled symbolically."""
    e_s2 = P.polyder(series.x)[2:]  # (x' - 1)/s^2
    x_s = series.x[1:]  # x/s
    e = P.polyval(s, e_s2) * s**2
    return -P.polyval(s, e_s2) * (2.0 + e) / P.polyval(s, x_s) ** 2


def pole_taylor(y0: float, p: int, q: int, Lambda: float | None = None, order: int = SERIES_ORDER) -> PoleSeries:
    """Series of the regular solution at a pole where the ``S^p`` factor collapses and ``y(0) = y0``.

    The coefficients are fixed order by order from the polynomial form of the
    two second-order equations (multiplied through by ``x^2 y`` and ``x y^2``);
    each new pair enters affinely through a triangular 2x2 system.
    """
    Lam = float(p + q) if Lambda is None else Lambda
    X = np.zeros(2 * order + 2)
    Y = np.zeros(2 * order + 2)
    X[1], Y[0] = 1.0, y0

    def residuals(X, Y, k):
        xd, xdd, yd, ydd = P.polyder(X), P.polyder(X, 2), P.polyder(Y), P.polyder(Y, 2)
        mul = P.polymul
        r1 = P.polyadd(P.polyadd(mul(mul(X, Y), xdd), q * mul(mul(X, xd), yd)),
                       P.polyadd((p - 1) * mul(Y, P.polysub(mul(xd, xd), [1.0])), Lam * mul(mul(X, X), Y)))
        r2 = P.polyadd(P.polyadd(mul(mul(X, Y), ydd), p * mul(mul(Y, xd), yd)),
                       P.polyadd((q - 1) * mul(X, P.polysub(mul(yd, yd), [1.0])), Lam * mul(mul(X, Y), Y)))
        pick = lambda r, i: r[i] if i < len(r) else 0.0  # noqa: E731
        return np.array([pick(r1, 2 * k), pick(r2, 2 * k - 1)])

    for k in range(1, order + 1):
        r0 = residuals(X, Y, k)
        J = np.array([[2.0 * y0 * (2 * k + 1) * (k + p - 1), 2.0 * k * q],
                      [0.0, 2.0 * k * y0 * (2 * k - 1 + p)]])
        X[2 * k + 1], Y[2 * k] = np.linalg.solve(J, -r0)
    return PoleSeries(X, Y)


def _series_state(b0, eps, p, q, Lam):
    x, xd, _, y, yd, _ = pole_taylor(b0, p, q, Lam).eval(eps)
    return np.array([x, xd, y, yd], dtype=float)


def _swap(state):
    a, ad, b, bd = state
    return np.array([b, bd, a, ad])


# --------------------------------------------------------------------------- integration


@dataclass
class Trajectory:
    b0: float
    event: str  # "sphere", "product" or "escape"
    t_end: float
    state_end: np.ndarray
    sol: object
    p: int = 2
    q: int = 2
    Lam: float = 4.0


def _rhs(p, q, Lam):
    def f(t, y):
        a, ad, b, bd = y
        add = -Lam * a - q * ad * bd / b - (p - 1) * (ad**2 - 1.0) / a
        bdd = -Lam * b - p * ad * bd / a - (q - 1) * (bd**2 - 1.0) / b
        return [ad, add, bd, bdd]

    return f


def integrate_from_pole(b0: float, params: BohmParams, t_max: float = 12.0, eps: float | None = None,
                        threshold: float = SHOOT_THRESHOLD, rtol: float = RTOL, atol: float = ATOL,
                        method: str = "DOP853") -> Trajectory:
    """Integrate from the series start until ``a`` or ``b`` first drops to ``threshold``."""
    if not b0 > 0:
        raise DomainError("b0 must be positive")
    p, q, Lam = params.p, params.q, params.Lambda
    series = pole_taylor(b0, p, q, Lam)
    eps = min(series.switch, 0.5 * threshold) if eps is None else eps
    x, xd, _, y, yd, _ = series.eval(eps)
    y0 = np.array([x, xd, y, yd])

    def hit_a(t, y):
        return y[0] - threshold

    def hit_b(t, y):
        return y[2] - threshold

    def escape(t, y):
        return 1e3 - max(abs(y[1]), abs(y[3]), y[0], y[2])

    for ev in (hit_a, hit_b, escape):
        ev.terminal = True
    hit_a.direction = hit_b.direction = -1
    sol = solve_ivp(_rhs(p, q, Lam), (eps, t_max), y0, method=method, rtol=rtol, atol=atol,
                    events=(hit_a, hit_b, escape), dense_output=True)
    if sol.status == -1:
        raise RuntimeError(f"integration failed: {sol.message}")
    kind, t_end, y_end = "escape", sol.t[-1], sol.y[:, -1]
    for name, ev_t, ev_y in zip(("product", "sphere", "escape"), sol.t_events, sol.y_events):
        if ev_t.size:
            kind, t_end, y_end = name, ev_t[0], ev_y[0]
    return Trajectory(b0, kind, float(t_end), np.asarray(y_end), sol, p, q, Lam)


def shooting_value(traj: Trajectory) -> float:
    """Defect against the regular terminal series at the collapsing factor.

    At a smooth closing the surviving factor has ``c + c2 s^2`` behaviour in
    ``s = T - t`` and the collapsing one is ``s + O(s^3)``, so its derivative
    must equal ``-2 c2 s`` to third order.
    """
    a, ad, b, bd = traj.state_end
    p, q, Lam = traj.p, traj.q, traj.Lam
    if traj.event == "sphere":
        c2 = pole_series(a, q, p, Lam)[1]
        return float(ad + 2.0 * c2 * b)
    if traj.event == "product":
        c2 = pole_series(b, p, q, Lam)[1]
        return float(bd + 2.0 * c2 * a)
    return float("nan")


@dataclass(frozen=True)
class ScanRow:
    b0: float
    event: str
    value: float


def scan(params: BohmParams) -> list[ScanRow]:
    lo, hi = params.bracket
    rows = []
    for b0 in np.linspace(lo, hi, params.scan_points):
        rows.append(ScanRow(float(b0), *_row(b0, params)))
    return rows


def _candidate_brackets(rows: list[ScanRow], params: BohmParams, depth: int = 2):
    out = []
    for r0, r1 in zip(rows, rows[1:]):
        if r0.event == r1.event:
            if r0.event != "escape" and np.sign(r0.value) != np.sign(r1.value):
                out.append((r0.b0, r1.b0, r0.event))
        elif depth > 0:
            # a root may hide next to a change of collapse type
            sub = [ScanRow(b, *_row(b, params)) for b in np.linspace(r0.b0, r1.b0, 17)]
            out.extend(_candidate_brackets(sub, params, depth - 1))
    return out


def _row(b0, params):
    tr = integrate_from_pole(float(b0), params, rtol=1e-9, atol=1e-11)
    return tr.event, shooting_value(tr)


def _bisect(lo, hi, kind, params):
    """Bisection on the sign of the terminal defect, staying on one collapse type."""
    def g(b0):
        tr = integrate_from_pole(b0, params)
        return (shooting_value(tr) if tr.event == kind else np.nan)

    glo, ghi = g(lo), g(hi)
    if not (np.isfinite(glo) and np.isfinite(ghi)) or np.sign(glo) == np.sign(ghi):
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
        gm = g(mid)
        if not np.isfinite(gm):
            return None
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------- two-sided polish


def _pole_series(kind, c, params, side):
    """Series at the left pole (``S^p`` collapses) or the right pole of the given topology."""
    p, q, Lam = params.p, params.q, params.Lambda
    if side == "right" and kind == "sphere":
        return pole_taylor(c, q, p, Lam)
    return pole_taylor(c, p, q, Lam)


def _layer_state(series, s, swap, reverse):
    """Forward-time ``(a, adot, addot, b, bdot, bddot)`` from pole-local series data."""
    x, xd, xdd, y, yd, ydd = series.eval(s)
    sgn = -1.0 if reverse else 1.0
    a, b = (y, yd * sgn, ydd), (x, xd * sgn, xdd)
    if not swap:
        a, b = b, a
    return (*a, *b)


def _match(b0, cT, T, kind, params, t_m):
    p, q, Lam = params.p, params.q, params.Lambda
    rhs = _rhs(p, q, Lam)
    sl, sr = _pole_series(kind, b0, params, "left"), _pole_series(kind, cT, params, "right")
    el, er = sl.switch, sr.switch
    a, ad, _, b, bd, _ = _layer_state(sl, el, False, False)
    left = solve_ivp(rhs, (el, t_m), [a, ad, b, bd], method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True)
    a, ad, _, b, bd, _ = _layer_state(sr, er, kind == "sphere", True)
    right = solve_ivp(rhs, (T - er, t_m), [a, ad, b, bd], method="DOP853", rtol=RTOL, atol=ATOL,
                      dense_output=True)
    if left.status != 0 or right.status != 0:
        return None, left, right
    return left.y[:, -1] - right.y[:, -1], left, right


def polish(b0, traj: Trajectory, params: BohmParams):
    """Two-sided shooting: ``(b0, c_T, T)`` such that the pole trajectories meet at ``t_m``."""
    kind = traj.event
    a, ad, b, bd = traj.state_end
    T_guess = traj.t_end + (b if kind == "sphere" else a)
    cT_guess = a if kind == "sphere" else b
    t_m = 0.5 * T_guess

    def resid(x):
        r, _, _ = _match(x[0], x[1], x[2], kind, params, t_m)
        return np.full(4, 1e3) if r is None else r

    res = least_squares(resid, [b0, cT_guess, T_guess], xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    b0s, cTs, Ts = res.x
    r, left, right = _match(b0s, cTs, Ts, kind, params, t_m)
    return dict(b0=float(b0s), cT=float(cTs), T=float(Ts), t_m=t_m, mismatch=float(np.max(np.abs(r))),
                left=left, right=right, kind=kind)


def _sample(pol, params: BohmParams) -> BohmSolution:
    T, kind = pol["T"], pol["kind"]
    t = np.linspace(0.0, T, params.n_points)
    Y = np.empty((4, t.size))
    lm = t <= pol["t_m"]
    Y[:, lm] = pol["left"].sol(t[lm])
    Y[:, ~lm] = pol["right"].sol(t[~lm])
    a, ad, b, bd = Y
    sol = _finish(params, T, t, a, ad, b, bd, BohmTopology(kind), pol["b0"], pol["cT"],
                  {"boundary_mismatch": pol["mismatch"]})
    return sol


def _second_derivatives(t, a, ad, b, bd, p, q, Lam, b0, cT, topology):
    with np.errstate(divide="ignore", invalid="ignore"):
        add = -Lam * a - q * ad * bd / b - (p - 1) * (ad**2 - 1.0) / a
        bdd = -Lam * b - p * ad * bd / a - (q - 1) * (bd**2 - 1.0) / b
    return add, bdd


def _apply_layers(params, t, Y, topology, b0, cT):
    """Overwrite both pole layers with the Taylor series (values and two derivatives)."""
    kind = topology.value
    T = t[-1]
    sl, sr = _pole_series(kind, b0, params, "left"), _pole_series(kind, cT, params, "right")
    left = t <= sl.switch
    Y[:, left] = np.array(_layer_state(sl, t[left], False, False))
    right = t >= T - sr.switch
    Y[:, right] = np.array(_layer_state(sr, T - t[right], kind == "sphere", True))
    return Y


def _layer_kappa(params, t, a, ad, topology, b0, cT):
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (1.0 - ad**2) / a**2
    kind = topology.value
    sl = _pole_series(kind, b0, params, "left")
    left = t <= sl.switch
    kappa[left] = _collapse_kappa(sl, t[left])
    if topology is BohmTopology.PRODUCT:
        sr = _pole_series(kind, cT, params, "right")
        right = t >= t[-1] - sr.switch
        kappa[right] = _collapse_kappa(sr, t[-1] - t[right])
    return kappa


def _finish(params, T, t, a, ad, b, bd, topology, b0, cT, diag, label="numerical", layers=True, exact=None,
            kappa_exact=None):
    p, q, Lam = params.p, params.q, params.Lambda
    if exact is None:
        add, bdd = _second_derivatives(t, a, ad, b, bd, p, q, Lam, b0, cT, topology)
    else:
        add, bdd = exact
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (1.0 - ad**2) / a**2
    if layers:
        Y = _apply_layers(params, t, np.array([a, ad, add, b, bd, bdd]), topology, b0, cT)
        a, ad, add, b, bd, bdd = Y
        kappa = _layer_kappa(params, t, a, ad, topology, b0, cT)
    elif kappa_exact is not None:
        kappa = np.full_like(t, kappa_exact)
    sol = BohmSolution(params, float(T), t, a, b, ad, bd, add, bdd, topology, float(b0), dict(diag), label, kappa)
    sol.diagnostics.update(certify(sol))
    return sol


def certify(sol: BohmSolution) -> dict:
    """Einstein residual (finite-difference second derivatives) and first-integral drift."""
    p, q = sol.p, sol.q
    grid = sol.grid
    mask = interior_mask(grid, (True, True))
    add_fd, bdd_fd = grid.d1(sol.adot), grid.d1(sol.bdot)
    with np.errstate(divide="ignore", invalid="ignore"):
        ee1, ee2, ee3 = einstein_residuals(sol.a, sol.adot, add_fd, sol.b, sol.bdot, bdd_fd, p, q)
    return {
        "einstein_residual_max": float(max(np.max(np.abs(ee1[mask])), np.max(np.abs(ee2[mask])))),
        "constraint_drift_max": float(np.max(np.abs(ee3[mask]))),
    }


# --------------------------------------------------------------------------- closed forms


def closed_form_round(p: int, q: int, n_points: int = 4001) -> BohmSolution:
    params = BohmParams(p, q, 0, n_points)
    T = 0.5 * math.pi
    t = np.linspace(0.0, T, n_points)
    s, c = np.sin(t), np.cos(t)
    s[-1], c[-1] = 1.0, 0.0
    return _finish(params, T, t, s, c, c, -s, BohmTopology.SPHERE, 1.0, 1.0,
                   {"boundary_mismatch": 0.0}, label="closed-form round", layers=False,
                   exact=(-s, -c), kappa_exact=1.0)


def product_radius(p: int, q: int) -> float:
    return math.sqrt(p / (p + q))


def closed_form_product(p: int, q: int, n_points: int = 4001) -> BohmSolution:
    """Homogeneous ``S^{p+1} x S^q``: ``a = r sin(t/r)`` with ``r = sqrt(p/(p+q))``."""
    params = BohmParams(p, q, 1, n_points)
    r = product_radius(p, q)
    T = math.pi * r
    t = np.linspace(0.0, T, n_points)
    a = r * np.sin(t / r)
    a[-1] = 0.0
    b0 = math.sqrt((q - 1) / (p + q))
    one = np.ones_like(t)
    return _finish(params, T, t, a, np.cos(t / r), b0 * one, 0.0 * one, BohmTopology.PRODUCT, b0, b0,
                   {"boundary_mismatch": 0.0}, label="closed-form product", layers=False,
                   exact=(-a / r**2, 0.0 * one), kappa_exact=1.0 / r**2)


def cone_metric(p: int, q: int) -> ConeMetric:
    return ConeMetric(p, q)


# --------------------------------------------------------------------------- solve


@dataclass
class BranchCatalogue:
    params: BohmParams
    roots: list  # (b0, kind) sorted by decreasing b0
    scan_rows: list


_CATALOGUE: dict = {}


def find_branches(params: BohmParams) -> BranchCatalogue:
    key = (params.p, params.q, params.bracket, params.scan_points)
    if key in _CATALOGUE:
        return _CATALOGUE[key]
    rows = scan(params)
    roots = []
    for lo, hi, kind in _candidate_brackets(rows, params):
        b0 = _bisect(lo, hi, kind, params)
        if b0 is not None:
            roots.append((float(b0), kind))
    # the closed forms are exact roots; add them when the scan resolution misses one
    for b0, kind in ((1.0, "sphere"), (math.sqrt((params.q - 1) / params.Lambda), "product")):
        lo, hi = params.bracket
        if lo <= b0 <= hi and not any(abs(r - b0) < 1e-3 and k == kind for r, k in roots):
            roots.append((b0, kind))
    roots.sort(key=lambda r: -r[0])
    deduped = []
    for r in roots:
        if not deduped or abs(deduped[-1][0] - r[0]) > 1e-3:
            deduped.append(r)
    roots = deduped
    cat = BranchCatalogue(params, roots, rows)
    _CATALOGUE[key] = cat
    return cat


def solve_bohm(params: BohmParams) -> BohmSolution:
    cat = find_branches(params)
    report = [(r.b0, r.event, r.value) for r in cat.scan_rows]
    if params.alpha >= len(cat.roots):
        raise NotFoundError(
            f"branch alpha={params.alpha} not found for (p,q)=({params.p},{params.q}); "
            f"{len(cat.roots)} branches in bracket {params.bracket}", report)
    b0, kind = cat.roots[params.alpha]
    expected = "sphere" if params.alpha % 2 == 0 else "product"
    if kind != expected:
        raise NotFoundError(f"branch alpha={params.alpha} has topology {kind}, expected {expected}", report)
    traj = integrate_from_pole(b0, params)
    traj.event = kind
    pol = polish(traj.b0, traj, params)
    sol = _sample(pol, params)
    sol.diagnostics["alpha"] = params.alpha
    return sol


def cone_convergence_report(solutions: list) -> list[dict]:
    """Sup deviation from the double cone after mapping ``[0, T]`` affinely onto ``[0, pi]``."""
    rows = []
    for sol in solutions:
        cone = ConeMetric(sol.p, sol.q)
        tau = sol.t * (math.pi / sol.T)
        da = float(np.max(np.abs(sol.a - cone.A * np.sin(tau))))
        db = float(np.max(np.abs(sol.b - cone.B * np.sin(tau))))
        rows.append({"p": sol.p, "q": sol.q, "alpha": sol.params.alpha, "T": sol.T,
                     "sup_a": da, "sup_b": db, "deviation": da + db})
    return rows


def solution_from_arrays(params: BohmParams, T, a, b, adot, bdot, topology, b0=None, diagnostics=None):
    """Rebuild a solution from stored samples; second derivatives come from the ODE."""
    t = np.linspace(0.0, float(T), len(a))
    a, b, adot, bdot = (np.asarray(x, dtype=float) for x in (a, b, adot, bdot))
    topology = BohmTopology(topology)
    b0 = float(b[0]) if b0 is None else float(b0)
    cT = float(a[-1]) if topology is BohmTopology.SPHERE else float(b[-1])
    return _finish(params, T, t, a, adot, b, bdot, topology, b0, cT, diagnostics or {}, label="loaded", layers=False)
