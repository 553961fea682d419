"""Uniform grids, fourth-order finite differences, Simpson weights and 2-jets.

Every field in the package is a sample array on a :class:`Grid`.  Derivatives
either come from the producer (ODE states, closed forms) or from the stencils
here; both routes are packaged as a :class:`Jet` so the tensor formulas never
care where a derivative came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wpstab.errors import DomainError, GridMismatchError

MIN_POINTS = 33

# one-sided fourth-order stencils for the first two boundary nodes
_D1_EDGE = (
    np.array([-25.0, 48.0, -36.0, 16.0, -3.0, 0.0]) / 12.0,
    np.array([-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]) / 12.0,
)
_D2_EDGE = (
    np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0,
    np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0,
)


@dataclass(frozen=True)
class Grid:
    """Uniform nodes ``t_0 = 0 < ... < t_N = T``."""

    T: float
    n_points: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_points < MIN_POINTS:
            raise DomainError(f"grid needs at least {MIN_POINTS} points, got {self.n_points}")
        if not self.T > 0:
            raise DomainError("grid length T must be positive")
        nodes = np.linspace(0.0, float(self.T), int(self.n_points))
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self) -> float:
        return self.T / (self.n_points - 1)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.T, (self.n_points - 1) * factor + 1)

    def check_same(self, other: "Grid") -> None:
        if other.n_points != self.n_points or abs(other.T - self.T) > 1e-12 * self.T:
            raise GridMismatchError(
                f"grid mismatch: ({self.T}, {self.n_points}) vs ({other.T}, {other.n_points})"
            )

    def d1(self, y) -> np.ndarray:
        return d1(y, self.h)

    def d2(self, y) -> np.ndarray:
        return d2(y, self.h)

    def jet(self, y) -> "Jet":
        y = np.asarray(y, dtype=float)
        return Jet(y, d1(y, self.h), d2(y, self.h))

    def simpson_weights(self) -> np.ndarray:
        return simpson_weights(self.n_points, self.h)

    def integrate(self, y) -> float:
        return float(np.dot(self.simpson_weights(), y))


def _apply_edges(out, y, h, edges, power):
    for i, stencil in enumerate(edges):
        out[i] = np.dot(stencil, y[:6]) / h**power
        out[-1 - i] = (-1) ** power * np.dot(stencil, y[::-1][:6]) / h**power


def d1(y, h: float) -> np.ndarray:
    """Fourth-order first derivative on a uniform grid."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[2:-2] = (-y[4:] + 8.0 * y[3:-1] - 8.0 * y[1:-3] + y[:-4]) / (12.0 * h)
    _apply_edges(out, y, h, _D1_EDGE, 1)
    return out


def d2(y, h: float) -> np.ndarray:
    """Fourth-order second derivative on a uniform grid."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[2:-2] = (-y[4:] + 16.0 * y[3:-1] - 30.0 * y[2:-2] + 16.0 * y[1:-3] - y[:-4]) / (12.0 * h * h)
    _apply_edges(out, y, h, _D2_EDGE, 2)
    return out


def d1_matrix(n: int, h: float) -> np.ndarray:
    return np.column_stack([d1(e, h) for e in np.eye(n)])


def d2_matrix(n: int, h: float) -> np.ndarray:
    return np.column_stack([d2(e, h) for e in np.eye(n)])


def _sparse_stencil(n: int, h: float, interior, edges, power):
    from scipy import sparse

    rows, cols, vals = [], [], []
    half = len(interior) // 2
    for i in range(2, n - 2):
        rows += [i] * len(interior)
        cols += list(range(i - half, i + half + 1))
        vals += list(interior)
    for i, stencil in enumerate(edges):
        rows += [i] * 6 + [n - 1 - i] * 6
        cols += list(range(6)) + [n - 1 - j for j in range(6)]
        vals += list(stencil) + list((-1) ** power * stencil)
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return mat / h**power


def d1_sparse(n: int, h: float):
    """Sparse matrix of :func:`d1`."""
    return _sparse_stencil(n, h, np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, _D1_EDGE, 1)


def d2_sparse(n: int, h: float):
    """Sparse matrix of :func:`d2`."""
    return _sparse_stencil(n, h, np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, _D2_EDGE, 2)


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights; an even node count closes with a 3/8 panel."""
    w = np.zeros(n)
    m = n if n % 2 == 1 else n - 3
    w[0:m:2] += 2.0
    w[1:m:2] += 4.0
    w[0] = w[m - 1] = 1.0
    w[:m] *= h / 3.0
    if n % 2 == 0:
        w[m - 1] += 3.0 * h / 8.0
        w[m] += 9.0 * h / 8.0
        w[m + 1] += 9.0 * h / 8.0
        w[m + 2] += 3.0 * h / 8.0
    return w


_EXTRAP = np.array([5.0, -10.0, 10.0, -5.0, 1.0])


def fill_endpoints(y, sides=(True, True)) -> np.ndarray:
    """Replace the flagged endpoint samples by quartic extrapolation from the next five nodes.

    Used for quantities that are 0/0 at a pole but have a finite limit there.
    """
    y = np.array(y, dtype=float, copy=True)
    if y.ndim != 1 or y.size < 6:
        return y
    if sides[0]:
        y[0] = float(np.dot(_EXTRAP, y[1:6]))
    if sides[1]:
        y[-1] = float(np.dot(_EXTRAP, y[-2:-7:-1]))
    return y


class Jet:
    """Value with first and second t-derivatives, closed under arithmetic."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1=0.0, d2=0.0):
        self.v = np.asarray(v, dtype=float)
        self.d1 = np.asarray(d1, dtype=float) + 0.0 * self.v
        self.d2 = np.asarray(d2, dtype=float) + 0.0 * self.v

    @classmethod
    def const(cls, c, like=None):
        v = c if like is None else np.full_like(np.asarray(like, dtype=float), c)
        return cls(v, 0.0, 0.0)

    def _lift(self, other):
        return other if isinstance(other, Jet) else Jet(other, 0.0, 0.0)

    def __add__(self, other):
        o = self._lift(other)
        return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return Jet(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )

    __rmul__ = __mul__

    def reciprocal(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 1.0 / self.v
            return Jet(r, -self.d1 * r * r, (2.0 * self.d1**2 * r - self.d2) * r * r)

    def __truediv__(self, other):
        return self * self._lift(other).reciprocal()

    def __rtruediv__(self, other):
        return self._lift(other) * self.reciprocal()

    def __pow__(self, k):
        with np.errstate(divide="ignore", invalid="ignore"):
            vk1 = self.v ** (k - 1)
            vk2 = self.v ** (k - 2) if k != 2 else np.ones_like(self.v)
            return Jet(self.v**k, k * vk1 * self.d1, k * vk1 * self.d2 + k * (k - 1) * vk2 * self.d1**2)

    def log(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.d1 / self.v
            return Jet(np.log(self.v), r, self.d2 / self.v - r * r)

    def exp(self):
        e = np.exp(self.v)
        return Jet(e, e * self.d1, e * (self.d2 + self.d1**2))

    def sqrt(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.sqrt(self.v)
            return Jet(s, self.d1 / (2.0 * s), self.d2 / (2.0 * s) - self.d1**2 / (4.0 * s**3))

    def derivative(self):
        """Jet of the derivative, valid to first order only (second slot unknown)."""
        return Jet(self.d1, self.d2, np.nan)

    def __getitem__(self, idx):
        return Jet(self.v[idx], self.d1[idx], self.d2[idx])

    def __repr__(self):
        return f"Jet(v={self.v!r}, d1={self.d1!r}, d2={self.d2!r})"
