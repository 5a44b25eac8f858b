"""Equation-based extension of Cauchy data from the square boundary onto gamma.

Every gamma node is attached to the nearest side of the square.  Its value is
the Taylor polynomial in the signed normal offset ``rho`` (positive outward)

    v = xi0 + rho xi1 + rho^2/2 v2 + rho^3/6 v3 + rho^4/24 v4

about the foot point on that side's line, where the higher normal derivatives
come from the Helmholtz equation written in the side's normal/tangential axes:

    v2 = f - xi0'' - k^2 xi0
    v3 = f_n - xi1'' - k^2 xi1
    v4 = f_nn - f_tt - k^2 f + xi0'''' + 2 k^2 xi0'' + k^4 xi0

Primes are arclength derivatives along the side.  The map is affine in the
Cauchy data; its linear part is assembled once as a dense matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C

from .boundary_basis import CauchyExpansion
from .grid import GridSets
from .topology import BOTTOM, LEFT, RIGHT, SIDES, TOP

# sign of the outward normal along its axis, and which axis is normal (0 = x, 1 = y)
_NORMAL_SIGN = {BOTTOM: -1.0, TOP: 1.0, LEFT: -1.0, RIGHT: 1.0}
_NORMAL_AXIS = {BOTTOM: 1, TOP: 1, LEFT: 0, RIGHT: 0}


class MissingDerivativeError(ValueError):
    pass


@dataclass(frozen=True)
class SourceField:
    """Right-hand side ``f`` and the partials the extension needs.

    Callables take ``(x, y)`` arrays.  ``zero=True`` marks ``f = 0``, in which
    case the partials may be omitted.
    """

    f: Callable | None = None
    fx: Callable | None = None
    fy: Callable | None = None
    fxx: Callable | None = None
    fyy: Callable | None = None
    name: str = "zero"
    zero: bool = False

    @classmethod
    def zeros(cls) -> "SourceField":
        return cls(name="zero", zero=True)

    def check(self):
        if self.zero:
            return
        missing = [n for n in ("f", "fx", "fy", "fxx", "fyy") if getattr(self, n) is None]
        if missing:
            raise MissingDerivativeError(f"source {self.name!r} lacks {', '.join(missing)}")

    def shifted(self, center) -> "SourceField":
        """The same field expressed in the local frame of a subdomain centred at ``center``."""
        if self.zero:
            return self
        cx, cy = center
        if cx == 0 and cy == 0:
            return self

        def sh(fn):
            return None if fn is None else (lambda x, y: fn(np.asarray(x) + cx, np.asarray(y) + cy))

        return SourceField(sh(self.f), sh(self.fx), sh(self.fy), sh(self.fxx), sh(self.fyy),
                           name=self.name, zero=False)

    def grid_values(self, X, Y) -> np.ndarray:
        if self.zero:
            return np.zeros(np.shape(X), dtype=complex)
        return np.asarray(self.f(X, Y), dtype=complex) * np.ones(np.shape(X))


@dataclass(frozen=True, eq=False)
class GammaNodeMap:
    """Side assignment, signed normal offset and tangential parameter per gamma node."""

    side: np.ndarray  # (|gamma|,) int in 1..4
    rho: np.ndarray
    t: np.ndarray
    half_width: float
    h: float

    @property
    def size(self) -> int:
        return self.side.size

    def foot_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Local coordinates of each node's foot point on its side line."""
        a = self.half_width
        x = np.where(np.isin(self.side, (BOTTOM, TOP)), a * self.t,
                     np.where(self.side == LEFT, -a, a))
        y = np.where(np.isin(self.side, (LEFT, RIGHT)), a * self.t,
                     np.where(self.side == BOTTOM, -a, a))
        return x, y


def build_node_map(sets: GridSets) -> GammaNodeMap:
    x, y = sets.coords("gamma")
    return node_map_from_points(x, y, sets.grid.half_width, sets.grid.h)


def node_map_from_points(x, y, half_width: float = 1.0, h: float = 0.0) -> GammaNodeMap:
    """Nearest-side assignment for arbitrary local points (ties go to the lower side index)."""
    a = half_width
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dist = np.stack([-y - a, y - a, -x - a, x - a])  # signed offsets for sides 1..4
    # argmin returns the first minimiser, i.e. the lowest side index on ties
    pick = np.argmin(np.abs(dist), axis=0)
    side = pick + 1
    rho = dist[pick, np.arange(x.size)]
    t = np.where(side <= 2, x / a, y / a)
    return GammaNodeMap(side=side, rho=rho, t=t, half_width=a, h=h)


def _derivative_vander(t: np.ndarray, mstar: int, order: int, scale: float) -> np.ndarray:
    """``V[p, m] = (d/ds)^order T_m(t_p)`` with ``dt/ds = scale``."""
    if order == 0:
        return C.chebvander(t, mstar - 1)
    if order >= mstar:
        return np.zeros((t.size, mstar))
    D = C.chebder(np.eye(mstar), m=order, scl=scale, axis=0)  # (mstar-order, mstar)
    return C.chebvander(t, mstar - 1 - order) @ D


def extension_matrix(node_map: GammaNodeMap, k: float, mstar: int, terms: int = 5) -> np.ndarray:
    """Linear part Ex^(H) as a ``(|gamma|, 8 M*)`` matrix in CauchyExpansion flat order."""
    if terms not in (4, 5):
        raise ValueError("terms must be 4 or 5")
    k2 = k * k
    rho = node_map.rho[:, None]
    scale = 1.0 / node_map.half_width
    V0 = _derivative_vander(node_map.t, mstar, 0, scale)
    V2 = _derivative_vander(node_map.t, mstar, 2, scale)
    V4 = _derivative_vander(node_map.t, mstar, 4, scale)
    w4 = rho**4 / 24.0 if terms == 5 else 0.0 * rho
    dir_part = V0 + rho**2 / 2.0 * (-V2 - k2 * V0) + w4 * (V4 + 2.0 * k2 * V2 + k2 * k2 * V0)
    neu_part = rho * V0 + rho**3 / 6.0 * (-V2 - k2 * V0)
    E = np.zeros((node_map.size, 2, 4, mstar))
    for s in SIDES:
        on = node_map.side == s
        E[on, 0, s - 1] = dir_part[on]
        E[on, 1, s - 1] = neu_part[on]
    return E.reshape(node_map.size, 8 * mstar)


def extend_source(src: SourceField, k: float, node_map: GammaNodeMap, terms: int = 5) -> np.ndarray:
    """Inhomogeneous part Ex^(I) f (``src`` in the subdomain's local frame)."""
    src.check()
    if src.zero:
        return np.zeros(node_map.size, dtype=complex)
    x, y = node_map.foot_points()
    rho = node_map.rho
    ev = lambda fn: np.asarray(fn(x, y), dtype=complex) * np.ones(x.shape)
    f, fx, fy, fxx, fyy = ev(src.f), ev(src.fx), ev(src.fy), ev(src.fxx), ev(src.fyy)
    vertical = _side_lookup(node_map.side, _NORMAL_AXIS) == 0
    sgn = _side_lookup(node_map.side, _NORMAL_SIGN)
    fn = sgn * np.where(vertical, fx, fy)
    fnn = np.where(vertical, fxx, fyy)
    ftt = np.where(vertical, fyy, fxx)
    out = rho**2 / 2.0 * f + rho**3 / 6.0 * fn
    if terms == 5:
        out = out + rho**4 / 24.0 * (fnn - ftt - k * k * f)
    return out


def _side_lookup(side: np.ndarray, table: dict) -> np.ndarray:
    lut = np.array([0.0] + [table[s] for s in SIDES])
    return lut[side]


def ex_parts(cauchy: CauchyExpansion, src: SourceField, k: float, node_map: GammaNodeMap,
             terms: int = 5) -> tuple[np.ndarray, np.ndarray]:
    E = extension_matrix(node_map, k, cauchy.mstar, terms)
    return E @ cauchy.flat(), extend_source(src, k, node_map, terms)


def extend(cauchy: CauchyExpansion, src: SourceField, k: float, node_map: GammaNodeMap,
           terms: int = 5) -> np.ndarray:
    hom, inh = ex_parts(cauchy, src, k, node_map, terms)
    return hom + inh
