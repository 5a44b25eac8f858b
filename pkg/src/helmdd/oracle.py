"""Exact and manufactured solutions, the bump source, and 1-D transmission solutions.

Manufactured solutions are given symbolically; the source ``f = lap u + k^2 u``
and every partial the extension needs are produced with sympy and compiled to
numpy callables.  Compactly supported functions (``exp(-1/(c - r^2))``) are
evaluated only where ``c - r^2`` exceeds a small threshold and set to zero
elsewhere; below the threshold every derivative used is smaller than 1e-25.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sy

from .extension import SourceField
from .topology import SIDE_NORMALS

_x, _y, _k = sy.symbols("x y k", real=True)


class UnknownProblemError(KeyError):
    pass


# ---------------------------------------------------------------- 1-D transmission

def transmission_coeffs(k1: float, k2: float) -> tuple[float, float]:
    """Reflection and transmission amplitudes of ``e^{i k1 x}`` hitting a jump to ``k2`` at x = 0.

    Continuity of ``u`` and ``u_x`` gives ``1 + R = T`` and ``k1 (1 - R) = k2 T``.
    """
    if not (k1 > 0 and k2 > 0):
        raise ValueError(f"wavenumbers must be positive, got {k1}, {k2}")
    R = (k1 - k2) / (k1 + k2)
    T = 2.0 * k1 / (k1 + k2)
    return R, T


@dataclass(frozen=True)
class TransmissionSolution:
    """Piecewise plane wave ``A_j e^{i k_j x} + B_j e^{-i k_j x}`` on segment j."""

    wavenumbers: np.ndarray
    interfaces: np.ndarray
    right: np.ndarray  # A_j
    left: np.ndarray  # B_j
    residual: float = 0.0

    @property
    def n_segments(self) -> int:
        return self.wavenumbers.size

    def segment(self, x) -> np.ndarray:
        return np.searchsorted(self.interfaces, np.asarray(x, dtype=float), side="right")

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        j = self.segment(x)
        k = self.wavenumbers[j]
        return k, self.right[j] * np.exp(1j * k * x), self.left[j] * np.exp(-1j * k * x)

    def u(self, x, y=None):
        k, p, m = self._parts(x)
        return p + m

    def ux(self, x, y=None):
        k, p, m = self._parts(x)
        return 1j * k * (p - m)

    def jumps(self) -> tuple[np.ndarray, np.ndarray]:
        """Value and derivative jumps at every interface (right limit minus left limit)."""
        dv, dd = [], []
        for j, xj in enumerate(self.interfaces):
            vals = []
            for seg in (j, j + 1):
                k, A, B = self.wavenumbers[seg], self.right[seg], self.left[seg]
                e = np.exp(1j * k * xj)
                vals.append((A * e + B / e, 1j * k * (A * e - B / e)))
            dv.append(vals[1][0] - vals[0][0])
            dd.append(vals[1][1] - vals[0][1])
        return np.array(dv), np.array(dd)


def transmission_system(wavenumbers, interfaces) -> tuple[np.ndarray, np.ndarray]:
    """The ``(2N-2)``-square continuity system; unknowns ``B_0, A_1, B_1, ..., A_{N-1}``."""
    ks = np.asarray(wavenumbers, dtype=float)
    xs = np.asarray(interfaces, dtype=float)
    N = ks.size
    if N < 2:
        raise ValueError("a transmission solution needs at least two segments")
    if xs.size != N - 1 or np.any(np.diff(xs) <= 0):
        raise ValueError("need N-1 strictly increasing interface positions")
    if np.any(ks <= 0):
        raise ValueError("wavenumbers must be positive")
    n_unk = 2 * N - 2

    def col(seg, which):  # which: 0 = A (right-going), 1 = B (left-going)
        if seg == 0:
            return None if which == 0 else 0
        if seg == N - 1:
            return None if which == 1 else n_unk - 1
        return 2 * seg - 1 + which

    A = np.zeros((n_unk, n_unk), dtype=complex)
    b = np.zeros(n_unk, dtype=complex)
    for j, xj in enumerate(xs):
        for seg, sgn in ((j, 1.0), (j + 1, -1.0)):
            k = ks[seg]
            for which, ph in ((0, np.exp(1j * k * xj)), (1, np.exp(-1j * k * xj))):
                dph = 1j * k * ph * (1.0 if which == 0 else -1.0)
                c = col(seg, which)
                if c is None:
                    if seg == 0:  # the fixed incident amplitude A_0 = 1
                        b[2 * j] -= sgn * ph
                        b[2 * j + 1] -= sgn * dph
                    # B_{N-1} = 0: no incoming wave from the right, nothing to add
                else:
                    A[2 * j, c] += sgn * ph
                    A[2 * j + 1, c] += sgn * dph
    return A, b


def transmission_solution(wavenumbers, interfaces) -> TransmissionSolution:
    ks = np.asarray(wavenumbers, dtype=float)
    A, b = transmission_system(ks, interfaces)
    if np.linalg.cond(A) > 1e12:
        raise np.linalg.LinAlgError("transmission system is singular")
    z = np.linalg.solve(A, b)
    N = ks.size
    right = np.zeros(N, dtype=complex)
    left = np.zeros(N, dtype=complex)
    right[0] = 1.0
    left[0] = z[0]
    for seg in range(1, N - 1):
        right[seg], left[seg] = z[2 * seg - 1], z[2 * seg]
    right[N - 1] = z[-1]
    res = float(np.abs(A @ z - b).max() / max(np.abs(b).max(), 1e-300))
    return TransmissionSolution(ks, np.asarray(interfaces, dtype=float), right, left, res)


# ---------------------------------------------------------------- symbolic fields

@dataclass(frozen=True)
class _Compiled:
    fns: dict
    support: Callable | None  # (x, y) -> bool mask where the closed form is used

    def __call__(self, name, x, y, k):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        fn = self.fns[name]
        if self.support is None:
            return np.asarray(fn(x, y, k), dtype=complex) * np.ones(x.shape)
        out = np.zeros(x.shape, dtype=complex)
        m = self.support(x, y)
        if m.any():
            with np.errstate(all="ignore"):
                out[m] = fn(x[m], y[m], k)
        return out


_NAMES = ("u", "ux", "uy", "uxx", "uyy", "lap", "lap_x", "lap_y", "lap_xx", "lap_yy")


def _compile(expr, support=None) -> _Compiled:
    d = {
        "u": expr,
        "ux": sy.diff(expr, _x),
        "uy": sy.diff(expr, _y),
        "uxx": sy.diff(expr, _x, 2),
        "uyy": sy.diff(expr, _y, 2),
    }
    lap = d["uxx"] + d["uyy"]
    d.update(lap=lap, lap_x=sy.diff(lap, _x), lap_y=sy.diff(lap, _y),
             lap_xx=sy.diff(lap, _x, 2), lap_yy=sy.diff(lap, _y, 2))
    fns = {name: sy.lambdify((_x, _y, _k), sy.simplify(d[name]), "numpy") for name in _NAMES}
    return _Compiled(fns, support)


def _disc_support(c: float, margin: float):
    return lambda x, y: (c - (x * x + y * y)) > margin


@lru_cache(maxsize=None)
def _symbolic(name: str) -> _Compiled:
    r2 = _x**2 + _y**2
    if name == "plane_wave":
        return _compile(sy.exp(sy.I * _k / sy.sqrt(2) * (_x + _y)))
    if name == "radial_bump_solution":
        return _compile(sy.exp(-1 / (1 - r2)), _disc_support(1.0, 1e-2))
    if name == "sine4_solution":
        return _compile(sy.sin(sy.pi * _x) ** 4 * sy.sin(sy.pi * _y))
    if name == "bump":
        return _compile(sy.exp(-1 / (sy.Rational(1, 4) - r2)), _disc_support(0.25, 2.5e-3))
    raise UnknownProblemError(name)


# ---------------------------------------------------------------- problems

@dataclass(frozen=True)
class Problem:
    """Exact solution (optional) and source for one test case.

    ``u``, ``ux``, ``uy`` take global ``(x, y)``; ``source(k)`` returns the
    SourceField for a subdomain with wavenumber ``k`` (global coordinates).
    """

    name: str
    u: Callable | None
    ux: Callable | None
    uy: Callable | None
    source: Callable

    @property
    def has_exact(self) -> bool:
        return self.u is not None

    def boundary_data(self, alpha, beta, side: int) -> Callable:
        """``alpha u + beta du/dn`` for the outward normal of ``side`` (global coordinates)."""
        if self.u is None:
            raise UnknownProblemError(f"problem {self.name!r} has no exact solution for boundary data")
        nx, ny = SIDE_NORMALS[side]

        def phi(x, y):
            val = alpha * self.u(x, y)
            if beta != 0:
                val = val + beta * (nx * self.ux(x, y) + ny * self.uy(x, y))
            return val

        return phi


def _manufactured(name: str, k_solution: float | None) -> Problem:
    comp = _symbolic(name)
    ks = 0.0 if k_solution is None else float(k_solution)
    ev = lambda nm: (lambda x, y: comp(nm, x, y, ks))

    def source(k):
        if name == "plane_wave" and float(k) == ks:
            # exact homogeneous solution: the source vanishes identically
            return SourceField.zeros()
        k2 = float(k) ** 2
        return SourceField(
            f=lambda x, y: comp("lap", x, y, ks) + k2 * comp("u", x, y, ks),
            fx=lambda x, y: comp("lap_x", x, y, ks) + k2 * comp("ux", x, y, ks),
            fy=lambda x, y: comp("lap_y", x, y, ks) + k2 * comp("uy", x, y, ks),
            fxx=lambda x, y: comp("lap_xx", x, y, ks) + k2 * comp("uxx", x, y, ks),
            fyy=lambda x, y: comp("lap_yy", x, y, ks) + k2 * comp("uyy", x, y, ks),
            name=name,
        )

    return Problem(name, ev("u"), ev("ux"), ev("uy"), source)


def bump_source() -> SourceField:
    comp = _symbolic("bump")
    ev = lambda nm: (lambda x, y: comp(nm, x, y, 0.0))
    return SourceField(ev("u"), ev("ux"), ev("uy"), ev("uxx"), ev("uyy"), name="bump")


PROBLEMS = ("plane_wave", "radial_bump_solution", "sine4_solution", "bump_source_only",
            "transmission", "zero")


def sources_and_solutions(identifier: str, k: float | None = None, wavenumbers=None,
                          interfaces=None) -> Problem:
    """Resolve a problem identifier.

    ``k`` is the plane-wave wavenumber; ``wavenumbers``/``interfaces`` define a
    transmission solution (defaults: interfaces halfway between unit-spaced
    subdomains of side 2 centred at 0, 2, 4, ...).
    """
    if identifier in ("plane_wave", "radial_bump_solution", "sine4_solution"):
        if identifier == "plane_wave" and k is None:
            raise ValueError("plane_wave needs a wavenumber")
        return _manufactured(identifier, k if identifier == "plane_wave" else None)
    if identifier == "bump_source_only":
        src = bump_source()
        return Problem(identifier, None, None, None, lambda kk: src)
    if identifier == "zero":
        zero = lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=complex)
        return Problem(identifier, zero, zero, zero, lambda kk: SourceField.zeros())
    if identifier == "transmission":
        if wavenumbers is None:
            raise ValueError("transmission needs the segment wavenumbers")
        ks = list(wavenumbers)
        if interfaces is None:
            interfaces = [1.0 + 2.0 * j for j in range(len(ks) - 1)]
        sol = transmission_solution(ks, interfaces)
        zero = lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=complex)
        u = lambda x, y: sol.u(x) * np.ones(np.shape(y))
        ux = lambda x, y: sol.ux(x) * np.ones(np.shape(y))
        return Problem(identifier, u, ux, zero, lambda kk: SourceField.zeros())
    raise UnknownProblemError(f"unknown problem identifier {identifier!r}")
