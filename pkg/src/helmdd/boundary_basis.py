"""Chebyshev representation of per-side boundary data.

Each side of a subdomain is parameterised by ``t in [-1, 1]`` running along
increasing ``x`` (horizontal sides) or increasing ``y`` (vertical sides), so
two subdomains sharing an edge share the parameterisation and their
coefficient vectors can be matched entry by entry.  Coefficients are obtained
by interpolation at the M* Chebyshev-Gauss-Lobatto points.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as C

from .topology import side_point

DIRICHLET, NEUMANN = 0, 1


@lru_cache(maxsize=None)
def lobatto_points(mstar: int) -> np.ndarray:
    return np.cos(np.pi * np.arange(mstar) / (mstar - 1))[::-1].copy()


@lru_cache(maxsize=None)
def _interp_matrix(mstar: int) -> np.ndarray:
    return np.linalg.inv(C.chebvander(lobatto_points(mstar), mstar - 1))


@dataclass(frozen=True)
class SideExpansion:
    """Chebyshev coefficients ``c_0 .. c_{M*-1}`` of one side function of ``t``."""

    coeffs: np.ndarray
    side: int | None = None
    scale: float = 1.0  # dt/ds

    @property
    def mstar(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, t):
        return evaluate(self, t)


def expand(sampler, mstar: int, side: int | None = None, scale: float = 1.0) -> SideExpansion:
    if mstar < 4:
        raise ValueError(f"M* must be at least 4, got {mstar}")
    values = np.asarray(sampler(lobatto_points(mstar)), dtype=complex)
    if not np.all(np.isfinite(values)):
        raise ValueError("boundary samples are not finite")
    return SideExpansion(_interp_matrix(mstar) @ values, side=side, scale=scale)


def evaluate(exp: SideExpansion, t) -> np.ndarray:
    return C.chebval(t, exp.coeffs)


def diff(exp: SideExpansion, order: int = 1) -> SideExpansion:
    """Derivative with respect to arclength, kept at the same coefficient length."""
    d = C.chebder(exp.coeffs, m=order, scl=exp.scale, axis=0) if order else exp.coeffs
    out = np.zeros_like(exp.coeffs, dtype=np.result_type(exp.coeffs, float))
    out[: d.shape[0]] = d
    return SideExpansion(out, side=exp.side, scale=exp.scale)


def data_to_coeffs(phi, center, side: int, mstar: int, half_width: float = 1.0) -> SideExpansion:
    """Expand a function ``phi(x, y)`` of global coordinates along one side of a subdomain."""

    def sampler(t):
        x, y = side_point(center, side, t, half_width)
        return phi(x, y)

    return expand(sampler, mstar, side=side, scale=1.0 / half_width)


@dataclass
class CauchyExpansion:
    """Dirichlet and Neumann coefficients of all four sides: ``coeffs[kind, side-1, degree]``.

    Neumann data are outward normal derivatives of the owning subdomain.
    Flattening follows the Q-block column order: kind, then side, then degree.
    """

    coeffs: np.ndarray
    scale: float = 1.0

    @classmethod
    def zeros(cls, mstar: int, scale: float = 1.0) -> "CauchyExpansion":
        return cls(np.zeros((2, 4, mstar), dtype=complex), scale)

    @classmethod
    def from_flat(cls, vec, mstar: int, scale: float = 1.0) -> "CauchyExpansion":
        return cls(np.asarray(vec, dtype=complex).reshape(2, 4, mstar), scale)

    @property
    def mstar(self) -> int:
        return self.coeffs.shape[-1]

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def side(self, kind: int, side: int) -> SideExpansion:
        return SideExpansion(self.coeffs[kind, side - 1], side=side, scale=self.scale)


def column_index(kind: int, side: int, degree: int, mstar: int) -> int:
    return (kind * 4 + (side - 1)) * mstar + degree
