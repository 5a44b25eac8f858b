"""Compact fourth-order Helmholtz scheme: 9-point left-hand side, 5-point right-hand side.

Both operators act on grid functions of shape ``(..., n+1, n+1)`` and return an
array of the same shape holding the result on M0 (the interior nodes); the
outermost node ring of the result is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WaveContext:
    k: float
    h: float

    def __post_init__(self):
        if not (self.k > 0 and self.h > 0):
            raise ValueError(f"wavenumber and step must be positive, got k={self.k}, h={self.h}")


def apply_lh(u: np.ndarray, ctx: WaveContext) -> np.ndarray:
    u = np.asarray(u)
    k2 = ctx.k**2
    c = u[..., 1:-1, 1:-1]
    edges = u[..., 2:, 1:-1] + u[..., :-2, 1:-1] + u[..., 1:-1, 2:] + u[..., 1:-1, :-2]
    corners = u[..., 2:, 2:] + u[..., :-2, 2:] + u[..., 2:, :-2] + u[..., :-2, :-2]
    inv_h2 = 1.0 / ctx.h**2
    out = np.zeros(u.shape, dtype=np.result_type(u, np.float64))
    out[..., 1:-1, 1:-1] = (
        inv_h2 * (edges - 4.0 * c)
        + (inv_h2 / 6.0) * (corners + 4.0 * c - 2.0 * edges)
        + (k2 / 12.0) * (edges + 8.0 * c)
    )
    return out


def apply_bh(f: np.ndarray, ctx: WaveContext | None = None) -> np.ndarray:
    """``f + (1/12) * (sum of the four neighbours - 4 f)`` on M0."""
    f = np.asarray(f)
    c = f[..., 1:-1, 1:-1]
    edges = f[..., 2:, 1:-1] + f[..., :-2, 1:-1] + f[..., 1:-1, 2:] + f[..., 1:-1, :-2]
    out = np.zeros(f.shape, dtype=np.result_type(f, np.float64))
    out[..., 1:-1, 1:-1] = c + (edges - 4.0 * c) / 12.0
    return out
