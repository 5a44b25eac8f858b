"""Difference potential, boundary projection and BEP residual of one subdomain."""

from __future__ import annotations

import numpy as np

from .ap_solver import ApPlan, solve_ap
from .grid import GridSets, inject, restrict
from .stencil import apply_lh

BATCH = 8


def _check(xi, plan: ApPlan, sets: GridSets):
    if plan.n != sets.grid.n:
        raise ValueError(f"AP plan (n={plan.n}) and grid sets (n={sets.grid.n}) differ")
    xi = np.asarray(xi)
    if xi.shape[-1] != sets.n_gamma:
        raise ValueError(f"density has {xi.shape[-1]} values, gamma has {sets.n_gamma} nodes")
    return xi


def difference_potential(xi: np.ndarray, plan: ApPlan, sets: GridSets) -> np.ndarray:
    """Potential with density ``xi`` on gamma, as a grid function that vanishes off N+.

    ``xi`` may carry leading batch dimensions.
    """
    xi = _check(xi, plan, sets)
    ctx = plan.ctx
    Mp = sets.mask("M+")
    Np = sets.mask("N+")
    w = inject(xi, sets)
    # L w truncated to M+ (zero on M-) is the AP right-hand side
    r = apply_lh(w, ctx) * Mp
    return (w - solve_ap(plan, r)) * Np


def project(xi: np.ndarray, plan: ApPlan, sets: GridSets, batch: int = BATCH) -> np.ndarray:
    """Boundary projection ``P_gamma xi``; leading dimensions of ``xi`` are processed in chunks."""
    xi = _check(xi, plan, sets)
    flat = xi.reshape(-1, xi.shape[-1])
    out = np.empty(flat.shape, dtype=complex)
    for s in range(0, flat.shape[0], batch):
        out[s:s + batch] = restrict(difference_potential(flat[s:s + batch], plan, sets), sets)
    return out.reshape(xi.shape)


def bep_residual(xi: np.ndarray, g: np.ndarray, plan: ApPlan, sets: GridSets) -> float:
    """Max-norm of ``P_gamma xi + Tr G g - xi``; ``g`` is taken as given (supported on M+)."""
    xi = _check(xi, plan, sets)
    defect = project(xi, plan, sets) + restrict(solve_ap(plan, g), sets) - xi
    return float(np.max(np.abs(defect))) if defect.size else 0.0
