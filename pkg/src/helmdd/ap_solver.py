"""Fast direct solver of the discrete auxiliary problem (AP).

The AP lives on the auxiliary square with

* the compact scheme rows on M0 (right-hand side ``g``),
* homogeneous Dirichlet rows ``u = 0`` on ``y = +-1.1``,
* local Sommerfeld closures ``u_x -+ i k u = 0`` on ``x = +-1.1``.

A DST-I in ``y`` over the interior rows diagonalises every ``y`` second
difference (eigenvalue ``2 cos(pi mu / n) - 2``), leaving one tridiagonal
system in ``x`` per sine mode.  The Sommerfeld rows are imposed at the half
cell ``x_{M-1/2}``: with ``D = u_M - u_{M-1}`` and ``S = u_M + u_{M-1}``,

    [(1 + k^2 h^2/24) + dyy/24] D + (i k h / 2) [(1 + k^2 h^2/8) + dyy/8] S = 0

which is fourth-order accurate for ``u_x + i k u`` at the half node once
``u_xxx`` and ``u_xx`` are eliminated through the homogeneous equation.  The
half-index value ``u_{M-1/2}`` is the mean ``S/2``.  ``closure="printed"``
selects the alternative row form kept for comparison runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.linalg import lapack

from .stencil import WaveContext

PIVOT_TOL = 1e-13


class APSingularError(ArithmeticError):
    """A per-mode tridiagonal system of the AP is numerically singular."""


@dataclass(eq=False)
class ApPlan:
    ctx: WaveContext
    n: int
    closure: str
    lam: np.ndarray  # (n-1,) y second-difference eigenvalues
    sub: np.ndarray  # (n+1, n-1) per-row, per-mode coefficients
    diag: np.ndarray
    sup: np.ndarray
    cp: np.ndarray  # Thomas factors
    inv_den: np.ndarray
    fallback: dict  # mode index -> gttrf factors, for modes failing the dominance check
    workers: int = 1
    stats: dict = field(default_factory=lambda: {"calls": 0, "rhs": 0, "seconds": 0.0})

    @property
    def shape(self):
        return (self.n + 1, self.n + 1)


def mode_eigenvalues(n: int) -> np.ndarray:
    mu = np.arange(1, n)
    return 2.0 * np.cos(np.pi * mu / n) - 2.0


def _closure_rows(ctx: WaveContext, lam: np.ndarray, closure: str):
    """Per-mode coefficients (left row: u0, u1), (right row: u_{M-1}, u_M)."""
    k, h = ctx.k, ctx.h
    ik = 1j * k
    if closure == "midpoint":
        A = 1.0 + (k * h) ** 2 / 24.0 + lam / 24.0
        B = 1.0 + (k * h) ** 2 / 8.0 + lam / 8.0
        # row scaled by h
        left = (-A - 0.5 * ik * h * B, A - 0.5 * ik * h * B)
        right = (-A + 0.5 * ik * h * B, A + 0.5 * ik * h * B)
    elif closure == "printed":
        A = 1.0 - lam / 6.0 - (k * h) ** 2 / 24.0
        C = 0.5 * h * ((h * k) ** 2 / 8.0 + lam / 2.0)  # coefficient of each u in H, times h
        left = (-(A - ik) - ik * C, (A - ik) - ik * C)
        right = (-(A + ik) + ik * C, (A + ik) + ik * C)
    else:
        raise ValueError(f"unknown closure {closure!r}")
    return left, right


def build_plan(ctx: WaveContext, n: int, closure: str = "midpoint", workers: int = 1) -> ApPlan:
    lam = mode_eigenvalues(n)
    k2, h = ctx.k**2, ctx.h
    P = n - 1
    a = 1.0 / h**2 + lam / (6.0 * h**2) + k2 / 12.0
    d = -2.0 * a + lam / h**2 + k2 + k2 * lam / 12.0
    sub = np.zeros((n + 1, P), dtype=complex)
    diag = np.zeros((n + 1, P), dtype=complex)
    sup = np.zeros((n + 1, P), dtype=complex)
    sub[1:n] = a
    sup[1:n] = a
    diag[1:n] = d
    (l0, l1), (r0, r1) = _closure_rows(ctx, lam, closure)
    diag[0], sup[0] = l0, l1
    sub[n], diag[n] = r0, r1

    scale = np.abs(sub) + np.abs(diag) + np.abs(sup)
    dominant = np.all(np.abs(diag) >= np.abs(sub) + np.abs(sup) - 1e-12 * scale, axis=0)

    cp = np.zeros_like(diag)
    inv_den = np.zeros_like(diag)
    den = diag[0].copy()
    for m in range(n + 1):
        if m:
            den = diag[m] - sub[m] * cp[m - 1]
        bad = dominant & (np.abs(den) < PIVOT_TOL * scale[m])
        if bad.any():
            raise APSingularError(f"AP mode {int(np.argmax(bad)) + 1} is singular (k={ctx.k}, n={n})")
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_den[m] = np.where(dominant, 1.0 / den, 0.0)
            cp[m] = sup[m] * inv_den[m]
        den = np.where(dominant, den, 1.0)

    fallback = {}
    for j in np.flatnonzero(~dominant):
        dl, dd, du, du2, ipiv, info = lapack.zgttrf(sub[1:, j], diag[:, j], sup[:-1, j])
        if info != 0 or np.min(np.abs(dd)) < PIVOT_TOL * scale[:, j].max():
            raise APSingularError(f"AP mode {j + 1} is singular (k={ctx.k}, n={n})")
        fallback[int(j)] = (dl, dd, du, du2, ipiv)

    return ApPlan(ctx=ctx, n=n, closure=closure, lam=lam, sub=sub, diag=diag, sup=sup,
                  cp=cp, inv_den=inv_den, fallback=fallback, workers=workers)


@numba.njit(cache=True, nogil=True)
def _thomas(sub, cp, inv_den, rhs):
    nb, nm, P = rhs.shape
    for b in range(nb):
        for p in range(P):
            rhs[b, 0, p] = rhs[b, 0, p] * inv_den[0, p]
        for m in range(1, nm):
            for p in range(P):
                rhs[b, m, p] = (rhs[b, m, p] - sub[m, p] * rhs[b, m - 1, p]) * inv_den[m, p]
        for m in range(nm - 2, -1, -1):
            for p in range(P):
                rhs[b, m, p] = rhs[b, m, p] - cp[m, p] * rhs[b, m + 1, p]


def solve_ap(plan: ApPlan, g: np.ndarray) -> np.ndarray:
    """Solve the discrete AP for right-hand side(s) ``g`` of shape ``(..., n+1, n+1)``."""
    t0 = time.perf_counter()
    g = np.asarray(g)
    if g.shape[-2:] != plan.shape:
        raise ValueError(f"right-hand side shape {g.shape[-2:]} does not match plan for n={plan.n}")
    if (np.any(g[..., 0, :]) or np.any(g[..., -1, :])
            or np.any(g[..., :, 0]) or np.any(g[..., :, -1])):
        raise ValueError("AP right-hand side must vanish on the outermost node ring")
    lead = g.shape[:-2]
    n = plan.n
    gb = g.reshape((-1,) + plan.shape)
    nb = gb.shape[0]
    rhs = np.zeros((nb, n + 1, n - 1), dtype=complex)
    rhs[:, 1:n, :] = scipy.fft.dst(gb[:, 1:n, 1:n], type=1, axis=-1, norm="ortho",
                                   workers=plan.workers)
    if plan.fallback:
        fb = {j: rhs[:, :, j].T.copy() for j in plan.fallback}
    _thomas(plan.sub, plan.cp, plan.inv_den, rhs)
    for j, (dl, dd, du, du2, ipiv) in plan.fallback.items():
        x, info = lapack.zgttrs(dl, dd, du, du2, ipiv, fb[j])
        rhs[:, :, j] = x.T
    u = np.zeros((nb,) + plan.shape, dtype=complex)
    u[:, :, 1:n] = scipy.fft.idst(rhs, type=1, axis=-1, norm="ortho", workers=plan.workers)
    plan.stats["calls"] += 1
    plan.stats["rhs"] += nb
    plan.stats["seconds"] += time.perf_counter() - t0
    return u.reshape(lead + plan.shape)


def ap_operator(ctx: WaveContext, n: int, closure: str = "midpoint") -> sp.csr_matrix:
    """Sparse matrix of the full AP row set in physical space (row-major node order).

    Independent of the transform path; used to check residuals and as a
    dense-solve oracle on small grids.
    """
    k, h = ctx.k, ctx.h
    k2 = k * k
    N1 = n + 1
    idx = lambda m, j: m * N1 + j
    rows, cols, vals = [], [], []

    def put(r, m, j, v):
        rows.append(r), cols.append(idx(m, j)), vals.append(v)

    inv_h2 = 1.0 / h**2
    w_center = -4 * inv_h2 + 4 * inv_h2 / 6 + 8 * k2 / 12
    w_edge = inv_h2 - 2 * inv_h2 / 6 + k2 / 12
    w_corner = inv_h2 / 6
    ik = 1j * k
    if closure == "midpoint":
        a0, a2 = 1.0 + (k * h) ** 2 / 24.0, 1.0 / 24.0
        b0, b2 = 1.0 + (k * h) ** 2 / 8.0, 1.0 / 8.0
    elif closure != "printed":
        raise ValueError(f"unknown closure {closure!r}")
    for m in range(N1):
        for j in range(N1):
            r = idx(m, j)
            if j == 0 or j == n:
                put(r, m, j, 1.0)
                continue
            if 0 < m < n:
                put(r, m, j, w_center)
                for dm, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    put(r, m + dm, j + dj, w_edge)
                for dm, dj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    put(r, m + dm, j + dj, w_corner)
                continue
            # Sommerfeld rows in terms of the outward difference D = u_outer - u_inner
            # and S = u_outer + u_inner; the left row carries an overall minus sign
            # so that it matches the transform-space row exactly.
            mo, mi = (n, n - 1) if m == n else (0, 1)
            rs = 1.0 if m == n else -1.0
            for dj, wy in ((0, -2.0), (1, 1.0), (-1, 1.0)):
                c = 1.0 if dj == 0 else 0.0
                if closure == "midpoint":
                    cD = a0 * c + a2 * wy
                    cS = 0.5 * ik * h * (b0 * c + b2 * wy)
                else:
                    cD = (1.0 - (k * h) ** 2 / 24.0) * c - wy / 6.0 + rs * ik * c
                    cS = 0.5 * ik * h * ((h * k) ** 2 / 8.0 * c + wy / 2.0)
                jj = j + dj
                put(r, mo, jj, rs * (cD + cS))
                put(r, mi, jj, rs * (-cD + cS))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N1 * N1, N1 * N1), dtype=complex)
    A.sum_duplicates()
    return A
