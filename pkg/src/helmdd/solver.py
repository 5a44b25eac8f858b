"""Least-squares solve of the global system and per-subdomain reconstruction.

The global matrix is factorised once by a thin Householder QR without
pivoting (LAPACK ``zgeqrf``, in place); every right-hand side that shares the
matrix is then solved with ``zunmqr`` plus one triangular solve.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .ap_solver import ApPlan, solve_ap
from .assembly import GlobalSystem, source_grid_rhs
from .boundary_basis import CauchyExpansion
from .extension import GammaNodeMap, SourceField, extend
from .grid import GridSets
from .potential import difference_potential

RANK_TOL = 1e-12


class RankDeficientError(ArithmeticError):
    def __init__(self, column: int, ratio: float):
        super().__init__(f"least-squares matrix is rank deficient at column {column} "
                         f"(|R_jj| ratio {ratio:.3e} < {RANK_TOL:g})")
        self.column = column
        self.ratio = ratio


class FingerprintMismatch(ValueError):
    pass


def fingerprint(matrix: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(matrix.shape).encode())
    h.update(np.asarray(matrix, order="F").tobytes(order="F"))
    return h.hexdigest()


@dataclass(eq=False)
class Factorization:
    qr: np.ndarray  # Householder vectors below the diagonal, R on and above
    tau: np.ndarray
    shape: tuple
    fingerprint: str
    rdiag_ratio: float
    seconds: float

    @property
    def R(self) -> np.ndarray:
        n = self.shape[1]
        return np.triu(self.qr[:n, :n])


def factorize(matrix: np.ndarray | GlobalSystem, overwrite: bool = True, fp: str | None = None) -> Factorization:
    """Thin QR of the (tall) least-squares matrix.

    With ``overwrite`` the (Fortran-ordered) input array is reused as storage
    for the factors and must not be used afterwards.
    """
    A = matrix.matrix if isinstance(matrix, GlobalSystem) else matrix
    m, n = A.shape
    if m < n:
        raise ValueError(f"least-squares matrix needs rows >= columns, got {A.shape}")
    fp = fp or fingerprint(A)
    A = np.asfortranarray(A, dtype=complex)
    t0 = time.perf_counter()
    # a workspace query would copy A; 64 columns per block is ample for zgeqrf
    lwork = max(1, 64 * n)
    qr, tau, _, info = lapack.zgeqrf(A, lwork=lwork, overwrite_a=int(overwrite))
    if info != 0:
        raise ArithmeticError(f"zgeqrf failed with info={info}")
    seconds = time.perf_counter() - t0
    d = np.abs(np.diag(qr[:n, :n])) if n else np.ones(1)
    dmax = d.max() if d.size else 1.0
    ratio = float(d.min() / dmax) if dmax > 0 else 0.0
    if ratio < RANK_TOL:
        raise RankDeficientError(int(np.argmin(d)), ratio)
    return Factorization(qr, tau, (m, n), fp, ratio, seconds)


def solve_coeffs(fact: Factorization, rhs: np.ndarray, fp: str | None = None,
                 ncols: int | None = None) -> tuple[np.ndarray, float]:
    """Least-squares coefficients and the 2-norm residual ``||A c - b||``.

    ``ncols`` solves against the leading columns only; the QR of a leading
    column block is the leading part of the full factorisation.
    """
    if fp is not None and fp != fact.fingerprint:
        raise FingerprintMismatch("right-hand side belongs to a different matrix")
    b = np.asarray(rhs, dtype=complex)
    m, n = fact.shape
    if ncols is not None:
        if not 0 < ncols <= n:
            raise ValueError(f"ncols must lie in 1..{n}")
        n = ncols
    if b.shape[0] != m:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {m}")
    squeeze = b.ndim == 1
    B = np.asfortranarray(b.reshape(m, -1))
    V = fact.qr if n == fact.shape[1] else fact.qr[:, :n]
    _, work, info = lapack.zunmqr("L", "C", V, fact.tau[:n], B, lwork=-1)
    lwork = max(1, int(work[0].real))
    qtb, _, info = lapack.zunmqr("L", "C", V, fact.tau[:n], B, lwork=lwork)
    if info != 0:
        raise ArithmeticError(f"zunmqr failed with info={info}")
    c = solve_triangular(fact.qr[:n, :n], qtb[:n], lower=False, check_finite=False)
    res = np.linalg.norm(qtb[n:], axis=0)
    if squeeze:
        return c[:, 0], float(res[0])
    return c, res


def refine_supplemental(fact: Factorization, system: GlobalSystem, rhs: np.ndarray, c: np.ndarray,
                        fp: str | None = None, max_steps: int = 10) -> tuple[np.ndarray, float]:
    """Drive a weighted (supplemental) solution onto its coefficient equations.

    The weighted problem ``min |Q c - F|^2 + w^2 |C c - d_j|^2`` is re-solved
    with the constraint data shifted by the accumulated defect,
    ``d_{j+1} = d_j + (d - C c_j)``, reusing the factorisation.  A fixed point
    satisfies ``C c = d`` and the optimality conditions of the constrained
    problem, which the eliminated mode solves directly.  Returns the
    coefficients and the BEP residual ``|Q c - F|``.
    """
    nc, C, w = system.n_constraint_rows, system.constraints, system.weight
    b = np.array(rhs, dtype=complex)
    d = b[:nc] / w
    dj = d.copy()
    defect = np.linalg.norm(d - C @ c)
    scale = max(np.linalg.norm(d), np.linalg.norm(c), 1e-300)
    for _ in range(max_steps):
        if defect <= 1e-15 * scale:
            break
        dj_new = dj + (d - C @ c)
        b[:nc] = w * dj_new
        c_new, _ = solve_coeffs(fact, b, fp)
        new_defect = np.linalg.norm(d - C @ c_new)
        if new_defect > 0.5 * defect:  # stagnated at roundoff
            if new_defect < defect:
                c, dj, defect = c_new, dj_new, new_defect
            break
        c, dj, defect = c_new, dj_new, new_defect
    Ac = apply_factored(fact, c)
    return c, float(np.linalg.norm(Ac[nc:] - b[nc:]))


def apply_factored(fact: Factorization, c: np.ndarray) -> np.ndarray:
    """``A c`` from the stored factors (``A = Q R``), for matrices overwritten by ``factorize``."""
    m, n = fact.shape
    y = np.zeros((m, 1), dtype=complex, order="F")
    y[:n, 0] = np.triu(fact.qr[:n, :n]) @ np.asarray(c, dtype=complex)
    _, work, info = lapack.zunmqr("L", "N", fact.qr, fact.tau, y, lwork=-1)
    out, _, info = lapack.zunmqr("L", "N", fact.qr, fact.tau, y, lwork=max(1, int(work[0].real)))
    if info != 0:
        raise ArithmeticError(f"zunmqr failed with info={info}")
    return out[:, 0]


class FactorStore:
    """Factorisations keyed by matrix fingerprint; counts factorisation events."""

    def __init__(self):
        self._store: dict[str, Factorization] = {}
        self.factorizations = 0
        self.reuses = 0
        self.seconds = 0.0

    def get(self, system: GlobalSystem) -> tuple[Factorization, str]:
        fp = system.fingerprint or fingerprint(system.matrix)
        system.fingerprint = fp
        fact = self._store.get(fp)
        if fact is None:
            fact = factorize(system.matrix, overwrite=True, fp=fp)
            system.matrix = None  # storage now belongs to the factors
            self._store[fp] = fact
            self.factorizations += 1
            self.seconds += fact.seconds
        else:
            self.reuses += 1
        return fact, fp


@dataclass(eq=False)
class SubdomainSolution:
    index: int
    values: np.ndarray  # (n+1, n+1) complex, zero off M+
    mask: np.ndarray  # M+
    residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def on_mplus(self) -> np.ndarray:
        return self.values[self.mask]


def reconstruct_one(coeffs: np.ndarray, src_local: SourceField, k: float, plan: ApPlan, sets: GridSets,
                    node_map: GammaNodeMap, terms: int = 5) -> np.ndarray:
    """``u = P_N+ xi + G B f`` on N+ from the ``(2, 4, M*)`` coefficients of one subdomain."""
    cauchy = CauchyExpansion(np.asarray(coeffs, dtype=complex))
    xi = extend(cauchy, src_local, k, node_map, terms)
    u = difference_potential(xi, plan, sets)
    if not src_local.zero:
        u = u + solve_ap(plan, source_grid_rhs(src_local, sets, plan.ctx)) * sets.mask("N+")
    return u


def reconstruct(full_coeffs: np.ndarray, topology, structures: dict, sources: dict,
                terms: int = 5, residual: float = 0.0) -> list[SubdomainSolution]:
    """Per-subdomain solutions on M+.

    ``structures[i]`` is ``(plan, sets, node_map)`` of subdomain ``i`` and
    ``sources[i]`` its SourceField in local coordinates.
    """
    out = []
    for s in topology.subdomains:
        plan, sets, node_map = structures[s.index]
        u = reconstruct_one(full_coeffs[s.index - 1], sources[s.index], s.k, plan, sets, node_map, terms)
        Mp = sets.mask("M+")
        out.append(SubdomainSolution(s.index, u * Mp, Mp, residual))
    return out
