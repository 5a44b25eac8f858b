"""Q-blocks, per-subdomain right-hand sides and the coupled global system.

For one subdomain the discrete BEP with the extended Cauchy data reads

    (P_gamma - I) Ex^(H) c = (I - P_gamma) Ex^(I) f - Tr G B f,

i.e. ``Q c = F``.  Column ``(kind, side, degree)`` of ``Q`` is the BEP defect
of the single Chebyshev basis element on that side; ``Q`` depends only on
``(k, n, M*)`` and is cached.

Coupling: every original coefficient is either retained or an affine
function of retained ones (``c_all = E c_ret + e0``).  Boundary edges keep
the Dirichlet coefficients of Robin/Neumann edges and the Neumann ones of
Dirichlet edges; interface pairs keep the coefficients of the lower edge id.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import struct
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ap_solver import ApPlan, solve_ap
from .boundary_basis import data_to_coeffs
from .extension import GammaNodeMap, SourceField, extend_source, extension_matrix
from .grid import GridSets, inject, restrict
from .potential import BATCH, project
from .stencil import WaveContext, apply_bh, apply_lh
from .topology import Topology, validate_bc

SCHEME_VERSION = 1
CACHE_FORMAT_VERSION = 1
CACHE_MAGIC = b"HDDQBLK1"
ELIMINATED, SUPPLEMENTAL = "eliminated", "supplemental"
SUPPLEMENTAL_WEIGHT = 1.0


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------- Q-blocks

@dataclass(frozen=True)
class QBlockKey:
    k: float
    n: int
    mstar: int
    closure: str = "midpoint"
    terms: int = 5
    geometry: str = ""
    scheme: int = SCHEME_VERSION

    def base(self) -> str:
        """Hash of every key field except M* (blocks for larger M* contain smaller ones)."""
        d = asdict(self)
        d.pop("mstar")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def geometry_hash(sets: GridSets) -> str:
    g = sets.grid
    h = hashlib.sha256()
    h.update(struct.pack("<qdd", g.n, g.aux_half_width, g.half_width))
    h.update(np.ascontiguousarray(sets.gamma_flat, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


@dataclass(eq=False)
class QBlock:
    matrix: np.ndarray  # (|gamma|, 8 M*)
    key: QBlockKey
    seconds: float = 0.0

    @property
    def mstar(self) -> int:
        return self.key.mstar

    def sliced(self, mstar: int) -> "QBlock":
        """Columns of the degree < ``mstar`` basis elements, in the layout for ``mstar``."""
        if mstar == self.mstar:
            return self
        if mstar > self.mstar:
            raise ValueError("cannot widen a Q-block")
        q = self.matrix.reshape(-1, 2, 4, self.mstar)[..., :mstar]
        key = QBlockKey(**{**asdict(self.key), "mstar": mstar})
        return QBlock(np.ascontiguousarray(q.reshape(q.shape[0], 8 * mstar)), key, 0.0)


class QBlockCache:
    """In-memory and optional on-disk store of Q-blocks.

    A request is served from any stored block with the same base key and
    M* at least as large.  Disk files that fail any check are ignored and
    replaced on the next insert.
    """

    def __init__(self, directory: str | os.PathLike | None = None, enabled: bool = True):
        self.directory = Path(directory) if directory else None
        self.enabled = enabled
        self._mem: dict[str, QBlock] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.builds = 0

    def get(self, key: QBlockKey) -> QBlock | None:
        if not self.enabled:
            return None
        base = key.base()
        blk = self._mem.get(base)
        if blk is None or blk.mstar < key.mstar:
            disk = self._load_best(key)
            if disk is not None:
                blk = disk
                with self._lock:
                    self._mem[base] = disk
        if blk is None or blk.mstar < key.mstar:
            self.misses += 1
            return None
        self.hits += 1
        return blk.sliced(key.mstar)

    def put(self, block: QBlock) -> None:
        if not self.enabled:
            return
        base = block.key.base()
        with self._lock:
            cur = self._mem.get(base)
            if cur is None or cur.mstar <= block.mstar:
                self._mem[base] = block
        if self.directory is not None:
            write_qblock(self.directory / _file_name(block.key), block)

    def _load_best(self, key: QBlockKey) -> QBlock | None:
        if self.directory is None or not self.directory.is_dir():
            return None
        best = None
        for p in self.directory.glob(f"qblock-{key.base()}-m*.bin"):
            try:
                m = int(p.stem.rsplit("-m", 1)[1])
            except ValueError:
                continue
            if m >= key.mstar and (best is None or m < best[0]):
                best = (m, p)
        if best is None:
            return None
        want = QBlockKey(**{**asdict(key), "mstar": best[0]})
        return read_qblock(best[1], want)

    def entries(self) -> list[dict]:
        out = []
        if self.directory is not None and self.directory.is_dir():
            for p in sorted(self.directory.glob("qblock-*.bin")):
                hdr = read_header(p)
                out.append({"file": p.name, "bytes": p.stat().st_size,
                            **({"key": hdr["key"], "created": hdr["created"]} if hdr else {"key": None})})
        return out

    def clear(self) -> int:
        with self._lock:
            self._mem.clear()
        removed = 0
        if self.directory is not None and self.directory.is_dir():
            for p in self.directory.glob("qblock-*.bin"):
                p.unlink()
                removed += 1
        return removed


def _file_name(key: QBlockKey) -> str:
    return f"qblock-{key.base()}-m{key.mstar}.bin"


def write_qblock(path: Path, block: QBlock) -> None:
    """Write ``magic | u64 header length | JSON header | raw <c16 row-major data``."""
    data = np.ascontiguousarray(block.matrix, dtype="<c16")
    header = {
        "format_version": CACHE_FORMAT_VERSION,
        "key": asdict(block.key),
        "rows": data.shape[0],
        "cols": data.shape[1],
        "dtype": "<c16",
        "order": "C",
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "sha256": hashlib.sha256(data.tobytes()).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".bin")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<Q", len(hb)))
            fh.write(hb)
            fh.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path: Path) -> dict | None:
    try:
        with open(path, "rb") as fh:
            if fh.read(8) != CACHE_MAGIC:
                return None
            (L,) = struct.unpack("<Q", fh.read(8))
            if L > 1 << 20:
                return None
            return json.loads(fh.read(L).decode())
    except (OSError, ValueError, struct.error):
        return None


def read_qblock(path: Path, key: QBlockKey) -> QBlock | None:
    """Load a cached block; ``None`` if the file is corrupt or belongs to another key."""
    try:
        with open(path, "rb") as fh:
            if fh.read(8) != CACHE_MAGIC:
                return None
            (L,) = struct.unpack("<Q", fh.read(8))
            if L > 1 << 20:
                return None
            hdr = json.loads(fh.read(L).decode())
            if hdr.get("format_version") != CACHE_FORMAT_VERSION or hdr.get("key") != asdict(key):
                return None
            rows, cols = int(hdr["rows"]), int(hdr["cols"])
            if cols != 8 * key.mstar:
                return None
            raw = fh.read()
    except (OSError, ValueError, KeyError, struct.error):
        return None
    if len(raw) != rows * cols * 16 or hashlib.sha256(raw).hexdigest() != hdr.get("sha256"):
        return None
    mat = np.frombuffer(raw, dtype="<c16").reshape(rows, cols).astype(complex)
    return QBlock(mat, key, 0.0)


def build_q_block(ctx: WaveContext, sets: GridSets, plan: ApPlan, node_map: GammaNodeMap, mstar: int,
                  terms: int = 5, cache: QBlockCache | None = None, workers: int = 1) -> QBlock:
    key = QBlockKey(float(ctx.k), sets.grid.n, int(mstar), plan.closure, terms, geometry_hash(sets))
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    t0 = time.perf_counter()
    E = extension_matrix(node_map, ctx.k, mstar, terms).T.astype(complex)  # (8M*, |gamma|)
    cols = np.empty_like(E)
    chunks = [slice(s, s + BATCH) for s in range(0, E.shape[0], BATCH)]

    def work(sl):
        cols[sl] = project(E[sl], plan, sets) - E[sl]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, chunks))
    else:
        for sl in chunks:
            work(sl)
    if not np.all(np.isfinite(cols)):
        raise FloatingPointError("non-finite entries in Q-block")
    block = QBlock(np.ascontiguousarray(cols.T), key, time.perf_counter() - t0)
    if cache is not None:
        cache.builds += 1
        cache.put(block)
    return block


# ---------------------------------------------------------------- right-hand sides

def source_grid_rhs(src_local: SourceField, sets: GridSets, ctx: WaveContext | None = None) -> np.ndarray:
    """``B f`` on M+ and zero elsewhere (the AP right-hand side of the particular solution)."""
    if src_local.zero:
        return np.zeros(sets.grid.shape, dtype=complex)
    X, Y = sets.grid.mesh()
    return apply_bh(src_local.grid_values(X, Y), ctx) * sets.mask("M+")


def build_rhs(src_local: SourceField, ctx: WaveContext, plan: ApPlan, sets: GridSets,
              node_map: GammaNodeMap, terms: int = 5) -> np.ndarray:
    """``F = (I - P_gamma) Ex^(I) f - Tr G B f`` for one subdomain (``src_local`` in local coordinates)."""
    if src_local.zero:
        return np.zeros(sets.n_gamma, dtype=complex)
    exi = extend_source(src_local, ctx.k, node_map, terms)
    g = source_grid_rhs(src_local, sets, ctx)
    # (I - P) v = Tr G (L inject(v))|M+ on gamma, so both terms share one AP solve
    r = apply_lh(inject(exi, sets), ctx) * sets.mask("M+") - g
    return restrict(solve_ap(plan, r), sets)


# ---------------------------------------------------------------- coupling

def _gidx(mstar: int, i: int, kind: int, side: int) -> int:
    """Global index of degree 0 of coefficient family (subdomain i, kind, side)."""
    return (i - 1) * 8 * mstar + (kind * 4 + side - 1) * mstar


@dataclass
class EdgeData:
    """Chebyshev coefficients of the boundary data (per edge) and interface data (per pair)."""

    bc: dict = field(default_factory=dict)  # EdgeId -> (M*,)
    eta: dict = field(default_factory=dict)  # (EdgeId, EdgeId) -> ((M*,), (M*,))


def edge_data(topology: Topology, problem, mstar: int, pad_to: int | None = None,
              override: str | None = None) -> EdgeData:
    """Expand the boundary data of ``problem`` on every outer edge, and interface data on pairs.

    With ``pad_to`` the M*-term expansions are zero-padded to that length;
    ``override`` ("exact" or "zero") replaces every edge's data reference.
    """
    out = EdgeData()
    if pad_to is not None and pad_to > mstar:
        small = edge_data(topology, problem, mstar, override=override)
        pad = lambda v: np.concatenate([v, np.zeros(pad_to - mstar, dtype=complex)])
        out.bc = {e: pad(v) for e, v in small.bc.items()}
        out.eta = {p: (pad(a), pad(b)) for p, (a, b) in small.eta.items()}
        return out
    for e in topology.boundary_edges:
        bc = topology.bcs[e]
        center = topology.subdomain(e.subdomain).center
        ref = override or bc.data
        if ref == "zero":
            out.bc[e] = np.zeros(mstar, dtype=complex)
        elif ref == "exact":
            if not getattr(problem, "has_exact", True):
                raise AssemblyError(f"edge {e}: problem {problem.name!r} has no exact solution; "
                                    f"use zero boundary data")
            phi = problem.boundary_data(bc.alpha, bc.beta, e.side)
            out.bc[e] = data_to_coeffs(phi, center, e.side, mstar).coeffs
        else:
            raise AssemblyError(f"edge {e}: unknown boundary data reference {ref!r}")
    for pair in topology.interface_pairs:
        spec = topology.interfaces[pair]
        A = pair[0]
        center = topology.subdomain(A.subdomain).center
        etas = []
        for fn in (spec.eta0, spec.eta1):
            etas.append(np.zeros(mstar, dtype=complex) if fn is None
                        else data_to_coeffs(fn, center, A.side, mstar).coeffs)
        out.eta[pair] = tuple(etas)
    return out


def _solve_pair(a, b, what):
    if b != 0:
        return "B"
    if a != 0:
        return "A"
    raise AssemblyError(f"interface {what}: a = b = 0 cannot be resolved")


def elimination_map(topology: Topology, mstar: int, data: EdgeData | None = None):
    """``(E, e0, retained)`` with ``c_all = E c_ret + e0``; retained indices sorted."""
    n_all = 8 * topology.n_subdomains * mstar
    deg = np.arange(mstar)
    rows, cols, vals = [], [], []
    e0 = np.zeros(n_all, dtype=complex)
    eliminated = np.zeros(n_all, dtype=bool)
    links = []  # (eliminated block start, retained block start or None, factor)

    for e in topology.boundary_edges:
        bc = topology.bcs[e]
        d = np.zeros(mstar) if data is None else data.bc[e]
        i0 = _gidx(mstar, e.subdomain, 0, e.side)
        i1 = _gidx(mstar, e.subdomain, 1, e.side)
        if bc.beta != 0:
            links.append((i1, i0, -bc.alpha / bc.beta))
            e0[i1 + deg] = d / bc.beta
        elif bc.alpha != 0:
            links.append((i0, None, 0.0))
            e0[i0 + deg] = d / bc.alpha
        else:
            raise AssemblyError(f"edge {e}: alpha = beta = 0")
    for pair in topology.interface_pairs:
        spec = topology.interfaces[pair]
        A, B = pair
        etas = (np.zeros(mstar), np.zeros(mstar)) if data is None else data.eta[pair]
        for kind, (a, b) in enumerate(((spec.a0, spec.b0), (spec.a1, spec.b1))):
            iA = _gidx(mstar, A.subdomain, kind, A.side)
            iB = _gidx(mstar, B.subdomain, kind, B.side)
            which = _solve_pair(a, b, f"{A}-{B}")
            if which == "B":
                links.append((iB, iA, -a / b))
                e0[iB + deg] = etas[kind] / b
            else:
                links.append((iA, None, 0.0))
                e0[iA + deg] = etas[kind] / a
    for start, _, _ in links:
        if eliminated[start]:
            raise AssemblyError("coefficient eliminated twice; inconsistent topology")
        eliminated[start + deg] = True
    # degree-major column order: the system for a smaller M* is a leading column block,
    # so its thin QR is a leading part of this one
    kept = np.flatnonzero(~eliminated)
    retained = kept[np.lexsort((kept, kept % mstar))]
    col_of = -np.ones(n_all, dtype=int)
    col_of[retained] = np.arange(retained.size)
    rows.extend(retained)
    cols.extend(range(retained.size))
    vals.extend([1.0] * retained.size)
    for start, src, fac in links:
        if src is None or fac == 0:
            continue
        rows.extend(start + deg)
        cols.extend(col_of[src + deg])
        vals.extend([fac] * mstar)
    E = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n_all, retained.size))
    return E, e0, retained


def constraint_rows(topology: Topology, mstar: int, data: EdgeData | None = None):
    """Coefficient equations as a sparse ``(4 N M*, 8 N M*)`` matrix and right-hand side."""
    n_all = 8 * topology.n_subdomains * mstar
    deg = np.arange(mstar)
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(entries, b):
        nonlocal r
        for start, coef in entries:
            if coef != 0:
                rows.extend(r + deg)
                cols.extend(start + deg)
                vals.extend([coef] * mstar)
        rhs.append(np.asarray(b, dtype=complex) * np.ones(mstar))
        r += mstar

    for e in topology.boundary_edges:
        bc = topology.bcs[e]
        d = np.zeros(mstar) if data is None else data.bc[e]
        add([(_gidx(mstar, e.subdomain, 0, e.side), bc.alpha),
             (_gidx(mstar, e.subdomain, 1, e.side), bc.beta)], d)
    for pair in topology.interface_pairs:
        spec = topology.interfaces[pair]
        A, B = pair
        etas = (np.zeros(mstar), np.zeros(mstar)) if data is None else data.eta[pair]
        for kind, (a, b) in enumerate(((spec.a0, spec.b0), (spec.a1, spec.b1))):
            _solve_pair(a, b, f"{A}-{B}")
            add([(_gidx(mstar, A.subdomain, kind, A.side), a),
                 (_gidx(mstar, B.subdomain, kind, B.side), b)], etas[kind])
    C = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(r, n_all))
    return C, np.concatenate(rhs) if rhs else np.zeros(0, dtype=complex)


@dataclass(eq=False)
class GlobalSystem:
    matrix: np.ndarray  # Fortran-ordered, factorised in place by the solver
    rhs: np.ndarray
    mode: str
    mstar: int
    n_gamma: tuple
    E: sp.csr_matrix | None = None
    e0: np.ndarray | None = None
    retained: np.ndarray | None = None  # original index of every retained column
    n_constraint_rows: int = 0
    weight: float = 1.0
    n_eliminated_by_bc: int = 0
    fingerprint: str | None = None  # set once the matrix has been hashed for factor reuse
    constraints: sp.csr_matrix | None = None  # unscaled coefficient equations (supplemental mode)

    @property
    def n_cols(self) -> int:
        return self.retained.size if self.mode == ELIMINATED else 8 * len(self.n_gamma) * self.mstar

    def leading_columns(self, mstar: int) -> int:
        """Number of leading columns forming the system for a smaller ``mstar``."""
        if mstar == self.mstar:
            return self.n_cols
        if self.mode != ELIMINATED or mstar > self.mstar:
            raise AssemblyError("only eliminated systems can be restricted to a smaller M*")
        return int(np.count_nonzero(self.retained % self.mstar < mstar))

    def full_coefficients(self, c: np.ndarray, e0: np.ndarray | None = None) -> np.ndarray:
        """All original coefficients, shaped ``(N, 2, 4, M*)``.

        ``e0`` is the data offset of the right-hand side that ``c`` solves
        (defaults to the one the system was assembled with).
        """
        if self.mode == ELIMINATED:
            c = np.asarray(c)
            if c.size < self.n_cols:
                c = np.concatenate([c, np.zeros(self.n_cols - c.size, dtype=complex)])
            full = self.E @ c + (self.e0 if e0 is None else e0)
        else:
            full = np.asarray(c)
        return full.reshape(len(self.n_gamma), 2, 4, self.mstar)


def assemble_global(topology: Topology, blocks: dict, rhs: dict, data: EdgeData | None = None,
                    mode: str = ELIMINATED, weight: float = SUPPLEMENTAL_WEIGHT) -> GlobalSystem:
    """Couple per-subdomain ``Q_i c_i = F_i`` through the boundary and interface equations.

    ``blocks`` and ``rhs`` map subdomain index to the Q matrix and F vector.
    In supplemental mode the coefficient equations, scaled by ``weight``
    times the largest Q entry, are stacked above the BEP rows; the solver
    then refines the weighted solution until the equations hold (see
    ``solver.refine_supplemental``), so the weight only affects roundoff.
    """
    validate_bc(topology)
    N = topology.n_subdomains
    missing = [i for i in range(1, N + 1) if i not in blocks or i not in rhs]
    if missing:
        raise AssemblyError(f"missing Q-block or right-hand side for subdomains {missing}")
    mats = [np.asarray(blocks[i].matrix if isinstance(blocks[i], QBlock) else blocks[i]) for i in range(1, N + 1)]
    mstar = mats[0].shape[1] // 8
    if any(m.shape[1] != 8 * mstar for m in mats):
        raise AssemblyError("Q-blocks disagree on M*")
    ng = tuple(m.shape[0] for m in mats)
    offs = np.concatenate([[0], np.cumsum(ng)])
    if data is None:
        data = EdgeData({e: np.zeros(mstar, complex) for e in topology.boundary_edges},
                        {p: (np.zeros(mstar, complex), np.zeros(mstar, complex)) for p in topology.interface_pairs})

    if mode == ELIMINATED:
        E, e0, retained = elimination_map(topology, mstar, data)
        A = np.zeros((offs[-1], retained.size), dtype=complex, order="F")
        b = np.empty(offs[-1], dtype=complex)
        n_bc = sum(mstar for _ in topology.boundary_edges)
        for i in range(N):
            sl = slice(i * 8 * mstar, (i + 1) * 8 * mstar)
            Ei = E[sl].tocsc()
            used = np.flatnonzero(np.diff(Ei.indptr))
            A[offs[i]:offs[i + 1], used] = mats[i] @ Ei[:, used].toarray()
            b[offs[i]:offs[i + 1]] = np.asarray(rhs[i + 1]) - mats[i] @ e0[sl]
        return GlobalSystem(A, b, mode, mstar, ng, E, e0, retained, 0, 1.0, n_bc)

    if mode == SUPPLEMENTAL:
        C, d = constraint_rows(topology, mstar, data)
        scale = weight * max(float(np.abs(m).max()) for m in mats)
        nc = C.shape[0]
        A = np.zeros((nc + offs[-1], 8 * N * mstar), dtype=complex, order="F")
        A[:nc] = scale * C.toarray()
        b = np.empty(nc + offs[-1], dtype=complex)
        b[:nc] = scale * d
        for i in range(N):
            A[nc + offs[i]:nc + offs[i + 1], i * 8 * mstar:(i + 1) * 8 * mstar] = mats[i]
            b[nc + offs[i]:nc + offs[i + 1]] = rhs[i + 1]
        return GlobalSystem(A, b, mode, mstar, ng, None, None, None, nc, scale, 0, constraints=C)

    raise AssemblyError(f"unknown assembly mode {mode!r}")


def global_rhs(system: GlobalSystem, topology: Topology, blocks: dict, rhs: dict, data: EdgeData):
    """Right-hand side (and elimination offset) of an assembled system for new data.

    The matrix is unchanged, so an existing factorisation can be reused.
    Returns ``(b, e0)``; ``e0`` is ``None`` in supplemental mode.
    """
    N = topology.n_subdomains
    mats = [np.asarray(blocks[i].matrix if isinstance(blocks[i], QBlock) else blocks[i]) for i in range(1, N + 1)]
    mstar = system.mstar
    offs = np.concatenate([[0], np.cumsum(system.n_gamma)])
    if system.mode == ELIMINATED:
        _, e0, _ = elimination_map(topology, mstar, data)
        b = np.empty(offs[-1], dtype=complex)
        for i in range(N):
            sl = slice(i * 8 * mstar, (i + 1) * 8 * mstar)
            b[offs[i]:offs[i + 1]] = np.asarray(rhs[i + 1]) - mats[i] @ e0[sl]
        return b, e0
    _, d = constraint_rows(topology, mstar, data)
    nc = system.n_constraint_rows
    b = np.empty(nc + offs[-1], dtype=complex)
    b[:nc] = system.weight * d
    for i in range(N):
        b[nc + offs[i]:nc + offs[i + 1]] = rhs[i + 1]
    return b, None
