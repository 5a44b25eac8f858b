"""Case configurations, convergence runs, scaling benchmarks and reports.

A case configuration is a YAML mapping (schema in ``docs/config.md``).  One
case may list several problems; they share the global matrix on every grid,
so the matrix is factorised once per grid and reused for every right-hand
side.  Problems that ask for a smaller M* on a grid are solved against a
leading column block of the same factorisation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ap_solver import APSingularError, build_plan, solve_ap
from .assembly import (ELIMINATED, SUPPLEMENTAL, AssemblyError, QBlockCache, assemble_global, build_q_block,
                       build_rhs, edge_data, global_rhs)
from .extension import build_node_map
from .grid import build_grid_sets, write_grid_function
from .oracle import UnknownProblemError, sources_and_solutions
from .solver import FactorStore, RankDeficientError, factorize, reconstruct, refine_supplemental, solve_coeffs
from .stencil import WaveContext
from .topology import (BoundaryCondition, BoundaryConditionError, EdgeId, InterfaceSpec, LayoutError,
                       build_layout, validate_bc)

log = logging.getLogger(__name__)

DEFAULT_GRIDS = (64, 128, 256, 512)
DEFAULT_MSTAR = 40


def default_cache_dir() -> Path:
    env = os.environ.get("HELMDD_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "helmdd"


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"{stage}: {err}")
        self.stage = stage
        self.cause = err


# ---------------------------------------------------------------- configuration

@dataclass
class ProblemSpec:
    id: str
    label: str
    k: float | None = None
    wavenumbers: list | None = None
    interfaces: list | None = None
    mstar_by_grid: dict = field(default_factory=dict)
    boundary_data: str | None = None  # "exact" | "zero" overrides every edge's data for this problem


@dataclass
class CaseConfig:
    name: str
    layout: dict
    wavenumbers: list
    problems: list
    description: str = ""
    boundary: BoundaryCondition = field(default_factory=BoundaryCondition)
    boundary_edges: dict = field(default_factory=dict)
    interfaces: dict = field(default_factory=dict)
    grids: tuple = DEFAULT_GRIDS
    mstar: int = DEFAULT_MSTAR
    mstar_by_grid: dict = field(default_factory=dict)
    metric: str = "auto"
    mode: str = ELIMINATED
    closure: str = "midpoint"
    taylor_terms: int = 5
    cache_enabled: bool = True
    cache_dir: str | None = None
    output_dir: str = "results"
    threads: int = 1
    expect: list = field(default_factory=list)
    bench: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def topology(self, layout: dict | None = None, wavenumbers=None):
        layout = layout or self.layout
        ks = self.wavenumbers if wavenumbers is None else wavenumbers
        try:
            topo = build_layout(layout, ks[0] if len(ks) == 1 else ks, None, None)
            bcs = {e: self.boundary_edges.get(e, self.boundary) for e in topo.boundary_edges}
            unknown = set(self.boundary_edges) - set(topo.boundary_edges)
            if unknown:
                raise ConfigError(f"boundary_edges lists non-boundary edges {sorted(map(str, unknown))}")
            ifs = {p: self.interfaces.get(p, InterfaceSpec()) for p in topo.interface_pairs}
            unknown = set(self.interfaces) - set(topo.interface_pairs)
            if unknown:
                raise ConfigError(f"interfaces lists pairs that are not interfaces: {sorted(unknown)}")
            topo = build_layout(layout, ks[0] if len(ks) == 1 else ks, bcs, ifs)
            validate_bc(topo)
        except (LayoutError, BoundaryConditionError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e
        return topo

    def mstar_for(self, n: int, problem: ProblemSpec | None = None) -> int:
        if problem is not None and n in problem.mstar_by_grid:
            return problem.mstar_by_grid[n]
        return self.mstar_by_grid.get(n, self.mstar)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()[:12]


_TOP_KEYS = {"name", "description", "layout", "wavenumbers", "boundary", "boundary_edges", "interfaces",
             "problems", "grids", "mstar", "mstar_by_grid", "metric", "mode", "closure", "taylor_terms",
             "cache", "output_dir", "threads", "expect", "bench"}


def _num(v, what, cplx=False):
    try:
        return complex(v) if cplx else float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected a number, got {v!r}") from None


def _bc(d, what) -> BoundaryCondition:
    if not isinstance(d, dict):
        raise ConfigError(f"{what}: expected a mapping")
    extra = set(d) - {"alpha", "beta", "data", "edge"}
    if extra:
        raise ConfigError(f"{what}: unknown keys {sorted(extra)}")
    a = _num(d.get("alpha", 1.0), f"{what}.alpha")
    b = _num(d.get("beta", 0.0), f"{what}.beta")
    if a == 0 and b == 0:
        raise ConfigError(f"{what}: alpha = beta = 0 is not a boundary condition")
    data = d.get("data", "exact")
    if data not in ("exact", "zero"):
        raise ConfigError(f"{what}.data must be 'exact' or 'zero', got {data!r}")
    return BoundaryCondition(a, b, data)


def _edge(v, what) -> EdgeId:
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, int) for x in v)
            and v[1] in (1, 2, 3, 4) and v[0] >= 1):
        raise ConfigError(f"{what}: an edge is [subdomain, side] with side in 1..4, got {v!r}")
    return EdgeId(v[0], v[1])


def _grid_map(d, what) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{what}: expected a mapping from grid size to M*")
    out = {}
    for k, v in d.items():
        try:
            out[int(k)] = int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{what}: bad entry {k!r}: {v!r}") from None
        if out[int(k)] < 4:
            raise ConfigError(f"{what}: M* must be at least 4")
    return out


def parse_config(raw: dict, name: str | None = None) -> CaseConfig:
    """Validate a configuration mapping; every problem is reported as a ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown configuration keys {sorted(extra)}")
    for req in ("layout", "wavenumbers", "problems"):
        if req not in raw:
            raise ConfigError(f"missing required key {req!r}")
    layout = raw["layout"]
    if isinstance(layout, list):
        layout = {"kind": "explicit", "offsets": layout}
    if not isinstance(layout, dict) or layout.get("kind") not in ("duct", "square", "explicit"):
        raise ConfigError("layout must be {kind: duct|square|explicit, ...}")
    ks = raw["wavenumbers"]
    ks = [ks] if not isinstance(ks, list) else ks
    ks = [_num(k, "wavenumbers") for k in ks]
    if any(k <= 0 for k in ks):
        raise ConfigError("wavenumbers must be positive")

    boundary = _bc(raw.get("boundary", {"alpha": 1, "beta": 0, "data": "exact"}), "boundary")
    edges = {}
    for j, d in enumerate(raw.get("boundary_edges") or []):
        e = _edge(d.get("edge") if isinstance(d, dict) else None, f"boundary_edges[{j}].edge")
        edges[e] = _bc({**{"alpha": boundary.alpha.real, "beta": boundary.beta.real, "data": boundary.data}, **d},
                       f"boundary_edges[{j}]")
    ifaces = {}
    for j, d in enumerate(raw.get("interfaces") or []):
        if not isinstance(d, dict) or "pair" not in d:
            raise ConfigError(f"interfaces[{j}]: expected {{pair: [[i,j],[i,j]], a0, b0, a1, b1}}")
        pr = d["pair"]
        if not (isinstance(pr, list) and len(pr) == 2):
            raise ConfigError(f"interfaces[{j}].pair must list two edges")
        pair = tuple(sorted((_edge(pr[0], f"interfaces[{j}].pair"), _edge(pr[1], f"interfaces[{j}].pair"))))
        coef = {c: _num(d.get(c, dflt), f"interfaces[{j}].{c}", cplx=True)
                for c, dflt in (("a0", 1), ("b0", -1), ("a1", 1), ("b1", 1))}
        if (coef["a0"] == 0 and coef["b0"] == 0) or (coef["a1"] == 0 and coef["b1"] == 0):
            raise ConfigError(f"interfaces[{j}]: a = b = 0 cannot be resolved")
        ifaces[pair] = InterfaceSpec(**coef)

    probs = []
    plist = raw["problems"]
    if not isinstance(plist, list) or not plist:
        raise ConfigError("problems must be a non-empty list")
    for j, p in enumerate(plist):
        if isinstance(p, str):
            p = {"id": p}
        if not isinstance(p, dict) or "id" not in p:
            raise ConfigError(f"problems[{j}]: expected a mapping with an id")
        extra = set(p) - {"id", "label", "k", "wavenumbers", "interfaces", "mstar_by_grid", "boundary_data"}
        if extra:
            raise ConfigError(f"problems[{j}]: unknown keys {sorted(extra)}")
        pid = p["id"]
        if pid not in ("plane_wave", "radial_bump_solution", "sine4_solution", "bump_source_only",
                       "transmission", "zero"):
            raise ConfigError(f"problems[{j}]: unknown problem id {pid!r}")
        bdata = p.get("boundary_data")
        if bdata not in (None, "exact", "zero"):
            raise ConfigError(f"problems[{j}].boundary_data must be 'exact' or 'zero', got {bdata!r}")
        probs.append(ProblemSpec(pid, str(p.get("label", pid)),
                                 None if p.get("k") is None else _num(p["k"], f"problems[{j}].k"),
                                 p.get("wavenumbers"), p.get("interfaces"),
                                 _grid_map(p.get("mstar_by_grid"), f"problems[{j}].mstar_by_grid"), bdata))
    labels = [p.label for p in probs]
    if len(set(labels)) != len(labels):
        raise ConfigError("problem labels must be unique")

    grids = raw.get("grids", list(DEFAULT_GRIDS))
    if not (isinstance(grids, list) and grids and all(isinstance(g, int) and g >= 16 for g in grids)):
        raise ConfigError("grids must be a list of integers >= 16")
    if sorted(set(grids)) != list(grids):
        raise ConfigError("grids must be strictly increasing")
    mstar = int(raw.get("mstar", DEFAULT_MSTAR))
    if mstar < 4:
        raise ConfigError("mstar must be at least 4")
    metric = raw.get("metric", "auto")
    if metric not in ("auto", "exact", "nested"):
        raise ConfigError("metric must be auto, exact or nested")
    mode = raw.get("mode", ELIMINATED)
    if mode not in (ELIMINATED, SUPPLEMENTAL):
        raise ConfigError("mode must be eliminated or supplemental")
    closure = raw.get("closure", "midpoint")
    if closure not in ("midpoint", "printed"):
        raise ConfigError("closure must be midpoint or printed")
    terms = int(raw.get("taylor_terms", 5))
    if terms not in (4, 5):
        raise ConfigError("taylor_terms must be 4 or 5")
    cache = raw.get("cache") or {}
    if not isinstance(cache, dict):
        raise ConfigError("cache must be a mapping {enabled, dir}")
    threads = int(raw.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be positive")
    expect = raw.get("expect") or []
    if not isinstance(expect, list):
        raise ConfigError("expect must be a list of checks")
    for j, chk in enumerate(expect):
        if not isinstance(chk, dict) or not ({"rates", "errors", "factorizations"} & set(chk)):
            raise ConfigError(f"expect[{j}]: needs rates, errors or factorizations")
        if "problem" in chk and chk["problem"] not in labels:
            raise ConfigError(f"expect[{j}]: unknown problem label {chk['problem']!r}")
    bench = raw.get("bench") or {}
    if not isinstance(bench, dict):
        raise ConfigError("bench must be a mapping")

    cfg = CaseConfig(
        name=str(raw.get("name", name or "case")), layout=layout, wavenumbers=ks, problems=probs,
        description=str(raw.get("description", "")), boundary=boundary, boundary_edges=edges,
        interfaces=ifaces, grids=tuple(grids), mstar=mstar,
        mstar_by_grid=_grid_map(raw.get("mstar_by_grid"), "mstar_by_grid"), metric=metric, mode=mode,
        closure=closure, taylor_terms=terms, cache_enabled=bool(cache.get("enabled", True)),
        cache_dir=cache.get("dir"), output_dir=str(raw.get("output_dir", "results")), threads=threads,
        expect=expect, bench=bench, raw=raw,
    )
    topo = cfg.topology()  # validates layout and edge specs
    if len(ks) not in (1, topo.n_subdomains):
        raise ConfigError(f"need 1 or {topo.n_subdomains} wavenumbers, got {len(ks)}")
    for p in probs:
        if p.id == "plane_wave" and p.k is None and len(set(ks)) != 1:
            raise ConfigError("plane_wave on a piecewise-k layout needs an explicit k")
    return cfg


def load_config(path) -> CaseConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return parse_config(raw, Path(path).stem)


def resolve_problem(spec: ProblemSpec, cfg: CaseConfig):
    ks = cfg.wavenumbers
    try:
        if spec.id == "plane_wave":
            return sources_and_solutions("plane_wave", spec.k if spec.k is not None else ks[0])
        if spec.id == "transmission":
            return sources_and_solutions("transmission", wavenumbers=spec.wavenumbers or ks,
                                         interfaces=spec.interfaces)
        return sources_and_solutions(spec.id)
    except (UnknownProblemError, ValueError) as e:
        raise ConfigError(f"problem {spec.label!r}: {e}") from e


# ---------------------------------------------------------------- reports

REPORT_FIELDS = ("problem", "n", "mstar", "metric", "error", "rate", "ls_residual", "factorizations")
TIMING_FIELDS = ("problem", "n", "t_factor", "t_solve", "t_gh", "t_qblock", "cache_hits", "cache_builds")


@dataclass
class ReportRow:
    problem: str
    n: int
    mstar: int
    metric: str
    error: float | None
    rate: float | None
    ls_residual: float
    factorizations: int
    t_factor: float = 0.0
    t_solve: float = 0.0
    t_gh: float = 0.0
    t_qblock: float = 0.0
    cache_hits: int = 0
    cache_builds: int = 0


def _fmt(v, kind="e"):
    if v is None:
        return "-"
    if kind == "e":
        return f"{v:.2e}"
    if kind == "r":
        return f"{v:.2f}"
    if kind == "t":
        return f"{v:.3f}"
    return str(v)


@dataclass
class ConvergenceReport:
    name: str
    digest: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    solutions: dict = field(default_factory=dict, repr=False)

    def problem_rows(self, label: str) -> list:
        return [r for r in self.rows if r.problem == label]

    def errors(self, label: str) -> dict:
        return {r.n: r.error for r in self.problem_rows(label) if r.error is not None}

    def rates(self, label: str) -> dict:
        return {r.n: r.rate for r in self.problem_rows(label) if r.rate is not None}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([r.problem, r.n, r.mstar, r.metric, _fmt(r.error), _fmt(r.rate, "r"),
                        _fmt(r.ls_residual), r.factorizations])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_FIELDS)
        for r in self.rows:
            w.writerow([r.problem, r.n, _fmt(r.t_factor, "t"), _fmt(r.t_solve, "t"), _fmt(r.t_gh, "t"),
                        _fmt(r.t_qblock, "t"), r.cache_hits, r.cache_builds])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"case {self.name}  (config {self.digest}, helmdd {__version__})"]
        for label in dict.fromkeys(r.problem for r in self.rows):
            rows = self.problem_rows(label)
            lines.append("")
            lines.append(f"  {label}  [{rows[0].metric} metric]")
            lines.append(f"  {'n':>6} {'M*':>4} {'error':>10} {'rate':>6} {'ls-resid':>10}")
            for r in rows:
                lines.append(f"  {r.n:>6} {r.mstar:>4} {_fmt(r.error):>10} {_fmt(r.rate, 'r'):>6} "
                             f"{_fmt(r.ls_residual):>10}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.csv").write_text(self.to_csv())
        (d / "report.txt").write_text(self.to_text())
        (d / "timings.csv").write_text(self.timings_csv())
        return d


# ---------------------------------------------------------------- pipeline

@dataclass(eq=False)
class GridStructures:
    """Everything that depends on (k, n) only, shared by all subdomains with that k."""

    n: int
    sets: object
    node_map: object
    plans: dict  # k -> ApPlan
    blocks: dict  # k -> QBlock
    t_gh: float = 0.0
    t_qblock: float = 0.0


def time_gh(plan, repeats: int = 3, seed: int = 0) -> float:
    """Median wall time of one application of the AP solver to a random right-hand side."""
    rng = np.random.default_rng(seed)
    g = np.zeros(plan.shape, dtype=complex)
    g[1:-1, 1:-1] = rng.standard_normal((plan.n - 1, plan.n - 1))
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve_ap(plan, g)
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def build_structures(topology, n: int, mstar: int, cache: QBlockCache, closure="midpoint", terms=5,
                     workers: int = 1, timing: bool = True) -> GridStructures:
    sets = build_grid_sets(n)
    node_map = build_node_map(sets)
    plans, blocks = {}, {}
    t_q = 0.0
    for s in topology.subdomains:
        k = s.k
        if k not in plans:
            try:
                plans[k] = build_plan(WaveContext(k, sets.grid.h), n, closure, workers)
            except APSingularError as e:
                raise NumericalFailure(f"AP plan (k={k}, n={n})", e) from e
        elif not cache.enabled:
            continue
        # every subdomain requests its block; repeats of a wavenumber are cache hits
        t0 = time.perf_counter()
        blocks[k] = build_q_block(plans[k].ctx, sets, plans[k], node_map, mstar, terms, cache, workers)
        t_q += time.perf_counter() - t0
    t_gh = time_gh(plans[max(plans)]) if timing else 0.0
    return GridStructures(n, sets, node_map, plans, blocks, t_gh, t_q)


def _nested_error(fine: list, coarse: list) -> float:
    """Max difference at coarse M+ nodes; fine node index = 2 * coarse index (same coordinates)."""
    err = 0.0
    for uf, (uc, mc) in zip(fine, coarse):
        idx = np.argwhere(mc)
        d = np.abs(uf[2 * idx[:, 0], 2 * idx[:, 1]] - uc[idx[:, 0], idx[:, 1]])
        err = max(err, float(d.max()) if d.size else 0.0)
    return err


def run_case(cfg: CaseConfig, grids=None, mode: str | None = None, mstar_override: int | None = None,
             cache: QBlockCache | None = None, threads: int | None = None,
             keep_solutions: bool = False) -> ConvergenceReport:
    """Run every problem of a case on every grid and collect errors, rates and timings."""
    grids = tuple(grids or cfg.grids)
    mode = mode or cfg.mode
    workers = threads or cfg.threads
    topo = cfg.topology()
    if cache is None:
        cache = QBlockCache(cfg.cache_dir or default_cache_dir(), cfg.cache_enabled)
    problems = [(spec, resolve_problem(spec, cfg)) for spec in cfg.problems]
    report = ConvergenceReport(cfg.name, cfg.digest(), meta={"mode": mode, "grids": list(grids)})
    previous: dict = {}
    last_err: dict = {}
    for n in grids:
        mst = {spec.label: (mstar_override or cfg.mstar_for(n, spec)) for spec, _ in problems}
        m_sys = max(mst.values())
        hits0, builds0 = cache.hits, cache.builds
        log.info("%s: n=%d, M*=%d", cfg.name, n, m_sys)
        st = build_structures(topo, n, m_sys, cache, cfg.closure, cfg.taylor_terms, workers)
        structures = {s.index: (st.plans[s.k], st.sets, st.node_map) for s in topo.subdomains}
        blocks = {s.index: st.blocks[s.k] for s in topo.subdomains}
        store = FactorStore()
        system = None
        for spec, prob in problems:
            m_p = mst[spec.label]
            srcs = {s.index: prob.source(s.k).shifted(s.center) for s in topo.subdomains}
            try:
                rhs = {s.index: build_rhs(srcs[s.index], st.plans[s.k].ctx, st.plans[s.k], st.sets,
                                          st.node_map, cfg.taylor_terms) for s in topo.subdomains}
            except APSingularError as e:
                raise NumericalFailure("right-hand side", e) from e
            try:
                data = edge_data(topo, prob, m_p, pad_to=m_sys, override=spec.boundary_data)
                use_blocks = blocks
                if mode == SUPPLEMENTAL and m_p != m_sys:
                    use_blocks = {i: b.sliced(m_p) for i, b in blocks.items()}
                    data = edge_data(topo, prob, m_p, override=spec.boundary_data)
            except (AssemblyError, UnknownProblemError) as e:
                raise ConfigError(f"problem {spec.label!r}: {e}") from e
            try:
                if system is None or (mode == SUPPLEMENTAL and system.mstar != m_p):
                    system = assemble_global(topo, use_blocks, rhs, data, mode)
                    b, e0 = system.rhs, system.e0
                else:
                    b, e0 = global_rhs(system, topo, use_blocks, rhs, data)
                n_before = store.factorizations
                fact, fp = store.get(system)
                t_factor = fact.seconds if store.factorizations > n_before else 0.0
                t0 = time.perf_counter()
                ncols = system.leading_columns(m_p) if mode == ELIMINATED else None
                c, res = solve_coeffs(fact, b, fp, ncols)
                if mode == SUPPLEMENTAL:
                    c, res = refine_supplemental(fact, system, b, c, fp)
                t_solve = time.perf_counter() - t0
            except RankDeficientError as e:
                raise NumericalFailure(f"factorisation (n={n}, problem {spec.label})", e) from e
            except AssemblyError as e:
                raise ConfigError(str(e)) from e
            full = system.full_coefficients(c, e0)
            sols = reconstruct(full, topo, structures, srcs, cfg.taylor_terms, res)
            if not all(np.all(np.isfinite(s.values)) for s in sols):
                raise NumericalFailure("reconstruction", FloatingPointError("non-finite solution values"))
            metric = cfg.metric
            if metric == "auto":
                metric = "exact" if prob.has_exact else "nested"
            if metric == "exact" and not prob.has_exact:
                raise ConfigError(f"problem {spec.label!r} has no exact solution; use the nested metric")
            if metric == "exact":
                X, Y = st.sets.grid.mesh()
                err = 0.0
                for s, sol in zip(topo.subdomains, sols):
                    ue = prob.u(X + s.center[0], Y + s.center[1])
                    err = max(err, float(np.abs(sol.values - ue)[sol.mask].max()))
            else:
                prev = previous.get(spec.label)
                err = (_nested_error([s.values for s in sols], prev[1])
                       if prev is not None and prev[0] * 2 == n else None)
            previous[spec.label] = (n, [(s.values, s.mask) for s in sols])
            pe = last_err.get(spec.label)
            rate = (float(np.log2(pe[1] / err)) if pe is not None and err is not None and pe[1]
                    and err > 0 and pe[0] * 2 == n else None)
            if err is not None:
                last_err[spec.label] = (n, err)
            report.rows.append(ReportRow(spec.label, n, m_p, metric, err, rate, res, store.factorizations,
                                         t_factor, t_solve, st.t_gh, st.t_qblock,
                                         cache.hits - hits0, cache.builds - builds0))
            if keep_solutions:
                report.solutions[(spec.label, n)] = (st.sets, sols)
            log.info("  %s n=%d error=%s rate=%s", spec.label, n, _fmt(err), _fmt(rate, "r"))
        del store, system
    return report


def solve_case(cfg: CaseConfig, n: int | None = None, **kw) -> ConvergenceReport:
    """Single-grid run keeping the reconstructed solutions."""
    n = n or cfg.grids[-1]
    return run_case(cfg, grids=(n,), keep_solutions=True, **kw)


def dump_solutions(report: ConvergenceReport, directory) -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for (label, n), (sets, sols) in report.solutions.items():
        for s in sols:
            p = d / f"{label}_n{n}_sub{s.index}.grid"
            write_grid_function(p, s.values, sets, "M+", {"problem": label, "subdomain": s.index})
            out.append(p)
    return out


# ---------------------------------------------------------------- checks

def check_expectations(report: ConvergenceReport, expect: list) -> list:
    """Evaluate ``expect`` entries; returns ``(description, ok)`` pairs."""
    results = []
    for chk in expect:
        labels = [chk["problem"]] if "problem" in chk else list(dict.fromkeys(r.problem for r in report.rows))
        for label in labels:
            if "rates" in chk:
                rc = chk["rates"]
                lo, hi = rc.get("min", -np.inf), rc.get("max", np.inf)
                frm = rc.get("from_n", 0)
                rates = {n: r for n, r in report.rates(label).items() if n >= frm}
                ok = bool(rates) and all(lo <= r <= hi for r in rates.values())
                shown = ", ".join(f"{n}:{r:.2f}" for n, r in rates.items())
                where = f" (n>={frm})" if frm else ""
                results.append((f"{label} rates{where} in [{lo}, {hi}]: {shown or 'none'}", ok))
            if "errors" in chk:
                ec = chk["errors"]
                ref = {int(k): float(v) for k, v in ec["reference"].items()}
                fac = float(ec.get("factor", 3.0))
                errs = report.errors(label)
                for n, rv in ref.items():
                    e = errs.get(n)
                    ok = e is not None and rv / fac <= e <= rv * fac
                    results.append((f"{label} error n={n}: {_fmt(e)} within {fac:g}x of {rv:.2e}", ok))
            if "factorizations" in chk:
                want = int(chk["factorizations"])
                per_grid = {}
                for r in report.problem_rows(label):
                    per_grid[r.n] = max(per_grid.get(r.n, 0), r.factorizations)
                ok = all(v == want for v in per_grid.values())
                results.append((f"{label} factorizations per grid == {want}: {per_grid}", ok))
    return results


def run_suite(configs, **kw) -> list:
    """Run several cases; one summary dict per (case, problem)."""
    out = []
    for c in configs:
        cfg = c if isinstance(c, CaseConfig) else load_config(c)
        rep = run_case(cfg, **kw)
        checks = check_expectations(rep, cfg.expect)
        for label in dict.fromkeys(r.problem for r in rep.rows):
            rows = rep.problem_rows(label)
            out.append({"case": cfg.name, "problem": label, "n": rows[-1].n, "error": rows[-1].error,
                        "rate": rows[-1].rate,
                        "checks_ok": all(ok for d, ok in checks if d.startswith(label))})
    return out


def suite_text(summary: list) -> str:
    lines = [f"{'case':<28} {'problem':<22} {'n':>5} {'error':>10} {'rate':>6} checks"]
    for s in summary:
        lines.append(f"{s['case']:<28} {s['problem']:<22} {s['n']:>5} {_fmt(s['error']):>10} "
                     f"{_fmt(s['rate'], 'r'):>6} {'ok' if s['checks_ok'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- scaling

@dataclass
class BenchRow:
    vary: str
    value: int
    n: int
    N: int
    rows: int
    cols: int
    t_gh: float
    t_factor: float
    r_gh: float | None = None
    r_factor: float | None = None


def _median_factor_time(system, repeats: int) -> float:
    ts = []
    for _ in range(repeats):
        A = np.array(system.matrix, order="F", copy=True)
        ts.append(factorize(A, overwrite=True, fp="bench").seconds)
        del A
    return float(np.median(ts))


def bench_scaling(cfg: CaseConfig, vary: str = "n", repeats: int = 3, cache: QBlockCache | None = None,
                  values=None, n_fixed: int | None = None, mstar: int | None = None) -> list:
    """Median-of-``repeats`` timings of the AP solver and the QR factorisation.

    ``vary="n"`` uses the case layout on ``values`` (default ``bench.grids`` or
    the case grids); ``vary="N"`` uses ducts of ``values`` subdomains
    (default ``bench.N``) on grid ``n_fixed`` (default ``bench.n``).
    """
    if vary not in ("n", "N"):
        raise ConfigError("vary must be n or N")
    if cache is None:
        cache = QBlockCache(cfg.cache_dir or default_cache_dir(), cfg.cache_enabled)
    mstar = mstar or int(cfg.bench.get("mstar", cfg.mstar))
    rows = []
    if vary == "n":
        values = values or cfg.bench.get("grids") or list(cfg.grids)
        points = [(n, cfg.topology()) for n in values]
    else:
        values = values or cfg.bench.get("N", [1, 2, 4])
        n_fixed = n_fixed or int(cfg.bench.get("n", 512))
        k0 = cfg.wavenumbers[0]
        points = [(n_fixed, cfg.topology({"kind": "duct", "n": int(N)}, [k0])) for N in values]
    for (n, topo), v in zip(points, values):
        st = build_structures(topo, n, mstar, cache, cfg.closure, cfg.taylor_terms, cfg.threads, timing=False)
        t_gh = time_gh(st.plans[max(st.plans)], repeats)
        blocks = {s.index: st.blocks[s.k] for s in topo.subdomains}
        zero = {s.index: np.zeros(st.sets.n_gamma, dtype=complex) for s in topo.subdomains}
        system = assemble_global(topo, blocks, zero, None, ELIMINATED)
        t_f = _median_factor_time(system, repeats)
        rows.append(BenchRow(vary, int(v), n, topo.n_subdomains, system.matrix.shape[0], system.matrix.shape[1],
                             t_gh, t_f))
        del system
        log.info("bench %s=%s: t_gh=%.4f t_factor=%.3f", vary, v, t_gh, t_f)
    for a, b in zip(rows, rows[1:]):
        b.r_gh = b.t_gh / a.t_gh if a.t_gh > 0 else None
        b.r_factor = b.t_factor / a.t_factor if a.t_factor > 0 else None
    return rows


def bench_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("vary", "value", "n", "N", "rows", "cols", "t_gh", "ratio_gh", "t_factor", "ratio_factor"))
    for r in rows:
        w.writerow((r.vary, r.value, r.n, r.N, r.rows, r.cols, f"{r.t_gh:.5f}", _fmt(r.r_gh, "r"),
                    f"{r.t_factor:.4f}", _fmt(r.r_factor, "r")))
    return buf.getvalue()


def bench_text(rows: list) -> str:
    lines = [f"{'n':>6} {'N':>4} {'rows x cols':>16} {'t_gh':>9} {'ratio':>6} {'t_factor':>9} {'ratio':>6}"]
    for r in rows:
        lines.append(f"{r.n:>6} {r.N:>4} {f'{r.rows}x{r.cols}':>16} {r.t_gh:>9.4f} {_fmt(r.r_gh, 'r'):>6} "
                     f"{r.t_factor:>9.3f} {_fmt(r.r_factor, 'r'):>6}")
    return "\n".join(lines) + "\n"
