"""Layouts of congruent square subdomains, edge classification and interface pairing.

Side labels are global: 1 = bottom, 2 = top, 3 = left, 4 = right.  Horizontal
sides are traversed with increasing x and vertical sides with increasing y, so
the two copies of an interface edge share one parameterisation.  Placements
are integer lattice offsets in units of the side length; subdomain ``(0, 0)``
is centred at the origin.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

BOTTOM, TOP, LEFT, RIGHT = 1, 2, 3, 4
SIDES = (BOTTOM, TOP, LEFT, RIGHT)
SIDE_NAMES = {BOTTOM: "bottom", TOP: "top", LEFT: "left", RIGHT: "right"}
# outward unit normals
SIDE_NORMALS = {BOTTOM: (0.0, -1.0), TOP: (0.0, 1.0), LEFT: (-1.0, 0.0), RIGHT: (1.0, 0.0)}
HORIZONTAL = (BOTTOM, TOP)


class LayoutError(ValueError):
    pass


class BoundaryConditionError(ValueError):
    pass


def side_point(center, side: int, t, half_width: float = 1.0):
    """Global coordinates of the point with parameter ``t`` on a side of the square at ``center``."""
    cx, cy = center
    t = np.asarray(t)
    if side == BOTTOM:
        return cx + half_width * t, np.full_like(t, cy - half_width, dtype=float)
    if side == TOP:
        return cx + half_width * t, np.full_like(t, cy + half_width, dtype=float)
    if side == LEFT:
        return np.full_like(t, cx - half_width, dtype=float), cy + half_width * t
    if side == RIGHT:
        return np.full_like(t, cx + half_width, dtype=float), cy + half_width * t
    raise ValueError(f"side must be one of {SIDES}, got {side}")


class EdgeId(NamedTuple):
    subdomain: int
    side: int

    def __str__(self):
        return f"({self.subdomain},{self.side})"


@dataclass(frozen=True)
class SubdomainSpec:
    index: int
    offset: tuple[int, int]
    k: float
    side_length: float = 2.0

    def __post_init__(self):
        if not self.k > 0:
            raise LayoutError(f"subdomain {self.index}: wavenumber must be positive, got {self.k}")
        if not self.side_length > 0:
            raise LayoutError(f"subdomain {self.index}: side length must be positive")

    @property
    def center(self) -> tuple[float, float]:
        return (self.offset[0] * self.side_length, self.offset[1] * self.side_length)


@dataclass(frozen=True)
class BoundaryCondition:
    """``alpha u + beta du/dn = phi`` on one outer edge; ``data`` names phi."""

    alpha: complex = 1.0
    beta: complex = 0.0
    data: str = "exact"


@dataclass(frozen=True)
class InterfaceSpec:
    """``a0 u_A + b0 u_B = eta0`` and ``a1 du_A/dn_A + b1 du_B/dn_B = eta1`` on a shared edge.

    ``A`` is the lower edge id of the pair.  ``eta0``/``eta1`` are functions of
    global ``(x, y)`` or ``None`` for zero.  The defaults give continuity of the
    solution and of its flux.
    """

    a0: complex = 1.0
    b0: complex = -1.0
    a1: complex = 1.0
    b1: complex = 1.0
    eta0: Callable | None = None
    eta1: Callable | None = None


@dataclass(frozen=True)
class Topology:
    subdomains: tuple[SubdomainSpec, ...]
    boundary_edges: tuple[EdgeId, ...]
    interface_pairs: tuple[tuple[EdgeId, EdgeId], ...]
    bcs: dict = field(default_factory=dict, hash=False)
    interfaces: dict = field(default_factory=dict, hash=False)

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    def subdomain(self, index: int) -> SubdomainSpec:
        return self.subdomains[index - 1]

    def wavenumbers(self) -> list[float]:
        return [s.k for s in self.subdomains]

    def partner(self, edge: EdgeId) -> EdgeId | None:
        for a, b in self.interface_pairs:
            if edge == a:
                return b
            if edge == b:
                return a
        return None


def duct_offsets(n: int) -> list[tuple[int, int]]:
    return [(i, 0) for i in range(n)]


def square_offsets(nd: int) -> list[tuple[int, int]]:
    # row-major from the bottom-left subdomain
    return [(ix, iy) for iy in range(nd) for ix in range(nd)]


def _layout_offsets(layout) -> list[tuple[int, int]]:
    if isinstance(layout, dict):
        kind = layout.get("kind")
        if kind == "duct":
            return duct_offsets(int(layout["n"]))
        if kind == "square":
            return square_offsets(int(layout["n"]))
        if kind == "explicit":
            layout = layout["offsets"]
        else:
            raise LayoutError(f"unknown layout kind {kind!r}")
    offsets = []
    for p in layout:
        if len(p) != 2 or any(float(v) != int(v) for v in p):
            raise LayoutError(f"placement {p!r} is not an integer lattice offset")
        offsets.append((int(p[0]), int(p[1])))
    return offsets


def build_layout(layout, wavenumbers=13.0, bcs=None, interfaces=None, side_length: float = 2.0) -> Topology:
    """Classify edges of a layout into outer boundary edges and interface pairs.

    ``layout`` is ``{"kind": "duct", "n": N}``, ``{"kind": "square", "n": Nd}``,
    ``{"kind": "explicit", "offsets": [...]}`` or a bare list of offsets.
    ``wavenumbers`` is a scalar or one value per subdomain.  ``bcs`` maps
    EdgeId to BoundaryCondition or is a single BoundaryCondition for every
    outer edge (edges missing from a mapping get the default Dirichlet
    condition); ``interfaces`` likewise for InterfaceSpec (default continuity).
    """
    offsets = _layout_offsets(layout)
    if not offsets:
        raise LayoutError("layout has no subdomains")
    if len(set(offsets)) != len(offsets):
        dup = sorted({o for o in offsets if offsets.count(o) > 1})
        raise LayoutError(f"overlapping subdomains at offsets {dup}")
    ks = np.asarray(wavenumbers, dtype=float)
    if ks.ndim and ks.size != len(offsets):
        raise LayoutError(f"{ks.size} wavenumbers given for {len(offsets)} subdomains")
    ks = np.broadcast_to(ks, (len(offsets),))
    subs = tuple(SubdomainSpec(i + 1, o, float(k), side_length) for i, (o, k) in enumerate(zip(offsets, ks)))

    where = {o: i + 1 for i, o in enumerate(offsets)}
    # connectivity
    seen, todo = {offsets[0]}, deque([offsets[0]])
    while todo:
        ox, oy = todo.popleft()
        for nb in ((ox + 1, oy), (ox - 1, oy), (ox, oy + 1), (ox, oy - 1)):
            if nb in where and nb not in seen:
                seen.add(nb)
                todo.append(nb)
    if len(seen) != len(offsets):
        lost = sorted(where[o] for o in offsets if o not in seen)
        raise LayoutError(f"layout is disconnected; subdomains {lost} are not reachable from subdomain 1")

    boundary, pairs = [], []
    for s in subs:
        ox, oy = s.offset
        nbrs = {RIGHT: (ox + 1, oy), LEFT: (ox - 1, oy), TOP: (ox, oy + 1), BOTTOM: (ox, oy - 1)}
        for side in SIDES:
            other = where.get(nbrs[side])
            if other is None:
                boundary.append(EdgeId(s.index, side))
            elif side in (RIGHT, TOP):
                mate = LEFT if side == RIGHT else BOTTOM
                pairs.append((EdgeId(s.index, side), EdgeId(other, mate)))
    boundary.sort()
    pairs = sorted(tuple(sorted(p)) for p in pairs)

    if bcs is None:
        bcs = BoundaryCondition()
    if isinstance(bcs, BoundaryCondition):
        bcs = {e: bcs for e in boundary}
    else:
        given = {EdgeId(*e): bc for e, bc in bcs.items()}
        bcs = {e: BoundaryCondition() for e in boundary}
        bcs.update(given)
    if interfaces is None:
        interfaces = InterfaceSpec()
    if isinstance(interfaces, InterfaceSpec):
        interfaces = {p: interfaces for p in pairs}
    else:
        interfaces = {tuple(sorted((EdgeId(*a), EdgeId(*b)))): v for (a, b), v in interfaces.items()}
    return Topology(subs, tuple(boundary), tuple(pairs), bcs, interfaces)


def validate_bc(topology: Topology) -> None:
    """Raise BoundaryConditionError unless every edge carries a usable condition."""
    for e in topology.boundary_edges:
        bc = topology.bcs.get(e)
        if bc is None:
            raise BoundaryConditionError(f"edge {e} has no boundary condition")
        if bc.alpha == 0 and bc.beta == 0:
            raise BoundaryConditionError(f"edge {e}: alpha = beta = 0 is not a boundary condition")
        if not bc.data:
            raise BoundaryConditionError(f"edge {e}: missing boundary data reference")
    for p in topology.interface_pairs:
        spec = topology.interfaces.get(p)
        if spec is None:
            raise BoundaryConditionError(f"interface {p[0]}-{p[1]} has no interface condition")
        if (spec.a0 == 0 and spec.b0 == 0) or (spec.a1 == 0 and spec.b1 == 0):
            raise BoundaryConditionError(f"interface {p[0]}-{p[1]}: condition cannot be resolved")
    extra = set(topology.bcs) - set(topology.boundary_edges)
    if extra:
        raise BoundaryConditionError(f"boundary conditions given for non-boundary edges {sorted(map(str, extra))}")
