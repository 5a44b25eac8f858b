"""Auxiliary Cartesian grid of one subdomain and its difference-potential node sets.

All grid work happens in the canonical subdomain frame: the subdomain is the
square ``(-1, 1)^2`` and the auxiliary domain is ``(-1.1, 1.1)^2``.  Node
``(m, n)`` sits at ``x_m = -1.1 + m*h``, ``y_n = -1.1 + n*h`` with ``h = 2.2/n``.

Grid functions are plain complex arrays of shape ``(..., n+1, n+1)`` indexed
``[m, n]`` (x first).  Index sets are stored as boolean masks; the ordered
``(m, n)`` lists are lexicographic, which fixes the row layout of every
matrix built on gamma.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

AUX_HALF_WIDTH = 1.1
HALF_WIDTH = 1.0

SET_NAMES = ("N0", "M0", "M+", "M-", "N+", "N-", "gamma")


@dataclass(frozen=True)
class AuxGrid:
    """Uniform (n+1) x (n+1) node grid on the auxiliary square."""

    n: int
    aux_half_width: float = AUX_HALF_WIDTH
    half_width: float = HALF_WIDTH

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"grid needs at least 4 cells per direction, got n={self.n}")
        if not self.aux_half_width > self.half_width > 0:
            raise ValueError("auxiliary square must strictly contain the subdomain")

    @property
    def h(self) -> float:
        return 2.0 * self.aux_half_width / self.n

    @cached_property
    def x(self) -> np.ndarray:
        # x_m = -1.1 + m*h; nested grids share nodes bitwise for power-of-two n
        return -self.aux_half_width + np.arange(self.n + 1) * self.h

    @property
    def y(self) -> np.ndarray:
        return self.x

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 1, self.n + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")


@dataclass(frozen=True, eq=False)
class GridSets:
    """Masks of the node sets N0, M0, M+, M-, N+, N- and gamma on one AuxGrid."""

    grid: AuxGrid
    masks: dict = field(repr=False)

    def mask(self, name: str) -> np.ndarray:
        return self.masks[name]

    def indices(self, name: str) -> np.ndarray:
        """Sorted ``(K, 2)`` array of ``(m, n)`` pairs of the named set."""
        return np.argwhere(self.masks[name])

    def flat(self, name: str) -> np.ndarray:
        """Flat (row-major) node indices of the named set, in sorted order."""
        return np.flatnonzero(self.masks[name])

    def size(self, name: str) -> int:
        return int(self.masks[name].sum())

    @cached_property
    def gamma_flat(self) -> np.ndarray:
        return self.flat("gamma")

    @property
    def n_gamma(self) -> int:
        return self.gamma_flat.size

    def coords(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(name)
        return self.grid.x[idx[:, 0]], self.grid.y[idx[:, 1]]


_STENCIL_3x3 = np.ones((3, 3), dtype=bool)


def stencil_closure(mask: np.ndarray) -> np.ndarray:
    """Nodes touched by the 3x3 stencil applied at every node of ``mask``."""
    return ndimage.binary_dilation(mask, structure=_STENCIL_3x3)


def build_grid_sets(n: int | AuxGrid) -> GridSets:
    grid = n if isinstance(n, AuxGrid) else AuxGrid(n)
    if grid.n < 16:
        raise ValueError(f"n must be at least 16, got {grid.n}")
    X, Y = grid.mesh()
    N0 = np.ones(grid.shape, dtype=bool)
    M0 = np.zeros(grid.shape, dtype=bool)
    M0[1:-1, 1:-1] = True
    a = grid.half_width
    # open square, with nodes exactly on the boundary assigned to M+
    inside = (np.abs(X) <= a) & (np.abs(Y) <= a)
    Mp = M0 & inside
    Mm = M0 & ~Mp
    Np = stencil_closure(Mp)
    Nm = stencil_closure(Mm)
    gamma = Np & Nm
    masks = {"N0": N0, "M0": M0, "M+": Mp, "M-": Mm, "N+": Np, "N-": Nm, "gamma": gamma}
    for m in masks.values():
        m.setflags(write=False)
    return GridSets(grid=grid, masks=masks)


def restrict(u: np.ndarray, sets: GridSets, name: str = "gamma") -> np.ndarray:
    """Values of the grid function ``u`` (shape ``(..., n+1, n+1)``) on a node set."""
    flat = sets.gamma_flat if name == "gamma" else sets.flat(name)
    return _restrict_flat(u, flat, sets.grid)


def inject(values: np.ndarray, sets: GridSets, name: str = "gamma") -> np.ndarray:
    """Grid function equal to ``values`` on the named set and zero elsewhere on N0."""
    flat = sets.gamma_flat if name == "gamma" else sets.flat(name)
    values = np.asarray(values)
    if values.shape[-1] != flat.size:
        raise ValueError(f"expected {flat.size} values on {name}, got {values.shape[-1]}")
    npts = (sets.grid.n + 1) ** 2
    out = np.zeros(values.shape[:-1] + (npts,), dtype=np.result_type(values, np.complex128))
    out[..., flat] = values
    return out.reshape(values.shape[:-1] + sets.grid.shape)


def _restrict_flat(u, flat, grid):
    u = np.asarray(u)
    if u.shape[-2:] != grid.shape:
        raise ValueError(f"grid function shape {u.shape[-2:]} does not match grid {grid.shape}")
    return u.reshape(u.shape[:-2] + (-1,))[..., flat]


def restrict_indices(u: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Values at an explicit ``(K, 2)`` list of ``(m, n)`` pairs."""
    indices = np.asarray(indices, dtype=int).reshape(-1, 2)
    nx, ny = u.shape[-2:]
    if indices.size and (indices.min() < 0 or indices[:, 0].max() >= nx or indices[:, 1].max() >= ny):
        raise IndexError("index set lies outside N0")
    return u[..., indices[:, 0], indices[:, 1]]


GRID_MAGIC = b"HDDGRID1"
GRID_FORMAT_VERSION = 1


def write_grid_function(path, values: np.ndarray, sets: GridSets, name: str = "M+", meta: dict | None = None):
    """Dump a grid function restricted to one node set.

    Layout: 8-byte magic ``HDDGRID1``, little-endian u64 header length, UTF-8
    JSON header (``format_version``, ``n``, ``h``, ``aux_half_width``, ``set``,
    ``count``, ``dtype``, plus ``meta``), then ``count`` little-endian complex128
    values for the set's nodes in lexicographic ``(m, n)`` order.
    """
    vals = restrict(values, sets, name) if np.shape(values)[-2:] == sets.grid.shape else np.asarray(values)
    vals = np.ascontiguousarray(vals, dtype="<c16").reshape(-1)
    if vals.size != sets.size(name):
        raise ValueError(f"expected {sets.size(name)} values on {name}, got {vals.size}")
    header = {"format_version": GRID_FORMAT_VERSION, "n": sets.grid.n, "h": sets.grid.h,
              "aux_half_width": sets.grid.aux_half_width, "set": name, "count": int(vals.size),
              "dtype": "<c16", **(meta or {})}
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(vals.tobytes())


def read_grid_function(path) -> tuple[dict, np.ndarray, GridSets]:
    """Inverse of :func:`write_grid_function`: header, full-shape grid function, grid sets."""
    with open(path, "rb") as fh:
        if fh.read(8) != GRID_MAGIC:
            raise ValueError(f"{path}: not a grid dump")
        (L,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(L).decode())
        raw = fh.read()
    if header.get("format_version") != GRID_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    vals = np.frombuffer(raw, dtype="<c16")
    if vals.size != header["count"]:
        raise ValueError(f"{path}: truncated data")
    sets = build_grid_sets(AuxGrid(header["n"], header["aux_half_width"]))
    return header, inject(vals.astype(complex), sets, header["set"]), sets
