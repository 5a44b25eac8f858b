import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdd.boundary_basis import DIRICHLET, NEUMANN, CauchyExpansion, data_to_coeffs
from helmdd.extension import (MissingDerivativeError, SourceField, build_node_map, ex_parts, extend,
                              extend_source, extension_matrix, node_map_from_points)
from helmdd.grid import build_grid_sets
from helmdd.topology import BOTTOM, LEFT, RIGHT, SIDE_NORMALS, SIDES, TOP

K = 13.0
C = 1.0 / np.sqrt(2.0)


def u_plane(x, y):
    return np.exp(1j * K * C * (x + y))


def cauchy_plane(mstar):
    ce = CauchyExpansion.zeros(mstar)
    for s in SIDES:
        nx, ny = SIDE_NORMALS[s]
        ce.coeffs[DIRICHLET, s - 1] = data_to_coeffs(u_plane, (0.0, 0.0), s, mstar).coeffs
        ce.coeffs[NEUMANN, s - 1] = data_to_coeffs(lambda x, y: 1j * K * C * (nx + ny) * u_plane(x, y),
                                                   (0.0, 0.0), s, mstar).coeffs
    return ce


def test_node_on_right_side():
    h = 2.2 / 64
    m = node_map_from_points(1 - h / 2, 0.0, h=h)
    assert m.side[0] == RIGHT and np.isclose(m.rho[0], -h / 2) and m.t[0] == 0.0


def test_corner_tie_goes_to_lower_side():
    h = 2.2 / 64
    m = node_map_from_points(1 + h / 3, 1 + h / 3, h=h)
    assert m.side[0] == TOP
    m = node_map_from_points(-1 - h / 3, -1 - h / 3, h=h)
    assert m.side[0] == BOTTOM


def test_all_nodes_bounded_extrapolation():
    sets = build_grid_sets(64)
    m = build_node_map(sets)
    h = sets.grid.h
    assert np.abs(m.t).max() <= 1 + 3 * h
    assert np.abs(m.rho).max() <= 2 * h
    assert set(np.unique(m.side)) == {BOTTOM, TOP, LEFT, RIGHT}


def test_foot_points_on_sides():
    m = build_node_map(build_grid_sets(32))
    x, y = m.foot_points()
    assert np.allclose(np.maximum(np.abs(x), np.abs(y))[np.abs(m.t) <= 1], 1.0)


def test_zero_inputs():
    m = build_node_map(build_grid_sets(32))
    assert not np.any(extend(CauchyExpansion.zeros(8), SourceField.zeros(), K, m))


def test_plane_wave_trace_order():
    errs = []
    for n in (64, 128, 256):
        sets = build_grid_sets(n)
        m = build_node_map(sets)
        x, y = sets.coords("gamma")
        xi = extend(cauchy_plane(40), SourceField.zeros(), K, m)
        errs.append(np.abs(xi - u_plane(x, y)).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios >= 2**4.5), errs


def _poly_source():
    return SourceField(f=lambda x, y: x**2 * y, fx=lambda x, y: 2 * x * y, fy=lambda x, y: x**2,
                       fxx=lambda x, y: 2 * y, fyy=lambda x, y: 0 * x, name="poly")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_affine_split(seed):
    r = np.random.default_rng(seed)
    m = build_node_map(build_grid_sets(32))
    src = _poly_source()
    a = CauchyExpansion(r.standard_normal((2, 4, 10)) + 1j * r.standard_normal((2, 4, 10)))
    b = CauchyExpansion(r.standard_normal((2, 4, 10)))
    da = extend(a, src, K, m) - extend(a, SourceField.zeros(), K, m)
    db = extend(b, src, K, m) - extend(b, SourceField.zeros(), K, m)
    assert np.allclose(da, db, rtol=0, atol=1e-12 * max(1.0, np.abs(da).max()))
    hom, inh = ex_parts(a, src, K, m)
    total = extend(a, src, K, m)
    assert np.abs(hom + inh - total).max() <= 1e-13 * np.abs(total).max()


def test_parts_vanish():
    m = build_node_map(build_grid_sets(32))
    hom, inh = ex_parts(CauchyExpansion.zeros(10), SourceField.zeros(), K, m)
    assert not np.any(hom) and not np.any(inh)
    assert not np.any(extend_source(SourceField.zeros(), K, m))


def test_matrix_shape_and_columns():
    m = build_node_map(build_grid_sets(32))
    E = extension_matrix(m, K, 12)
    assert E.shape == (m.size, 96)
    assert np.all(np.isfinite(E))
    # a node only sees the columns of its own side
    side_of_col = (np.arange(96) // 12) % 4 + 1
    for p in range(0, m.size, 7):
        nz = np.flatnonzero(E[p])
        assert np.all(side_of_col[nz] == m.side[p])


def test_four_term_variant_drops_rho4():
    m = build_node_map(build_grid_sets(32))
    E5, E4 = extension_matrix(m, K, 12, 5), extension_matrix(m, K, 12, 4)
    d = np.abs(E5 - E4)
    assert d.max() > 0
    # only the Dirichlet columns carry a rho^4 term
    assert not np.any(d[:, 48:])
    on_line = np.abs(m.rho) < 1e-14
    assert not np.any(d[on_line])
    with pytest.raises(ValueError):
        extension_matrix(m, K, 12, 3)


def test_missing_derivative():
    m = build_node_map(build_grid_sets(32))
    src = SourceField(f=lambda x, y: x, name="partial")
    with pytest.raises(MissingDerivativeError, match="fxx"):
        extend_source(src, K, m)


def test_shifted_source():
    src = _poly_source().shifted((2.0, 0.0))
    assert src.f(0.0, 1.0) == 4.0
