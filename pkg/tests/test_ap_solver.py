import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdd.ap_solver import ap_operator, build_plan, mode_eigenvalues, solve_ap
from helmdd.grid import AuxGrid
from helmdd.oracle import bump_source
from helmdd.stencil import WaveContext, apply_bh


def _rhs(rng, n):
    g = np.zeros((n + 1, n + 1), dtype=complex)
    g[1:-1, 1:-1] = rng.standard_normal((n - 1, n - 1)) + 1j * rng.standard_normal((n - 1, n - 1))
    return g


def _row_rhs(g):
    """AP right-hand side in row order: g on M0, zero on Dirichlet and Sommerfeld rows."""
    b = np.zeros_like(g)
    b[1:-1, 1:-1] = g[1:-1, 1:-1]
    return b.ravel()


def test_zero_rhs():
    plan = build_plan(WaveContext(13.0, 2.2 / 64), 64)
    assert not np.any(solve_ap(plan, np.zeros(plan.shape)))


@pytest.mark.parametrize("closure", ["midpoint", "printed"])
@pytest.mark.parametrize("n", [16, 32])
def test_dense_oracle(n, closure, rng):
    ctx = WaveContext(13.0, 2.2 / n)
    plan = build_plan(ctx, n, closure)
    g = _rhs(rng, n)
    A = ap_operator(ctx, n, closure).toarray()
    ref = np.linalg.solve(A, _row_rhs(g)).reshape(plan.shape)
    u = solve_ap(plan, g)
    assert np.abs(u - ref).max() <= 1e-12 * np.abs(ref).max()


@pytest.mark.parametrize("k", [5.0, 13.0, 40.0])
def test_row_residual(k, rng):
    n = 64
    ctx = WaveContext(k, 2.2 / n)
    plan = build_plan(ctx, n)
    g = _rhs(rng, n)
    u = solve_ap(plan, g)
    A = ap_operator(ctx, n)
    res = (A @ u.ravel() - _row_rhs(g)).reshape(plan.shape)
    assert np.abs(res).max() <= 1e-11 * np.abs(g).max()


def test_bump_source_rows():
    n, k = 64, 13.0
    g_ = AuxGrid(n)
    X, Y = g_.mesh()
    ctx = WaveContext(k, g_.h)
    plan = build_plan(ctx, n)
    g = apply_bh(bump_source().grid_values(X, Y)).astype(complex)
    u = solve_ap(plan, g)
    res = ap_operator(ctx, n) @ u.ravel() - _row_rhs(g)
    assert np.abs(res).max() <= 1e-11 * np.abs(g).max()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_linearity(seed):
    r = np.random.default_rng(seed)
    plan = build_plan(WaveContext(13.0, 2.2 / 32), 32)
    g1, g2 = _rhs(r, 32), _rhs(r, 32)
    lhs = solve_ap(plan, g1 + g2)
    rhs = solve_ap(plan, g1) + solve_ap(plan, g2)
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_batched(rng):
    plan = build_plan(WaveContext(13.0, 2.2 / 32), 32)
    g = np.stack([_rhs(rng, 32) for _ in range(3)])
    u = solve_ap(plan, g)
    for i in range(3):
        assert np.allclose(u[i], solve_ap(plan, g[i]), rtol=0, atol=1e-14 * np.abs(u).max())


def test_rhs_on_outer_ring_rejected():
    plan = build_plan(WaveContext(13.0, 2.2 / 16), 16)
    g = np.zeros(plan.shape)
    g[0, 3] = 1.0
    with pytest.raises(ValueError):
        solve_ap(plan, g)


def test_shape_mismatch():
    plan = build_plan(WaveContext(13.0, 2.2 / 16), 16)
    with pytest.raises(ValueError):
        solve_ap(plan, np.zeros((33, 33)))


def test_mode_eigenvalues():
    lam = mode_eigenvalues(16)
    assert lam.shape == (15,)
    assert np.all(lam < 0) and np.all(lam > -4)


def test_unknown_closure():
    with pytest.raises(ValueError):
        build_plan(WaveContext(13.0, 0.1), 22, closure="exact")


def test_deterministic(rng):
    plan = build_plan(WaveContext(13.0, 2.2 / 64), 64)
    g = _rhs(rng, 64)
    assert np.array_equal(solve_ap(plan, g).view(np.uint8), solve_ap(plan, g).view(np.uint8))


@pytest.mark.slow
def test_timing_ratio_512_1024():
    from helmdd.harness import time_gh
    t = [time_gh(build_plan(WaveContext(13.0, 2.2 / n), n), repeats=5) for n in (512, 1024)]
    assert 3.5 <= t[1] / t[0] <= 5.5, t
