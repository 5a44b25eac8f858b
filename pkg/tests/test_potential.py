import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmdd.ap_solver import solve_ap
from helmdd.grid import restrict
from helmdd.potential import bep_residual, difference_potential, project
from helmdd.stencil import apply_lh


def _random_density(r, size):
    return r.standard_normal(size) + 1j * r.standard_normal(size)


def _homogeneous_trace(r, plan, sets):
    """A discrete AP solution whose source lives in M- only: it solves L u = 0 on M+."""
    g = np.zeros(plan.shape, dtype=complex)
    Mm = sets.mask("M-")
    g[Mm] = r.standard_normal(Mm.sum()) + 1j * r.standard_normal(Mm.sum())
    return solve_ap(plan, g)


def test_zero_density(small):
    sets, plan, _ = small
    assert not np.any(difference_potential(np.zeros(sets.n_gamma), plan, sets))
    assert not np.any(project(np.zeros(sets.n_gamma), plan, sets))


def test_reproduces_homogeneous_solution(small, rng):
    sets, plan, _ = small
    u = _homogeneous_trace(rng, plan, sets)
    w = difference_potential(restrict(u, sets), plan, sets)
    Np = sets.mask("N+")
    assert np.abs(w - u)[Np].max() <= 1e-10 * np.abs(u[Np]).max()


def test_potential_solves_homogeneous_scheme(small, rng):
    sets, plan, _ = small
    xi = _random_density(rng, sets.n_gamma)
    w = difference_potential(xi, plan, sets)
    res = apply_lh(w, plan.ctx)[sets.mask("M+")]
    assert np.abs(res).max() <= 1e-10 * np.abs(xi).max()


# 50 random trials at n = 32
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_projection_idempotent(small, seed):
    sets, plan, _ = small
    xi = _random_density(np.random.default_rng(seed), sets.n_gamma)
    p1 = project(xi, plan, sets)
    p2 = project(p1, plan, sets)
    assert np.abs(p2 - p1).max() <= 1e-9 * np.abs(xi).max()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bep_equivalence(small, seed):
    """A density satisfies the BEP exactly when it is the trace of a discrete solution on M+."""
    sets, plan, _ = small
    r = np.random.default_rng(seed)
    u = _homogeneous_trace(r, plan, sets)
    xi = restrict(u, sets)
    assert bep_residual(xi, np.zeros(plan.shape), plan, sets) <= 1e-9 * np.abs(xi).max()
    # with a source: u = G g for g supported in M+ satisfies P xi + Tr G g = xi
    g = np.zeros(plan.shape, dtype=complex)
    Mp = sets.mask("M+")
    g[Mp] = r.standard_normal(Mp.sum())
    v = solve_ap(plan, g) + u
    assert bep_residual(restrict(v, sets), g, plan, sets) <= 1e-9 * np.abs(restrict(v, sets)).max()
    # a random density does not
    z = _random_density(r, sets.n_gamma)
    assert bep_residual(z, np.zeros(plan.shape), plan, sets) > 1e-6 * np.abs(z).max()


def test_fixed_point(small, rng):
    sets, plan, _ = small
    xi = restrict(_homogeneous_trace(rng, plan, sets), sets)
    assert np.abs(project(xi, plan, sets) - xi).max() <= 1e-9 * np.abs(xi).max()


def test_batched_projection(small, rng):
    sets, plan, _ = small
    xi = np.stack([_random_density(rng, sets.n_gamma) for _ in range(11)])
    batched = project(xi, plan, sets, batch=4)
    for i in (0, 5, 10):
        assert np.allclose(batched[i], project(xi[i], plan, sets), atol=1e-12 * np.abs(xi).max())


def test_wrong_density_length(small):
    sets, plan, _ = small
    with pytest.raises(ValueError):
        difference_potential(np.zeros(sets.n_gamma + 1), plan, sets)
