import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skwave.spectral import (
    ModeVector,
    NormSpec,
    grid,
    grid_norm,
    make_operator,
    norm,
    to_physical,
    to_spectral,
)


def test_dirichlet_eigenvalues():
    op = make_operator("dirichlet_laplacian", 4)
    np.testing.assert_allclose(op.eigenvalues, (np.arange(1, 5) * np.pi) ** 2)
    assert op.eta0 == 0.5


def test_bilaplacian_eigenvalues():
    op = make_operator("bilaplacian_1d", 3)
    np.testing.assert_allclose(op.eigenvalues, (np.arange(1, 4) * np.pi) ** 4)
    assert op.eta0 == 0.75


def test_power_law_growth():
    op = make_operator("power_law", 5, eta0=0.5, scale=2.0)
    np.testing.assert_allclose(op.eigenvalues, 2.0 * np.arange(1, 6) ** 2.0)


def test_eigenvalues_read_only():
    op = make_operator("dirichlet_laplacian", 4)
    with pytest.raises(ValueError):
        op.eigenvalues[0] = 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(family_tag="dirichlet_laplacian", N=0),
        dict(family_tag="power_law", N=4, eta0=1.0),
        dict(family_tag="power_law", N=4),
        dict(family_tag="nope", N=4),
        dict(family_tag="power_law", N=4, eta0=0.5, scale=-1.0),
    ],
)
def test_make_operator_rejects(kwargs):
    with pytest.raises(ValueError):
        make_operator(**kwargs)


def test_tail_bound_dominates_partial_sums():
    op = make_operator("dirichlet_laplacian", 4096)
    for eta in (0.0, 0.2, 0.4, 0.49):
        assert op.partial_sum(eta) <= op.tail_bound(eta)


def test_tail_bound_needs_eta_below_eta0():
    op = make_operator("dirichlet_laplacian", 8)
    with pytest.raises(ValueError):
        op.tail_bound(0.5)


def test_threshold_mode():
    op = make_operator("dirichlet_laplacian", 64)
    # 1 - 4 mu alpha_k >= 0  <=>  k <= 1 / (2 pi sqrt(mu))
    assert op.threshold_mode(1e-3) == int(1 / (2 * np.pi * np.sqrt(1e-3)))
    assert op.threshold_mode(1.0) == 0


def test_norm_examples():
    op = make_operator("dirichlet_laplacian", 3)
    assert norm([3.0, 4.0]) == 5.0
    assert norm([]) == 0.0
    v = np.array([1.0, 0.0, 0.0])
    assert norm(v, NormSpec(1.0, 0.0), op) == pytest.approx(np.pi)
    assert norm(v, NormSpec(-1.0, 1.0), op) == pytest.approx((np.pi**2 + 1) ** -0.5)


def test_norm_rejects_oversized_vector():
    op = make_operator("dirichlet_laplacian", 2)
    with pytest.raises(ValueError):
        norm(np.ones(3), NormSpec(1.0), op)


def test_grid_points():
    np.testing.assert_allclose(grid(3), [0.25, 0.5, 0.75])


def test_single_mode_profile():
    G = 15
    u = to_physical(np.array([0.0, 1.0]), G)
    np.testing.assert_allclose(u, np.sqrt(2) * np.sin(2 * np.pi * grid(G)), atol=1e-14)


def test_to_spectral_rejects_underresolved():
    with pytest.raises(ValueError):
        to_spectral(np.zeros(4), 5)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 32),
    st.integers(0, 64),
    st.integers(0, 2**32 - 1),
)
def test_roundtrip_and_parseval(N, extra, seed):
    G = N + extra
    c = np.random.default_rng(seed).normal(size=N)
    u = to_physical(c, G)
    np.testing.assert_allclose(to_spectral(u, N), c, atol=1e-12)
    assert grid_norm(u) == pytest.approx(np.linalg.norm(c), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_batched_transform_matches_rows(N, seed):
    c = np.random.default_rng(seed).normal(size=(3, N))
    G = 2 * N + 1
    batch = to_physical(c, G)
    for i in range(3):
        np.testing.assert_allclose(batch[i], to_physical(c[i], G), atol=1e-13)


def test_mode_vector_roundtrip():
    op = make_operator("dirichlet_laplacian", 4)
    mv = ModeVector(np.array([1.0, -2.0, 0.5, 0.0]), op)
    back = ModeVector.from_physical(mv.to_physical(16), 4, op)
    np.testing.assert_allclose(back.coeffs, mv.coeffs, atol=1e-13)
    assert mv.norm() == pytest.approx(np.sqrt(5.25))
    assert mv.norm(1.0) > mv.norm()
