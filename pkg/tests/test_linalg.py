"""Kernel tests: orthonormalization, power iteration, clipping, noise."""

import numpy as np
import pytest
import scipy.linalg

from gep.linalg import (
    RandomStream,
    clip_rows,
    count_flops,
    gaussian_noise,
    orthonormalize_rows,
    power_iteration_basis,
    project_split,
    row_norms,
    stable_rank,
)


def test_orthonormalize_axis_aligned():
    q, rank = orthonormalize_rows(np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert rank == 2
    np.testing.assert_allclose(q, np.eye(2), atol=1e-15)


def test_orthonormalize_duplicate_direction():
    q, rank = orthonormalize_rows(np.array([[1.0, 1.0], [2.0, 2.0]]))
    assert rank == 1
    np.testing.assert_allclose(q, np.array([[1.0, 1.0]]) / np.sqrt(2), atol=1e-15)


def test_orthonormalize_full_rank_random():
    # oracle: compare the spanned subspace against a high-precision SVD basis
    rng = np.random.default_rng(7)
    m = rng.standard_normal((5, 8))
    q, rank = orthonormalize_rows(m)
    assert rank == 5
    assert np.max(np.abs(q @ q.T - np.eye(5))) <= 1e-10
    _, _, vt = np.linalg.svd(m, full_matrices=False)
    proj_mine = q.T @ q
    proj_svd = vt.T @ vt
    assert np.linalg.norm(proj_mine - proj_svd, 2) <= 1e-8


def test_orthonormalize_rejects_bad_input():
    with pytest.raises(ValueError):
        orthonormalize_rows(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        orthonormalize_rows(np.eye(2), tol=0.0)


def test_orthonormalize_scale_invariant_rank():
    # duplicate directions must be dropped even at large magnitudes
    q, rank = orthonormalize_rows(np.array([[1e8, 1e8], [2e8, 2e8]]))
    assert rank == 1


def test_power_iteration_rank_one_fixed_point():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(12)
    v = rng.standard_normal(30)
    v /= np.linalg.norm(v)
    g = np.outer(u, v)
    basis = power_iteration_basis(g, 1, 1, np.random.default_rng(1))
    assert basis.shape == (1, 30)
    # the single basis row equals v up to sign
    assert min(np.linalg.norm(basis[0] - v), np.linalg.norm(basis[0] + v)) <= 1e-10


def test_power_iteration_exact_rank_three():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 50))
    basis = power_iteration_basis(g, 3, 10, np.random.default_rng(4))
    assert basis.shape[0] == 3
    resid = g - (g @ basis.T) @ basis
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(g)


def test_power_iteration_matches_svd_subspace():
    # gap > 0.1 between retained and discarded singular values
    rng = np.random.default_rng(11)
    u, _ = np.linalg.qr(rng.standard_normal((20, 20)))
    v, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    sing = np.array([2.0, 1.5, 1.2] + [0.5] * 17)
    g = u @ np.diag(sing) @ v[:, :20].T
    basis = power_iteration_basis(g, 3, 40, np.random.default_rng(12))
    top = v[:, :3].T
    angles = scipy.linalg.subspace_angles(basis.T, top.T)
    assert np.max(angles) <= 1e-6


def test_power_iteration_zero_matrix_and_clamp():
    empty = power_iteration_basis(np.zeros((4, 6)), 2, 3, np.random.default_rng(0))
    assert empty.shape == (0, 6)
    with pytest.warns(RuntimeWarning, match="clamping"):
        basis = power_iteration_basis(
            np.random.default_rng(1).standard_normal((3, 6)), 5, 2,
            np.random.default_rng(2),
        )
    assert basis.shape[0] <= 3


def test_project_split_contained_and_orthogonal():
    rng = np.random.default_rng(5)
    basis, _ = orthonormalize_rows(rng.standard_normal((4, 12)))
    coeffs = rng.standard_normal((9, 4))
    g_in = coeffs @ basis
    w, r = project_split(g_in, basis)
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(g_in)
    np.testing.assert_allclose(w, coeffs, atol=1e-12)

    # orthogonal complement: directions with no basis component
    null = rng.standard_normal((6, 12))
    null -= (null @ basis.T) @ basis
    w0, r0 = project_split(null, basis)
    assert np.max(np.abs(w0)) <= 1e-10
    np.testing.assert_allclose(r0, null, atol=1e-12)


def test_project_split_empty_basis():
    g = np.arange(12.0).reshape(3, 4)
    w, r = project_split(g, np.zeros((0, 4)))
    assert w.shape == (3, 0)
    np.testing.assert_array_equal(r, g)


def test_project_split_dimension_mismatch():
    with pytest.raises(ValueError):
        project_split(np.ones((2, 3)), np.ones((1, 4)))


def test_projection_idempotent_and_pythagoras():
    rng = np.random.default_rng(21)
    for trial in range(5):
        g = rng.standard_normal((15, 40))
        basis = power_iteration_basis(g[:8], 6, 3, rng)
        w, r = project_split(g, basis)
        w_again, _ = project_split(r, basis)
        assert np.max(np.abs(w_again)) <= 1e-9 * max(1.0, np.max(np.abs(w)))
        lhs = row_norms(g) ** 2
        rhs = row_norms(w) ** 2 + row_norms(r) ** 2
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9)


def test_clip_rows_basic():
    m = np.array([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]])
    clipped = clip_rows(m, 2.0)
    np.testing.assert_allclose(clipped[0], np.array([1.2, 1.6]))
    np.testing.assert_array_equal(clipped[1], m[1])  # unchanged bitwise
    np.testing.assert_array_equal(clipped[2], np.zeros(2))
    with pytest.raises(ValueError):
        clip_rows(m, 0.0)


def test_clip_rows_contraction_property():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((30, 7)) * rng.gamma(1.0, 5.0, size=(30, 1))
    for s in (0.5, 2.0, 100.0):
        clipped = clip_rows(m, s)
        norms = row_norms(clipped)
        assert np.all(norms <= np.minimum(row_norms(m), s) + 1e-12)
        # direction preserved: cross products vanish
        cross = np.einsum("ij,ij->i", clipped, m)
        assert np.all(cross >= -1e-12)


def test_stable_rank_values():
    rng = np.random.default_rng(9)
    u = rng.standard_normal(10)
    v = rng.standard_normal(25)
    assert abs(stable_rank(np.outer(u, v)) - 1.0) <= 1e-6

    q, _ = orthonormalize_rows(rng.standard_normal((6, 40)))
    assert abs(stable_rank(q) - 6.0) <= 1e-4

    padded = np.zeros((4, 5))
    padded[0, 0] = 2.0
    padded[1, 1] = 1.0
    assert abs(stable_rank(padded) - 1.25) <= 1e-6


def test_stable_rank_bounds_and_zero():
    rng = np.random.default_rng(10)
    for _ in range(10):
        m = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
        value = stable_rank(m)
        assert 1.0 <= value <= min(m.shape)
    with pytest.raises(ValueError):
        stable_rank(np.zeros((3, 3)))


def test_gaussian_noise_moments():
    rng = np.random.default_rng(123)
    draws = gaussian_noise((1000, 1000), 1.0, rng)
    assert abs(float(draws.mean())) <= 4e-3
    assert abs(float(draws.var()) - 1.0) <= 1e-2


def test_gaussian_noise_zero_sigma_and_errors():
    rng = np.random.default_rng(1)
    assert np.all(gaussian_noise((3, 3), 0.0, rng) == 0.0)
    with pytest.raises(ValueError):
        gaussian_noise((2, 2), -1.0, rng)


def test_random_stream_determinism():
    stream = RandomStream(42)
    a = stream.generator(3, 1).standard_normal(10)
    b = stream.generator(3, 1).standard_normal(10)
    c = stream.generator(3, 2).standard_normal(10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    # same matrix twice through the noise helper
    n1 = gaussian_noise((4, 4), 2.0, stream.generator(0, 0))
    n2 = gaussian_noise((4, 4), 2.0, stream.generator(0, 0))
    np.testing.assert_array_equal(n1, n2)


def test_flop_counter_counts_power_iteration():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((50, 200))
    with count_flops() as counter:
        power_iteration_basis(g, 10, 1, np.random.default_rng(3))
    # two matmuls dominate: 2 * m * k * p
    assert counter.macs >= 2 * 50 * 10 * 200
    assert counter.macs <= 1.5 * (2 * 50 * 10 * 200 + 200 * 10 * 10)
