import numpy as np
import pytest

from conftest import random_dataset
from grassrom.activesub import (Sampler, active_subspace, assemble_gradient_matrix,
                                check_basis, complement_basis,
                                conditional_expectation_oracle, rotated_gradient_energy)
from grassrom.dataset import Dataset
from grassrom.densela import make_rng, principal_angles, sym_eig
from grassrom.dynsys import toy_exact_basis, toy_exact_g, toy_rhs
from grassrom.exceptions import DegenerateSpectrumError, DimensionError, GradientDataRequired


def direct_c(data):
    # (1/M) sum_l Df_l^T Df_l, accumulated term by term
    M, n, m = data.jacobians.shape
    c = np.zeros((m, m))
    for l in range(M):
        for i in range(m):
            for j in range(m):
                c[i, j] += sum(data.jacobians[l, q, i] * data.jacobians[l, q, j]
                               for q in range(n))
    return c / M


def test_gradient_matrix_single_sample():
    d = Dataset(np.zeros((1, 3)), [[1.0]], np.array([[[1.0, 0.0, 0.0]]]))
    np.testing.assert_array_equal(assemble_gradient_matrix(d), [[1.0], [0.0], [0.0]])


def test_gradient_matrix_identical_copies(rng):
    df = rng.standard_normal((2, 4))
    d = Dataset(np.zeros((4, 4)), np.zeros((4, 2)), np.tile(df, (4, 1, 1)))
    a = assemble_gradient_matrix(d)
    np.testing.assert_allclose(a @ a.T, df.T @ df, rtol=1e-13, atol=1e-14)


def test_gradient_matrix_matches_direct_accumulation(rng):
    d = random_dataset(rng, M=30, n=3, m=4)
    a = assemble_gradient_matrix(d)
    assert a.shape == (4, 90)
    assert np.max(np.abs(a @ a.T - direct_c(d))) <= 1e-12 * max(1, np.abs(a @ a.T).max())
    # block l is Df(x_l)^T / sqrt(M)
    np.testing.assert_allclose(a[:, 3:6], d.jacobians[1].T / np.sqrt(30))


def test_missing_jacobians():
    d = Dataset(np.zeros((2, 2)), np.zeros((2, 1)))
    with pytest.raises(GradientDataRequired):
        assemble_gradient_matrix(d)


def test_linear_function_rank_one():
    c = np.array([1.0, -2.0, 2.0, 0.5])
    x = make_rng(0).standard_normal((10, 4))
    d = Dataset(x, x @ c, np.tile(c, (10, 1, 1)))
    u, spec = active_subspace(d, 1)
    np.testing.assert_allclose(np.abs(u[:, 0]), np.abs(c) / np.linalg.norm(c), atol=1e-14)
    assert np.all(spec.eigenvalues[1:] <= 1e-28)
    assert spec.eigenvalues[0] == pytest.approx(c @ c, rel=1e-14)


def test_toy_recovers_exact_basis(toy_data):
    u, spec = active_subspace(toy_data, 2)
    lam = spec.eigenvalues
    assert lam[2] / lam[0] <= 1e-12
    assert np.max(principal_angles(u, toy_exact_basis())) <= 1e-6


def test_eigenvalues_match_sym_eig_of_direct_c(rng):
    d = random_dataset(rng, M=25, n=2, m=5)
    _, spec = active_subspace(d, 2)
    lam, _ = sym_eig(direct_c(d))
    np.testing.assert_allclose(spec.eigenvalues, lam, rtol=1e-9)
    w = spec.w
    assert np.max(np.abs(w.T @ w - np.eye(5))) <= 1e-12


def test_short_wide_case_zero_padded(rng):
    # nM < m: spectrum padded with zeros and W still square orthogonal
    d = random_dataset(rng, M=2, n=1, m=5)
    _, spec = active_subspace(d, 1)
    assert spec.w.shape == (5, 5)
    np.testing.assert_array_equal(spec.eigenvalues[2:], 0.0)
    assert np.max(np.abs(spec.w.T @ spec.w - np.eye(5))) <= 1e-12


def test_dimension_and_degenerate_errors(rng):
    d = random_dataset(rng, M=5, n=1, m=3)
    with pytest.raises(DimensionError):
        active_subspace(d, 4)
    z = Dataset(np.zeros((3, 3)), np.zeros((3, 1)), np.zeros((3, 1, 3)))
    with pytest.raises(DegenerateSpectrumError):
        active_subspace(z, 1)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4, 5])
def test_energy_split_random(rng, k):
    d = random_dataset(rng, M=60, n=2, m=5)
    _, spec = active_subspace(d, max(k, 1))
    e_y, e_z = rotated_gradient_energy(d, spec, k)
    lam = spec.eigenvalues
    assert abs(e_y - lam[:k].sum()) <= 1e-10 * (e_y + e_z)
    assert abs(e_z - lam[k:].sum()) <= 1e-10 * (e_y + e_z)


def test_energy_complement_empty_when_k_is_m(rng):
    d = random_dataset(rng, M=10, n=2, m=3)
    _, spec = active_subspace(d, 3)
    assert rotated_gradient_energy(d, spec, 3)[1] == 0.0


def test_toy_inactive_energy_vanishes(toy_data):
    _, spec = active_subspace(toy_data, 2)
    e_y, e_z = rotated_gradient_energy(toy_data, spec, 2)
    assert e_z <= 1e-12 * e_y


def test_energy_dimension_mismatch(rng):
    d = random_dataset(rng, M=10, n=2, m=3)
    _, spec = active_subspace(random_dataset(rng, M=10, n=2, m=4), 2)
    with pytest.raises(DimensionError):
        rotated_gradient_energy(d, spec, 2)


def test_permutation_invariance(rng):
    d = random_dataset(rng, M=30, n=2, m=5)
    u1, s1 = active_subspace(d, 3)
    u2, s2 = active_subspace(d.subset(rng.permutation(30)), 3)
    np.testing.assert_allclose(np.abs(u1), np.abs(u2), atol=1e-12)
    np.testing.assert_allclose(s1.eigenvalues, s2.eigenvalues, rtol=1e-12)


def test_appending_samples_keeps_spectrum_nonnegative(rng):
    d = random_dataset(rng, M=3, n=1, m=6)
    for extra in range(1, 6):
        big = Dataset(np.vstack([d.inputs, rng.standard_normal((extra, 6))]),
                      np.zeros((3 + extra, 1)),
                      np.vstack([d.jacobians, rng.standard_normal((extra, 1, 6))]))
        _, spec = active_subspace(big, 1)
        assert np.all(spec.eigenvalues >= 0)


def test_oracle_exact_ridge_any_sample_count():
    u = toy_exact_basis()
    for n_mc in (1, 7, 50):
        y = np.array([0.3, -1.2])
        val = conditional_expectation_oracle(toy_rhs, u, y, Sampler("uniform", -2, 2),
                                             n_mc, make_rng(n_mc))
        np.testing.assert_allclose(val, toy_exact_g(y), rtol=1e-13, atol=1e-13)


def test_oracle_fixed_draw_is_f_at_w1y():
    u = np.array([[1.0], [0.0]])
    f = lambda x: np.array([x @ x])
    y = np.array([1.7])
    val = conditional_expectation_oracle(f, u, y, Sampler("fixed"), 1, make_rng(0))
    np.testing.assert_allclose(val, f(u @ y))


def test_oracle_gaussian_square_norm():
    # f = ||x||^2, m=2, k=1: E[y^2 + z^2] = y^2 + 1
    u = np.array([[1.0], [0.0]])
    f = lambda x: np.array([x @ x])
    y, n_mc = 0.8, 100_000
    val = conditional_expectation_oracle(f, u, [y], Sampler("normal"), n_mc, make_rng(1))
    se = np.sqrt(2.0 / n_mc)  # Var[z^2] = 2
    assert abs(val[0] - (y * y + 1.0)) <= 3 * se


def test_tail_zero_mean_squared_error(toy_data):
    # exact ridge: E||f - g o W1^T||^2 is zero regardless of the Poincare constant
    rng = make_rng(5)
    for basis in (toy_exact_basis(), active_subspace(toy_data, 2)[0]):
        errs = []
        for x in toy_data.inputs[::10]:
            g = conditional_expectation_oracle(toy_rhs, basis, basis.T @ x,
                                               Sampler("normal"), 20, rng)
            errs.append(np.sum((toy_rhs(x) - g) ** 2))
        assert np.mean(errs) <= 1e-20


def test_complement_and_check_basis(rng):
    q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    w2 = complement_basis(q)
    assert w2.shape == (6, 4)
    assert np.max(np.abs(q.T @ w2)) <= 1e-12
    with pytest.raises(DimensionError):
        check_basis(2 * q)
