import numpy as np
import pytest

from dmglearn.covariance import (
    glasso,
    glasso_sweep,
    lasso,
    penalized_loglik,
    restrict_to_observed,
    sample_covariance,
    write_back_observed,
)


def spd(rng, k, strength=0.3):
    a = rng.standard_normal((k, k)) * strength
    return a @ a.T + np.eye(k)


def test_sample_covariance_single_row():
    z = np.array([[1.0, 2.0, -1.0]])
    np.testing.assert_allclose(sample_covariance(z), np.outer(z[0], z[0]))


def test_sample_covariance_basis_rows():
    z = np.eye(4)
    np.testing.assert_allclose(sample_covariance(z), np.eye(4) / 4)


def test_sample_covariance_monte_carlo():
    rng = np.random.default_rng(0)
    sigma = np.array([[1.0, 0.4, 0.0], [0.4, 0.8, -0.2], [0.0, -0.2, 0.5]])
    n = 100_000
    z = rng.standard_normal((n, 3)) @ np.linalg.cholesky(sigma).T
    s = sample_covariance(z)
    # var of each entry estimate is (sigma_ii sigma_jj + sigma_ij^2)/n
    for i in range(3):
        for j in range(3):
            se = np.sqrt((sigma[i, i] * sigma[j, j] + sigma[i, j] ** 2) / n)
            assert abs(s[i, j] - sigma[i, j]) < 3 * se


def test_sample_covariance_rejects_empty():
    with pytest.raises(ValueError):
        sample_covariance(np.zeros((0, 3)))


def test_lasso_zero_penalty_is_least_squares():
    rng = np.random.default_rng(1)
    w11 = spd(rng, 4)
    s12 = rng.standard_normal(4)
    beta = lasso(w11, s12, 0.0)
    np.testing.assert_allclose(beta, np.linalg.solve(w11, s12), atol=1e-7)


def test_lasso_full_shrinkage():
    rng = np.random.default_rng(2)
    w11 = spd(rng, 3)
    s12 = np.array([0.05, -0.02, 0.04])
    beta = lasso(w11, s12, rho=np.abs(s12).max())
    np.testing.assert_array_equal(beta, np.zeros(3))


def test_lasso_identity_soft_threshold():
    # with W11 = I the solution is the coordinatewise soft threshold
    beta = lasso(np.eye(2), np.array([0.5, -0.1]), rho=0.2)
    np.testing.assert_allclose(beta, [0.3, 0.0], atol=1e-10)


def test_lasso_rejects_indefinite():
    with pytest.raises(ValueError):
        lasso(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2), 0.1)


def test_sweep_zero_penalty_fixed_point_is_sample_covariance():
    rng = np.random.default_rng(3)
    s = spd(rng, 5)
    w, _ = glasso(s, rho=0.0, tol=1e-10)
    np.testing.assert_allclose(w, s, atol=1e-6)


def test_sweep_diagonal_s_stays_diagonal():
    s = np.diag([1.0, 2.0, 0.5])
    w, _ = glasso_sweep(s + 0.1 * np.eye(3), s, rho=0.1)
    np.testing.assert_allclose(w, np.diag(np.diag(w)), atol=1e-12)
    np.testing.assert_allclose(np.diag(w), np.diag(s) + 0.1)


def test_sweep_preserves_symmetry_and_pd():
    rng = np.random.default_rng(4)
    for _ in range(10):
        s = spd(rng, 6)
        w, _ = glasso_sweep(s + 0.05 * np.eye(6), s, rho=0.05)
        np.testing.assert_array_equal(w, w.T)
        np.linalg.cholesky(w)  # raises if not PD


def test_sweeps_do_not_decrease_penalized_loglik():
    rng = np.random.default_rng(5)
    for _ in range(5):
        s = spd(rng, 5)
        rho = 0.08
        w = s + rho * np.eye(5)
        prev = penalized_loglik(w, s, rho)
        for _ in range(6):
            w, _ = glasso_sweep(w, s, rho)
            cur = penalized_loglik(w, s, rho)
            assert cur >= prev - 1e-9
            prev = cur


def test_against_reference_solvers():
    rng = np.random.default_rng(6)
    theta = np.array([
        [1.5, 0.4, 0.0, 0.0, 0.0],
        [0.4, 1.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.2, -0.3, 0.0],
        [0.0, 0.0, -0.3, 1.2, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    sigma = np.linalg.inv(theta)
    z = rng.standard_normal((20_000, 5)) @ np.linalg.cholesky(sigma).T
    s = sample_covariance(z)
    rho = 0.1
    w_ours, support = glasso(s, rho, tol=1e-10)

    # conic-programming oracle for the exact same objective
    import cvxpy as cp

    prec = cp.Variable((5, 5), PSD=True)
    problem = cp.Problem(cp.Minimize(
        -cp.log_det(prec) + cp.trace(s @ prec) + rho * cp.sum(cp.abs(prec))))
    problem.solve(solver=cp.SCS, eps=1e-10, max_iters=100_000)
    assert problem.status == "optimal"
    w_ref = np.linalg.inv(prec.value)
    np.testing.assert_allclose(w_ours, w_ref, atol=1e-4)

    # coordinate-descent reference; it penalizes off-diagonals only, so
    # compare off-diagonal entries and the recovered support
    from sklearn.covariance import graphical_lasso as sk_glasso

    w_sk, _ = sk_glasso(s, alpha=rho, tol=1e-10, max_iter=500)
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(w_ours[off], w_sk[off], atol=1e-4)
    true_support = (theta != 0) & off
    assert np.array_equal(support, true_support)


def test_restrict_to_observed():
    w = np.arange(9, dtype=float).reshape(3, 3)
    np.testing.assert_array_equal(restrict_to_observed(w, set()), w)
    assert restrict_to_observed(w, {0, 1, 2}).shape == (0, 0)
    block = restrict_to_observed(w, {1})
    np.testing.assert_array_equal(block, w[np.ix_([0, 2], [0, 2])])


def test_write_back_observed_round_trip():
    rng = np.random.default_rng(7)
    w = spd(rng, 4)
    block = restrict_to_observed(w, {2})
    block = block + np.eye(3)
    out = write_back_observed(w, block, {2})
    np.testing.assert_array_equal(restrict_to_observed(out, {2}), block)
    np.testing.assert_array_equal(out[2], w[2])
