import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cppeak.errors import InsufficientDataError, LayoutError, SingularityError
from cppeak.glasso import (
    GaussianDependenceModel,
    conditional_params,
    duality_gap,
    empirical_covariance,
    glasso_fit,
    glasso_objective,
    heldout_loglik,
    select_lambda,
)


def random_spd(p, seed, cond=20.0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    return (q * np.geomspace(1.0, cond, p)) @ q.T


def sample_cov(p, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p)) @ np.linalg.cholesky(random_spd(p, seed + 1)).T
    return empirical_covariance(x)


def kkt_violation(s, theta, lam, penalize_diagonal=False):
    """Largest breach of the stationarity conditions of the penalized likelihood."""
    w = np.linalg.inv(theta)
    g = w - s
    weights = np.full_like(s, lam)
    if not penalize_diagonal:
        np.fill_diagonal(weights, 0.0)
    nz = np.abs(theta) > 1e-10
    on = np.abs(g - weights * np.sign(theta))[nz]
    off = np.maximum(np.abs(g) - weights, 0)[~nz]
    return max(on.max(initial=0), off.max(initial=0))


def test_empirical_covariance_is_uncentered():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(empirical_covariance(x), x.T @ x / 2)
    with pytest.raises(InsufficientDataError):
        empirical_covariance(x[:1])


def test_lambda_zero_is_dense_inverse():
    s = random_spd(10, 3)
    m = glasso_fit(s, 0.0)
    assert np.allclose(m.precision, np.linalg.inv(s), rtol=1e-10, atol=1e-12)
    with pytest.raises(SingularityError):
        glasso_fit(np.ones((3, 3)) + 1e-14 * np.eye(3), 0.0)


def test_screening_gives_diagonal_precision():
    s = sample_cov(8, 100, 4)
    lam = np.max(np.abs(s - np.diag(np.diag(s))))
    m = glasso_fit(s, lam * 1.0001)
    assert np.allclose(m.precision, np.diag(1 / np.diag(s)), atol=1e-12)


def test_identity_under_both_penalty_conventions():
    s = np.eye(5)
    assert np.allclose(glasso_fit(s, 0.3).precision, np.eye(5))
    assert np.allclose(glasso_fit(s, 0.3, penalize_diagonal=True).precision, np.eye(5) / 1.3, atol=1e-10)


@pytest.mark.parametrize("p,n,lam", [(12, 200, 0.05), (24, 60, 0.01), (24, 30, 0.1)])
def test_fit_satisfies_kkt_and_gap(p, n, lam):
    s = sample_cov(p, n, p + n)
    m = glasso_fit(s, lam)
    assert m.duality_gap <= 1e-6 * p
    assert duality_gap(s, m.precision, lam) <= 1e-6 * p
    assert kkt_violation(s, m.precision, lam) < 1e-4 * np.abs(s).max()
    assert np.all(np.diff(m.objective_history) <= 1e-10)
    assert np.allclose(m.precision, m.precision.T)
    assert np.linalg.eigvalsh(m.precision).min() > 0


def test_full_penalty_kkt():
    s = sample_cov(10, 50, 9)
    m = glasso_fit(s, 0.05, penalize_diagonal=True)
    assert kkt_violation(s, m.precision, 0.05, penalize_diagonal=True) < 1e-4
    assert glasso_objective(s, m.precision, 0.05, True) <= glasso_objective(s, np.linalg.inv(s + 0.05 * np.eye(10)), 0.05, True)


def test_agrees_with_reference_implementation():
    covariance = pytest.importorskip("sklearn.covariance")
    s = sample_cov(16, 40, 21)
    m = glasso_fit(s, 0.05)
    _, ref = covariance.graphical_lasso(s, 0.05, tol=1e-10, max_iter=2000)
    assert np.allclose(m.precision, ref, atol=1e-4)


def test_bad_inputs():
    with pytest.raises(ValueError):
        glasso_fit(np.array([[1.0, 0.5], [0.4, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        glasso_fit(np.eye(2), -0.1)
    with pytest.raises(ValueError):
        glasso_fit(np.diag([1.0, 0.0]), 0.1)


def test_select_lambda_prefers_small_penalty_for_dense_truth():
    rng = np.random.default_rng(0)
    cov = 0.6 * np.ones((6, 6)) + 0.4 * np.eye(6)
    x = rng.normal(size=(500, 6)) @ np.linalg.cholesky(cov).T
    best, scores = select_lambda(x, [0.001, 0.1, 0.5], k=5, return_scores=True)
    assert best == 0.001 and scores[0] > scores[-1]
    with pytest.raises(InsufficientDataError):
        select_lambda(x[:6], [0.1, 0.2], k=5)


def test_heldout_loglik_is_maximized_by_truth():
    s = random_spd(5, 2)
    theta = np.linalg.inv(s)
    assert heldout_loglik(theta, s) > heldout_loglik(theta * 1.1, s)


def dense_conditional(sigma, g, t, z):
    s11 = sigma[np.ix_(g, g)]
    s21 = sigma[np.ix_(t, g)]
    s22 = sigma[np.ix_(t, t)]
    inv = np.linalg.inv(s11)
    return s21 @ inv @ z, s22 - s21 @ inv @ s21.T


def model_from(sigma, layout):
    return GaussianDependenceModel(np.linalg.inv(sigma), sigma, 0.0, layout=layout)


def test_conditional_matches_partition_identity_48():
    sigma = random_spd(48, 5)
    m = model_from(sigma, {"z1": (0, 24), "z2": (24, 48)})
    z = np.random.default_rng(1).normal(size=24)
    mean, cov = conditional_params(m, z)
    ref_mean, ref_cov = dense_conditional(sigma, np.arange(24), np.arange(24, 48), z)
    assert np.allclose(mean, ref_mean, atol=1e-8)
    assert np.allclose(cov, ref_cov, atol=1e-8)


def test_conditional_horizon_subsets_and_batches():
    sigma = random_spd(48, 6)
    m = model_from(sigma, {"z1": (0, 24), "z2": (24, 48)})
    hours = np.arange(12, 24)
    z = np.random.default_rng(2).normal(size=(7, 12))
    mean, cov = conditional_params(m, z, given_index=hours, target_index=hours)
    ref_cov = dense_conditional(sigma, hours, hours + 24, z[0])[1]
    assert mean.shape == (7, 12)
    for i in range(7):
        assert np.allclose(mean[i], dense_conditional(sigma, hours, hours + 24, z[i])[0], atol=1e-10)
    assert np.allclose(cov, ref_cov, atol=1e-10)
    with pytest.raises(LayoutError):
        conditional_params(m, np.zeros(5), given_index=hours)
    with pytest.raises(LayoutError):
        conditional_params(m, np.zeros(24), given="x")


@settings(max_examples=50, deadline=None)
@given(rho=st.floats(-0.99, 0.99), z=st.floats(-5, 5))
def test_bivariate_closed_form(rho, z):
    sigma = np.array([[1.0, rho], [rho, 1.0]])
    m = model_from(sigma, {"z1": (0, 1), "z2": (1, 2)})
    mean, cov = conditional_params(m, [z])
    assert abs(mean[0] - rho * z) <= 1e-12
    assert abs(cov[0, 0] - (1 - rho * rho)) <= 1e-12


def test_model_serialization_and_blocks():
    m = glasso_fit(sample_cov(6, 40, 3), 0.05, layout={"a": (0, 3), "b": (3, 6)})
    m2 = GaussianDependenceModel.from_dict(m.to_dict())
    assert np.array_equal(m.precision, m2.precision) and m2.layout == {"a": (0, 3), "b": (3, 6)}
    assert m.block("b") == slice(3, 6)
    with pytest.raises(LayoutError):
        m.block("c")
    assert m.with_covariance(np.eye(6)).precision[0, 0] == 1.0
