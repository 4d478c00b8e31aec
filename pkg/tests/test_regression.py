import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankmatch.basis import BasisSpec, build_basis
from rankmatch.errors import DegenerateFitError, DomainError
from rankmatch.regression import (
    fit_series,
    generated_covariate_terms,
    gram_diagnostics,
    l2_error_mc,
    predict,
)


def uniform_sampler(d):
    return lambda rng, n: rng.random((n, d))


def test_constant_reproduced():
    b = build_basis(BasisSpec("piecewise", 2, 2, knots=4))
    pts = np.random.default_rng(0).random((50, 2))
    fit = fit_series(b, pts, np.full(50, 5.0))
    assert np.max(np.abs(fit.predict_batch(np.random.default_rng(1).random((30, 2))) - 5.0)) <= 1e-10


def test_linear_recovered():
    b = build_basis(BasisSpec("power", 1, 1))
    w = np.linspace(0.05, 0.95, 10)
    fit = fit_series(b, w[:, None], 2 * w + 1)
    # closed-form normal equations
    p = np.column_stack([np.ones(10), w])
    direct = np.linalg.solve(p.T @ p, p.T @ (2 * w + 1))
    assert np.allclose(fit.coefficients, [1.0, 2.0], atol=1e-8)
    assert np.allclose(fit.coefficients, direct, atol=1e-8)
    assert predict(fit, [0.25]) == pytest.approx(1.5, abs=1e-8)
    assert fit.rank_used == 2


def test_duplicated_column_uses_pseudo_inverse():
    rng = np.random.default_rng(4)
    w = rng.random(40)
    y = np.sin(3 * w) + 0.1 * rng.standard_normal(40)
    dup = fit_series(build_basis(BasisSpec("power", 2, 1)), np.column_stack([w, w]), y)
    single = fit_series(build_basis(BasisSpec("power", 1, 1)), w[:, None], y)
    assert dup.rank_used == 2
    assert np.allclose(dup.predict_batch(np.column_stack([w, w])), single.predict_batch(w[:, None]), atol=1e-8)
    # minimum-norm solution splits the slope equally between the copies
    p = np.column_stack([np.ones(40), w, w])
    assert np.allclose(dup.coefficients, np.linalg.pinv(p) @ y, atol=1e-8)


def test_zero_coefficients_and_degenerate_design():
    b = build_basis(BasisSpec("power", 1, 2))
    fit = fit_series(b, np.random.default_rng(0).random((20, 1)), np.zeros(20))
    assert np.all(fit.predict_batch(np.linspace(0, 1, 5)[:, None]) == 0.0)

    class Zero:
        K, d = 2, 1
        def eval_matrix(self, w, t=None):
            return np.zeros((np.asarray(w).shape[0], 2))
    with pytest.raises(DegenerateFitError):
        fit_series(Zero(), np.zeros((3, 1)), np.ones(3))


def test_domain_error_propagates():
    fit = fit_series(build_basis(BasisSpec("power", 1, 1)), np.array([[0.1], [0.5]]), [1.0, 2.0])
    with pytest.raises(DomainError):
        predict(fit, [1.5])


def test_box_rescaling():
    x = np.linspace(-3, 7, 30)[:, None]
    fit = fit_series(build_basis(BasisSpec("power", 1, 1)), x, 4 * x[:, 0] - 1, x.min(0), x.max(0))
    assert fit.predict_batch(np.array([[2.0]]))[0] == pytest.approx(7.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3))
def test_invariants(seed, c):
    rng = np.random.default_rng(seed)
    b = build_basis(BasisSpec("power", 2, 2))
    pts = rng.random((60, 2))
    y = rng.standard_normal(60)
    fit = fit_series(b, pts, y)
    p = b.eval_matrix(pts)
    resid = y - p @ fit.coefficients
    assert np.linalg.norm(p.T @ resid) / 60 <= 1e-8 * (1 + np.linalg.norm(y) / np.sqrt(60))
    # projection idempotence
    again = fit_series(b, pts, fit.predict_batch(pts))
    assert np.allclose(again.coefficients, fit.coefficients, atol=1e-8)
    # full rank: agree with the plain normal equations
    direct = np.linalg.solve(p.T @ p, p.T @ y)
    assert np.allclose(fit.coefficients, direct, rtol=1e-8, atol=1e-8)
    # scaling equivariance
    scaled = fit_series(b, pts, c * y)
    assert np.allclose(scaled.coefficients, c * np.asarray(fit.coefficients), rtol=1e-12, atol=1e-12)


def test_generated_covariate_stability():
    rng = np.random.default_rng(8)
    b = build_basis(BasisSpec("power", 2, 3))
    pts = 0.01 + 0.98 * rng.random((300, 2))
    y = np.cos(pts.sum(axis=1)) + 0.1 * rng.standard_normal(300)
    base = fit_series(b, pts, y)
    moved = fit_series(b, pts + rng.uniform(-1e-9, 1e-9, pts.shape), y)
    grid = rng.random((100, 2))
    assert np.max(np.abs(base.predict_batch(grid) - moved.predict_batch(grid))) <= 1e-5


def test_gram_orthonormal_uniform():
    b = build_basis(BasisSpec("power", 2, 3, orthonormal=True))
    pts = np.random.default_rng(0).random((20000, 2))
    lam = gram_diagnostics(b, pts).lambda_min_hat
    assert abs(lam - 1.0) <= 0.1


def test_gram_rank_deficient():
    b = build_basis(BasisSpec("power", 2, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = gram_diagnostics(b, np.random.default_rng(0).random((5, 2)))
    assert abs(rep.lambda_min_hat) <= 1e-10


def test_l2_error_mc():
    b = build_basis(BasisSpec("power", 1, 0))
    fit = fit_series(b, np.random.default_rng(0).random((10, 1)), np.full(10, 2.0))
    assert l2_error_mc(fit, fit.predict_batch, uniform_sampler(1), 5000) == 0.0
    delta = 0.3
    err = l2_error_mc(fit, lambda w: np.full(w.shape[0], 2.0 + delta), uniform_sampler(1), 5000)
    assert err == pytest.approx(delta ** 2, rel=1e-12)
    with pytest.raises(Exception):
        l2_error_mc(fit, fit.predict_batch, uniform_sampler(1), 10)


def test_generated_covariate_terms_lipschitz():
    rng = np.random.default_rng(5)
    u = rng.random((500, 1))
    u_hat = np.clip(u + rng.uniform(-0.01, 0.01, u.shape), 0, 1)
    psi = lambda w: 3 * w[:, 0]
    fit = fit_series(build_basis(BasisSpec("power", 1, 2)), u_hat, psi(u))
    terms = generated_covariate_terms(fit, psi, u, u_hat)
    assert terms["r_n"] <= 9 * terms["max_point_error"] ** 2
    assert terms["b_n"] >= 0
