import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankmatch.basis import BasisSpec
from rankmatch.errors import ConfigurationError
from rankmatch.simulation import (
    DgpSpec,
    EstimatorConfig,
    MRule,
    Polynomial,
    check_density_ratio,
    efficiency_bound,
    gram_study,
    polynomial_mean,
    rate_sweep_series,
    run_monte_carlo,
    sample_dgp,
    summarize,
    target_odds,
)
from rankmatch.simulation import RepRecord
from rankmatch.transform import fit_ecdf


def const(c, d):
    return Polynomial.from_terms([{"powers": [0] * d, "coef": c}])


def linear_spec(d=1, corr=None, marginals=None, propensity=None, noise_sd=(1.0, 1.0), shift=0.0):
    corr = corr if corr is not None else np.eye(d).tolist()
    mu0 = [{"powers": [0] * d, "coef": shift}] + [
        {"powers": [int(k == j) for k in range(d)], "coef": 1.0} for j in range(d)]
    mu1 = [{"powers": [0] * d, "coef": 1.0 + shift}] + mu0[1:]
    return DgpSpec.from_dict({
        "d": d, "corr": corr, "marginals": marginals or ["uniform"] * d,
        "propensity": propensity or [0.0] * (d + 1), "mu0": mu0, "mu1": mu1,
        "noise_sd": list(noise_sd),
    })


# ---------------------------------------------------------------- DGP


def test_independence_copula_uniform_marginals_gives_u():
    data, oracle = sample_dgp(linear_spec(2), 10_000, 3)
    assert np.array_equal(data.covariates, oracle.u)
    r = np.corrcoef(oracle.u.T)[0, 1]
    assert abs(r) <= 3 / math.sqrt(10_000)


def test_copula_correlation_matches_spearman():
    rho = 0.6
    spec = linear_spec(2, corr=[[1, rho], [rho, 1]], marginals=["normal", "normal"])
    _, oracle = sample_dgp(spec, 20_000, 5)
    target = 6 / math.pi * math.asin(rho / 2)
    r = np.corrcoef(oracle.u.T)[0, 1]
    assert abs(r - target) < 0.02


def test_cauchy_marginals_preserve_rank_order():
    spec = linear_spec(2, corr=[[1, 0.3], [0.3, 1]], marginals=["cauchy", "lognormal"])
    data, oracle = sample_dgp(spec, 2000, 11)
    w_x = fit_ecdf(data.covariates)(data.covariates)
    w_u = fit_ecdf(oracle.u)(oracle.u)
    assert np.array_equal(w_x, w_u)


def test_sampling_is_deterministic():
    spec = linear_spec(2, marginals=["cauchy", "normal"], propensity=[0.2, -0.5, 0.5])
    a, oa = sample_dgp(spec, 500, 42)
    b, ob = sample_dgp(spec, 500, 42)
    assert np.array_equal(a.covariates, b.covariates)
    assert np.array_equal(a.treated, b.treated)
    assert np.array_equal(a.outcomes, b.outcomes)
    assert np.array_equal(oa.u, ob.u)


def test_oracle_coherence_of_ranks():
    spec = linear_spec(3, corr=[[1, 0.5, 0.2], [0.5, 1, 0.4], [0.2, 0.4, 1]],
                       marginals=["cauchy", "lognormal", "normal"])
    data, oracle = sample_dgp(spec, 10_000, 2024)
    w = fit_ecdf(data.covariates)(data.covariates)
    assert np.max(np.linalg.norm(w - oracle.u, axis=1)) < 0.05


def test_invalid_specs_rejected():
    with pytest.raises(ConfigurationError):
        linear_spec(2, corr=[[1, 1.2], [1.2, 1]])
    with pytest.raises(ConfigurationError):
        linear_spec(1, propensity=[0.0, 12.0])
    with pytest.raises(ConfigurationError):
        linear_spec(1, marginals=["gamma"])
    with pytest.raises(ConfigurationError):
        sample_dgp(linear_spec(1), 1, 0)


def test_observed_outcome_follows_treatment():
    data, oracle = sample_dgp(linear_spec(1, propensity=[0.0, 1.0]), 300, 1)
    assert np.array_equal(data.outcomes, np.where(data.treated, oracle.y1, oracle.y0))


@pytest.mark.parametrize("rho", [0.0, 0.5, -0.7])
def test_polynomial_mean_against_simulation(rho):
    poly = Polynomial.from_terms([{"powers": [1, 1], "coef": 2.0}, {"powers": [2, 0], "coef": -1.0},
                                  {"powers": [0, 3], "coef": 0.5}, {"powers": [2, 1], "coef": 1.0}])
    corr = [[1, rho], [rho, 1]]
    z = np.random.default_rng(9).standard_normal((400_000, 2)) @ np.linalg.cholesky(corr).T
    from scipy.special import ndtr
    vals = poly(ndtr(z))
    se = vals.std() / math.sqrt(len(vals))
    assert abs(polynomial_mean(poly, corr) - vals.mean()) < 4 * se


def test_polynomial_shift_and_lipschitz():
    poly = Polynomial.from_terms([{"powers": [2], "coef": 3.0}])
    u = np.linspace(0, 1, 101)[:, None]
    assert np.allclose(poly.shifted(1.5)(u), poly(u) + 1.5)
    assert poly.lipschitz_bound() >= 6.0 - 1e-12


# ---------------------------------------------------------------- efficiency bound


def test_efficiency_bound_balanced_equal_surfaces():
    spec = DgpSpec.from_dict({"d": 1, "propensity": [0.0, 0.0], "mu0": [{"powers": [1], "coef": 1.0}],
                              "mu1": [{"powers": [1], "coef": 1.0}]})
    bound = efficiency_bound(spec, 200_000, 1)
    assert abs(bound.value - 4.0) <= 3 * bound.std_error


def test_efficiency_bound_zero_noise_constant_effect():
    spec = linear_spec(2, propensity=[0.1, 0.5, -0.5], noise_sd=(0.0, 0.0))
    assert efficiency_bound(spec, 100_000, 2).value < 1e-20


def test_efficiency_bound_scales_with_noise():
    a = efficiency_bound(linear_spec(2, propensity=[0.1, 0.5, -0.5]), 100_000, 3)
    b = efficiency_bound(linear_spec(2, propensity=[0.1, 0.5, -0.5], noise_sd=(2.0, 2.0)), 100_000, 3)
    assert b.value == pytest.approx(4 * a.value, rel=1e-10)


def test_efficiency_bound_shift_invariance():
    a = efficiency_bound(linear_spec(2, propensity=[0.1, 0.5, -0.5]), 100_000, 4)
    b = efficiency_bound(linear_spec(2, propensity=[0.1, 0.5, -0.5], shift=3.7), 100_000, 4)
    assert abs(a.value - b.value) <= 1e-10


# ---------------------------------------------------------------- Monte Carlo


def test_m_rules():
    assert MRule.parse("power:0.7")(2000) == math.ceil(2000 ** 0.7)
    assert MRule.parse("auto")(1000) == math.ceil(1000 ** 0.75 / math.log(1000))
    assert MRule.parse(5)(10) == 5
    assert MRule.parse("3").label() == "3"
    with pytest.raises(ConfigurationError):
        MRule.parse("sqrt")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.floats(-5, 5))
def test_rmse_identity(taus, truth):
    recs = [RepRecord(i, t, 1.0, t - 1, t + 1, abs(t - truth) <= 1, 1, 1) for i, t in enumerate(taus)]
    rep = summarize(recs, 100, truth)
    assert 0.0 <= rep.coverage <= 1.0
    assert rep.rmse ** 2 == pytest.approx(rep.bias ** 2 + rep.sd ** 2, rel=1e-12, abs=1e-300)


def test_monte_carlo_is_reproducible_and_worker_independent(monkeypatch):
    spec = linear_spec(1, marginals=["cauchy"], propensity=[-0.3, 0.6])
    cfg = EstimatorConfig(MRule.parse("auto"), BasisSpec("power", 1, 1))
    a = run_monte_carlo(spec, cfg, 150, 12, 5, workers=1)
    b = run_monte_carlo(spec, cfg, 150, 12, 5, workers=2)
    monkeypatch.setenv("RANKMATCH_THREADS", "3")
    c = run_monte_carlo(spec, cfg, 150, 12, 5)
    assert a.summary() == b.summary() == c.summary()
    assert [r.tau_hat for r in a.records] == [r.tau_hat for r in c.records]
    assert not a.failures


def test_failed_reps_are_recorded():
    # n=4 with a strongly tilted propensity often leaves one arm empty
    spec = linear_spec(1, propensity=[-3.0, 0.5])
    rep = run_monte_carlo(spec, EstimatorConfig(MRule.parse(1)), 4, 20, 0, workers=1)
    assert rep.failures
    assert all(r.error for r in rep.failures)
    assert rep.reps == 20


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("RANKMATCH_THREADS", "many")
    with pytest.raises(ConfigurationError):
        run_monte_carlo(linear_spec(1), EstimatorConfig(), 50, 2, 0)


# ---------------------------------------------------------------- density ratio


def test_target_odds():
    e = np.array([0.2, 0.5, 0.8])
    assert np.allclose(target_odds(np.array([True, True, False]), e), [4.0, 1.0, 4.0])


def test_density_ratio_balanced_design():
    spec = linear_spec(2, corr=[[1, 0.4], [0.4, 1]], marginals=["cauchy", "normal"])
    (row,) = check_density_ratio(spec, [4000], MRule.parse("power:0.7"), 3, 20240607, workers=1)
    assert 0.85 <= row.mean_ratio <= 1.15
    # pilot over these seeds: 0.068; boundary effects at M/n ~ 0.08 dominate
    assert row.median_mse < 0.1


def test_density_ratio_tiny_sample_runs():
    (row,) = check_density_ratio(linear_spec(1), [8], MRule.parse(4), 5, 1, workers=1)
    assert row.m <= 4
    assert math.isfinite(row.median_mse)


# ---------------------------------------------------------------- series rates and Gram


def test_rate_sweep_lipschitz_bound_and_span():
    spec = DgpSpec.from_dict({
        "d": 1, "marginals": ["cauchy"], "propensity": [0.0, 0.0],
        "mu0": [{"powers": [0], "coef": 1.0}, {"powers": [1], "coef": 2.0}, {"powers": [2], "coef": -1.0}],
        "mu1": [{"powers": [0], "coef": 0.0}],
    })
    rows = rate_sweep_series(spec, [BasisSpec("power", 1, 2)], [200, 800], seed=3, reps=5,
                             n_oracle=20_000, n_mc=5000, workers=1)
    for row in rows:
        assert row.surrogate_error < 1e-20
        assert all(r <= b * (1 + 1e-12) for r, b in zip(row.r_n, row.r_n_bound))
        assert row.median_l2 > 0


def test_gram_study_orders_dependence():
    dep = DgpSpec.from_dict({"d": 2, "corr": [[1, 0.8], [0.8, 1]], "mu0": [{"powers": [0, 0], "coef": 0}],
                             "mu1": [{"powers": [0, 0], "coef": 0}]})
    ind = DgpSpec.from_dict({"d": 2, "mu0": [{"powers": [0, 0], "coef": 0}],
                             "mu1": [{"powers": [0, 0], "coef": 0}]})
    b = BasisSpec("power", 2, 2, orthonormal=True)
    lam_dep = gram_study(dep, b, 5000, 1)["lambda_min_hat"]
    lam_ind = gram_study(ind, b, 5000, 1)["lambda_min_hat"]
    assert 0 < lam_dep < lam_ind
    assert gram_study(ind, b, 5000, 1, points="oracle")["lambda_min_hat"] > 0.8
    with pytest.raises(ConfigurationError):
        gram_study(ind, b, 100, 1, points="grid")
