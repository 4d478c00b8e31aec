"""Seeded data-generating processes and Monte Carlo drivers.

Covariates come from a Gaussian copula: correlated standard normals Z,
U = Phi(Z), and X_k = Q_k(U_k) for a chosen marginal quantile function. The
propensity is logistic-linear in U and the outcome surfaces are polynomials in
U, so the oracle quantities (U, e(U), mu_w(U), tau) are available exactly.

Each Monte Carlo rep draws from its own child of ``SeedSequence(seed)``, so
results do not depend on how reps are distributed over worker processes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .basis import BasisSpec, build_basis
from .errors import ConfigurationError, RankMatchError
from .estimator import Dataset, estimate_ate
from .matching import match_nn
from .regression import fit_series, gram_diagnostics, generated_covariate_terms
from .transform import fit_ecdf

MARGINALS = ("uniform", "normal", "cauchy", "lognormal")

# propensity must stay inside (c, 1 - c) with at least this c
MIN_OVERLAP = 0.01


@dataclass(frozen=True)
class Polynomial:
    """sum_k coef_k * prod_j u_j^{powers_kj}."""

    terms: tuple[tuple[tuple[int, ...], float], ...]

    @classmethod
    def from_terms(cls, terms) -> "Polynomial":
        out = []
        for t in terms:
            if isinstance(t, dict):
                powers, coef = t["powers"], t["coef"]
            else:
                powers, coef = t
            out.append((tuple(int(p) for p in powers), float(coef)))
        return cls(tuple(out))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[0])
        for powers, coef in self.terms:
            term = np.full(u.shape[0], coef)
            for k, p in enumerate(powers):
                if p:
                    term = term * u[:, k] ** p
            out += term
        return out

    def shifted(self, c: float) -> "Polynomial":
        d = len(self.terms[0][0]) if self.terms else 1
        return Polynomial(self.terms + (((0,) * d, float(c)),))

    def lipschitz_bound(self) -> float:
        """Upper bound on ||grad|| over [0,1]^d, since |d/du_k u^p| <= p there."""
        if not self.terms:
            return 0.0
        d = len(self.terms[0][0])
        grad = np.zeros(d)
        for powers, coef in self.terms:
            grad += abs(coef) * np.asarray(powers, dtype=float)
        return float(np.sqrt(grad @ grad))

    def max_degree(self) -> int:
        return max((sum(p) for p, _ in self.terms), default=0)


@dataclass(frozen=True)
class DgpSpec:
    d: int
    corr: tuple[tuple[float, ...], ...]
    marginals: tuple[str, ...]
    propensity: tuple[float, ...]
    mu0: Polynomial
    mu1: Polynomial
    noise_sd: tuple[float, float] = (1.0, 1.0)
    true_tau: float | None = None

    def __post_init__(self):
        corr = np.asarray(self.corr, dtype=float)
        if corr.shape != (self.d, self.d):
            raise ConfigurationError(f"correlation matrix must be {self.d}x{self.d}")
        if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise ConfigurationError("correlation matrix must be symmetric with unit diagonal")
        try:
            np.linalg.cholesky(corr)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("correlation matrix is not positive definite") from exc
        if len(self.marginals) != self.d or any(m not in MARGINALS for m in self.marginals):
            raise ConfigurationError(f"need {self.d} marginals from {MARGINALS}")
        if len(self.propensity) != self.d + 1:
            raise ConfigurationError("propensity needs an intercept plus one slope per coordinate")
        for poly in (self.mu0, self.mu1):
            if any(len(p) != self.d for p, _ in poly.terms):
                raise ConfigurationError("outcome polynomial powers must have length d")
        if min(self.noise_sd) < 0:
            raise ConfigurationError("noise standard deviations must be non-negative")
        lo, hi = self.propensity_range()
        if lo <= MIN_OVERLAP or hi >= 1 - MIN_OVERLAP:
            raise ConfigurationError(
                f"propensity range ({lo:.4f}, {hi:.4f}) violates overlap c={MIN_OVERLAP}"
            )

    def propensity_range(self) -> tuple[float, float]:
        # logit is linear in u, so extremes sit on the cube's corners
        b = np.asarray(self.propensity[1:])
        lo = self.propensity[0] + np.minimum(b, 0).sum()
        hi = self.propensity[0] + np.maximum(b, 0).sum()
        return float(expit(lo)), float(expit(hi))

    def e(self, u: np.ndarray) -> np.ndarray:
        return expit(self.propensity[0] + u @ np.asarray(self.propensity[1:]))

    def tau(self) -> float:
        if self.true_tau is not None:
            return float(self.true_tau)
        return polynomial_mean(self.mu1, self.corr) - polynomial_mean(self.mu0, self.corr)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mu0"] = [{"powers": list(p), "coef": c} for p, c in self.mu0.terms]
        out["mu1"] = [{"powers": list(p), "coef": c} for p, c in self.mu1.terms]
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "DgpSpec":
        try:
            d = int(cfg["d"])
            corr = cfg.get("corr", np.eye(d).tolist())
            return cls(
                d=d,
                corr=tuple(tuple(float(v) for v in row) for row in corr),
                marginals=tuple(cfg.get("marginals", ["uniform"] * d)),
                propensity=tuple(float(v) for v in cfg.get("propensity", [0.0] * (d + 1))),
                mu0=Polynomial.from_terms(cfg["mu0"]),
                mu1=Polynomial.from_terms(cfg["mu1"]),
                noise_sd=tuple(float(v) for v in cfg.get("noise_sd", [1.0, 1.0])),
                true_tau=cfg.get("true_tau"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"invalid DGP specification: {exc!r}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _monomial_mean(powers, corr: np.ndarray) -> float:
    active = [k for k, p in enumerate(powers) if p]
    if not active:
        return 1.0
    if len(active) == 1:
        return 1.0 / (powers[active[0]] + 1)
    sub = corr[np.ix_(active, active)]
    if np.allclose(sub, np.eye(len(active))):
        return float(np.prod([1.0 / (powers[k] + 1) for k in active]))
    if len(active) == 2 and all(powers[k] == 1 for k in active):
        # E[U1 U2] from Spearman's rho of the Gaussian copula
        rho = sub[0, 1]
        return 0.25 + math.asin(rho / 2) / (2 * math.pi)
    # no closed form used; fixed-seed quadrature by simulation
    z = np.random.default_rng(20240101).standard_normal((2_000_000, len(active)))
    u = ndtr(z @ np.linalg.cholesky(sub).T)
    return float(np.mean(np.prod(u ** np.asarray([powers[k] for k in active]), axis=1)))


def polynomial_mean(poly: Polynomial, corr) -> float:
    """E[poly(U)] for U from the Gaussian copula with correlation ``corr``."""
    corr = np.asarray(corr, dtype=float)
    return float(sum(c * _monomial_mean(p, corr) for p, c in poly.terms))


@dataclass(frozen=True, eq=False)
class DgpOracle:
    u: np.ndarray
    e: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray


def _quantile(marginal: str, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    if marginal == "uniform":
        return u
    if marginal == "normal":
        return z
    if marginal == "cauchy":
        return np.tan(np.pi * (u - 0.5))
    return np.exp(z)


def sample_copula(spec: DgpSpec, rng: np.random.Generator, n: int):
    z = rng.standard_normal((n, spec.d)) @ np.linalg.cholesky(np.asarray(spec.corr)).T
    return z, ndtr(z)


def sample_dgp(spec: DgpSpec, n: int, seed) -> tuple[Dataset, DgpOracle]:
    """Draw n units; deterministic in ``seed`` (int or SeedSequence)."""
    if n < 2:
        raise ConfigurationError(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)
    z, u = sample_copula(spec, rng, n)
    x = np.column_stack([_quantile(mg, z[:, k], u[:, k]) for k, mg in enumerate(spec.marginals)])
    e = spec.e(u)
    d = rng.random(n) < e
    eps = rng.standard_normal((n, 2))
    mu0, mu1 = spec.mu0(u), spec.mu1(u)
    y0 = mu0 + spec.noise_sd[0] * eps[:, 0]
    y1 = mu1 + spec.noise_sd[1] * eps[:, 1]
    y = np.where(d, y1, y0)
    return Dataset(x, d, y), DgpOracle(u, e, mu0, mu1, y0, y1)


@dataclass(frozen=True)
class EfficiencyBound:
    value: float
    std_error: float
    n_mc: int


def efficiency_bound(spec: DgpSpec, n_mc: int = 200_000, seed=0) -> EfficiencyBound:
    """Monte Carlo value of E[psi^2] for the efficient influence function psi."""
    rng = np.random.default_rng(seed)
    _, u = sample_copula(spec, rng, n_mc)
    e = spec.e(u)
    d = rng.random(n_mc) < e
    eps = rng.standard_normal((n_mc, 2))
    mu0, mu1 = spec.mu0(u), spec.mu1(u)
    y = np.where(d, mu1 + spec.noise_sd[1] * eps[:, 1], mu0 + spec.noise_sd[0] * eps[:, 0])
    psi = mu1 - mu0 + d * (y - mu1) / e - (~d) * (y - mu0) / (1 - e) - spec.tau()
    sq = psi * psi
    return EfficiencyBound(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_mc)), n_mc)


@dataclass(frozen=True)
class MRule:
    """Number of matches as a function of n.

    kind="power": ceil(n**value); kind="auto": ceil(n**0.75 / log n), a heuristic
    inside M -> inf, M log n / n -> 0; kind="fixed": int(value).
    """

    kind: str = "auto"
    value: float = 0.0

    def __call__(self, n: int) -> int:
        if self.kind == "power":
            m = math.ceil(n ** self.value)
        elif self.kind == "auto":
            m = math.ceil(n ** 0.75 / math.log(n))
        elif self.kind == "fixed":
            m = int(self.value)
        else:
            raise ConfigurationError(f"unknown M rule {self.kind!r}")
        return max(m, 1)

    @classmethod
    def parse(cls, value) -> "MRule":
        if isinstance(value, int):
            return cls("fixed", value)
        text = str(value).strip()
        if text == "auto":
            return cls("auto")
        if text.startswith("power:"):
            return cls("power", float(text.split(":", 1)[1]))
        try:
            return cls("fixed", int(text))
        except ValueError:
            raise ConfigurationError(f"cannot parse M rule {value!r}") from None

    def label(self) -> str:
        return {"power": f"power:{self.value}", "auto": "auto"}.get(self.kind, str(int(self.value)))


@dataclass(frozen=True)
class EstimatorConfig:
    m_rule: MRule = field(default_factory=MRule)
    adjustment: BasisSpec | None = None
    level: float = 0.95
    backend: str = "brute"


@dataclass(frozen=True)
class RepRecord:
    rep: int
    tau_hat: float
    sigma2_hat: float
    ci_lower: float
    ci_upper: float
    covered: bool
    m: int
    n_treated: int
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class McReport:
    """Summary of a Monte Carlo study; ``records`` are sorted by rep index."""

    reps: int
    n: int
    true_tau: float
    records: list
    failures: list
    bias: float
    sd: float
    rmse: float
    mean_sigma2: float
    var_sqrt_n_tau: float
    coverage: float
    se_bias: float
    se_sd: float
    se_rmse: float
    se_mean_sigma2: float
    se_var_sqrt_n_tau: float
    se_coverage: float

    def summary(self) -> dict:
        keys = ["reps", "n", "true_tau", "bias", "sd", "rmse", "mean_sigma2",
                "var_sqrt_n_tau", "coverage", "se_bias", "se_sd", "se_rmse",
                "se_mean_sigma2", "se_var_sqrt_n_tau", "se_coverage"]
        out = {k: getattr(self, k) for k in keys}
        out["failed_reps"] = [r.rep for r in self.failures]
        return out


def _run_rep(args) -> RepRecord:
    spec, cfg, n, rep, seed_seq = args
    tau = spec.tau()
    m = 0
    n_treated = 0
    try:
        data, _ = sample_dgp(spec, n, seed_seq)
        n_treated = data.n_treated
        m = min(cfg.m_rule(n), data.n_treated, data.n_control)
        rep_report = estimate_ate(data, m, cfg.adjustment, cfg.level, cfg.backend)
    except RankMatchError as exc:
        return RepRecord(rep, math.nan, math.nan, math.nan, math.nan, False, m, n_treated,
                         f"{type(exc).__name__}: {exc}")
    lo, hi = rep_report.ci
    return RepRecord(rep, rep_report.tau_hat, rep_report.sigma2_hat, lo, hi,
                     bool(lo <= tau <= hi), m, n_treated)


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("RANKMATCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"RANKMATCH_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def summarize(records: list, n: int, true_tau: float) -> McReport:
    records = sorted(records, key=lambda r: r.rep)
    ok = [r for r in records if not r.failed]
    failures = [r for r in records if r.failed]
    tau_hat = np.array([r.tau_hat for r in ok])
    sig = np.array([r.sigma2_hat for r in ok])
    cov = np.array([r.covered for r in ok], dtype=float)
    reps = len(ok)
    if reps == 0:
        nan = math.nan
        return McReport(len(records), n, true_tau, records, failures, *([nan] * 13))
    err = tau_hat - true_tau
    bias = float(err.mean())
    sd = float(tau_hat.std())
    rmse = float(np.sqrt(np.mean(err * err)))
    var_tau = float(tau_hat.var(ddof=1)) if reps > 1 else 0.0
    coverage = float(cov.mean())
    root = np.sqrt(reps)
    return McReport(
        reps=len(records), n=n, true_tau=true_tau, records=records, failures=failures,
        bias=bias, sd=sd, rmse=rmse,
        mean_sigma2=float(sig.mean()), var_sqrt_n_tau=n * var_tau, coverage=coverage,
        se_bias=sd / root,
        se_sd=sd / np.sqrt(2 * reps),
        se_rmse=float(np.std(err * err) / (2 * rmse * root)) if rmse > 0 else 0.0,
        se_mean_sigma2=float(sig.std() / root),
        se_var_sqrt_n_tau=n * var_tau * float(np.sqrt(2.0 / max(reps - 1, 1))),
        se_coverage=float(np.sqrt(coverage * (1 - coverage) / reps)),
    )


def run_monte_carlo(spec: DgpSpec, est_config: EstimatorConfig, n: int, reps: int,
                    seed: int, workers: int | None = None) -> McReport:
    """Independent (sample -> estimate) reps; M is clamped to the smaller group."""
    if reps < 1:
        raise ConfigurationError("reps must be >= 1")
    children = np.random.SeedSequence(seed).spawn(reps)
    jobs = [(spec, est_config, n, r, children[r]) for r in range(reps)]
    records = _map(_run_rep, jobs, worker_count(workers))
    return summarize(records, n, spec.tau())


def target_odds(treated: np.ndarray, e: np.ndarray) -> np.ndarray:
    """(1-e)/e for treated units, e/(1-e) for controls: the limit of K(i)/M."""
    return np.where(treated, (1 - e) / e, e / (1 - e))


@dataclass
class RatioRow:
    n: int
    m: int
    median_mse: float
    mean_mse: float
    mean_ratio: float
    mse: list


def _ratio_rep(args):
    spec, n, m_rule, seed_seq = args
    data, oracle = sample_dgp(spec, n, seed_seq)
    m = min(m_rule(n), data.n_treated, data.n_control)
    if m < 1:
        # one arm is empty: nothing to match, the rep carries no information
        return 0, float("nan"), float("nan")
    ranks = fit_ecdf(data.covariates)(data.covariates)
    out = match_nn(ranks, data.treated, m, backend="brute")
    ratio = out.k_counts / m
    err = ratio - target_odds(data.treated, oracle.e)
    return m, float(np.mean(err * err)), float(ratio.mean())


def check_density_ratio(spec: DgpSpec, n_grid, m_rule: MRule, reps: int, seed: int,
                        workers: int | None = None) -> list[RatioRow]:
    """Per n: MSE of K(i)/M against the oracle odds, over seeded reps."""
    rows = []
    root = np.random.SeedSequence(seed)
    for n, child in zip(n_grid, root.spawn(len(n_grid))):
        jobs = [(spec, int(n), m_rule, s) for s in child.spawn(reps)]
        res = _map(_ratio_rep, jobs, worker_count(workers))
        mse = [r[1] for r in res]
        if all(math.isnan(v) for v in mse):
            raise ConfigurationError(f"every rep at n={n} had an empty treatment arm")
        rows.append(RatioRow(int(n), int(np.median([r[0] for r in res])),
                             float(np.nanmedian(mse)), float(np.nanmean(mse)),
                             float(np.nanmean([r[2] for r in res])), mse))
    return rows


@dataclass
class RateRow:
    basis: str
    K: int
    n: int
    median_l2: float
    mean_l2: float
    median_r_n: float
    median_b_n: float
    lipschitz_bound: float
    median_lambda_min: float
    surrogate_error: float
    n_oracle: int
    l2: list
    r_n: list
    r_n_bound: list


def _rate_rep(args):
    spec, bspec, n, seed_seq, surrogate_coef, n_mc = args
    basis = build_basis(bspec)
    data, oracle = sample_dgp(spec, n, seed_seq)
    ranks = fit_ecdf(data.covariates)(data.covariates)
    y = oracle.y0
    fit = fit_series(basis, ranks, y)
    rng = np.random.default_rng(seed_seq.spawn(1)[0])
    _, w = sample_copula(spec, rng, n_mc)
    diff = basis.eval_matrix(w) @ (np.asarray(fit.coefficients) - surrogate_coef)
    terms = generated_covariate_terms(fit, spec.mu0, oracle.u, ranks)
    lam = gram_diagnostics(basis, ranks).lambda_min_hat
    return float(np.mean(diff * diff)), terms["r_n"], terms["b_n"], terms["max_point_error"], lam


def rate_sweep_series(spec: DgpSpec, basis_grid, n_grid, seed: int, reps: int = 20,
                      n_oracle: int = 100_000, n_mc: int = 20_000,
                      workers: int | None = None) -> list[RateRow]:
    """L2 distance of the rank-based series fit of mu_0 to its best projection.

    The regression uses every unit with outcome Y(0) = mu_0(U) + noise on the
    estimated ranks. The projection psi_K is approximated by a noiseless fit of
    mu_0 on ``n_oracle`` draws of the true U.
    """
    rows = []
    root = np.random.SeedSequence(seed)
    oracle_seed, sweep_seed = root.spawn(2)
    _, w_or = sample_copula(spec, np.random.default_rng(oracle_seed), n_oracle)
    lip = spec.mu0.lipschitz_bound()
    for bspec, bchild in zip(basis_grid, sweep_seed.spawn(len(basis_grid))):
        basis = build_basis(bspec)
        surrogate = fit_series(basis, w_or, spec.mu0(w_or))
        check = w_or[: min(n_oracle, 20_000)]
        gap = surrogate.predict_batch(check) - spec.mu0(check)
        surrogate_error = float(np.mean(gap * gap))
        coef = np.asarray(surrogate.coefficients)
        for n, child in zip(n_grid, bchild.spawn(len(n_grid))):
            jobs = [(spec, bspec, int(n), s, coef, n_mc) for s in child.spawn(reps)]
            res = _map(_rate_rep, jobs, worker_count(workers))
            l2 = [r[0] for r in res]
            rows.append(RateRow(
                basis=bspec.label(), K=basis.K, n=int(n),
                median_l2=float(np.median(l2)), mean_l2=float(np.mean(l2)),
                median_r_n=float(np.median([r[1] for r in res])),
                median_b_n=float(np.median([r[2] for r in res])),
                lipschitz_bound=lip,
                median_lambda_min=float(np.median([r[4] for r in res])),
                surrogate_error=surrogate_error, n_oracle=n_oracle, l2=l2,
                r_n=[r[1] for r in res], r_n_bound=[lip ** 2 * r[3] ** 2 for r in res],
            ))
    return rows


def gram_study(spec: DgpSpec, bspec: BasisSpec, n: int, seed: int, points: str = "ranks") -> dict:
    """Smallest eigenvalue of the scaled Gram on ranks (or oracle U) of a DGP sample."""
    data, oracle = sample_dgp(spec, n, seed)
    if points == "ranks":
        w = fit_ecdf(data.covariates)(data.covariates)
    elif points == "oracle":
        w = oracle.u
    else:
        raise ConfigurationError(f"points must be 'ranks' or 'oracle', got {points!r}")
    basis = build_basis(bspec)
    rep = gram_diagnostics(basis, w)
    return {"basis": bspec.label(), "K": basis.K, "n": n, "points": points,
            "lambda_min_hat": rep.lambda_min_hat}
