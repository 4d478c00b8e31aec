"""Series least squares with generated covariates.

The coefficient vector solves the normal equations through an eigendecomposition
pseudo-inverse of the scaled Gram matrix P'P/n, so rank-deficient designs are
handled deterministically (minimum-norm solution, no ridge term).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import Basis
from .errors import DegenerateFitError, InputError

# eigenvalues below this fraction of the largest are treated as zero
RELATIVE_CUTOFF = 1e-10


@dataclass(frozen=True, eq=False)
class SeriesFit:
    basis: Basis
    coefficients: np.ndarray
    gram: np.ndarray
    rank_used: int
    n_fit: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def to_unit(self, points) -> np.ndarray:
        """Map raw points to the basis domain (identity unless a box was given)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if pts.size == self.basis.d else pts.reshape(-1, 1)
        if self.lower is None:
            return pts
        width = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return (pts - self.lower) / width

    def predict_batch(self, points) -> np.ndarray:
        return self.basis.eval_matrix(self.to_unit(points)) @ self.coefficients


@dataclass
class DiagnosticsReport:
    """Gram and approximation diagnostics.

    ``b_n`` uses the empirical Gram's inverse square root on its retained
    subspace as a stand-in for the population Q^{-1/2}.
    """

    lambda_min_hat: float
    l2_error: float | None = None
    approx_terms: dict = field(default_factory=dict)


def pinv_sym(gram: np.ndarray, power: float = -1.0):
    """gram^power on the eigen-subspace above the relative cutoff; returns (matrix, rank)."""
    vals, vecs = np.linalg.eigh(gram)
    top = vals.max() if vals.size else 0.0
    keep = vals > RELATIVE_CUTOFF * top if top > 0 else np.zeros_like(vals, dtype=bool)
    v = vecs[:, keep]
    return (v * vals[keep] ** power) @ v.T, int(keep.sum())


def fit_series(basis: Basis, points, y, lower=None, upper=None) -> SeriesFit:
    """Least-squares fit of y on p_K(points).

    ``lower``/``upper`` optionally give a box that is mapped affinely onto
    [0, 1]^d before evaluating the basis; by default points must already lie in
    the unit cube.
    """
    yv = np.asarray(y, dtype=float).reshape(-1)
    if yv.size < 1:
        raise InputError("need at least one observation to fit")
    if not np.isfinite(yv).all():
        raise InputError("outcomes must be finite")
    probe = SeriesFit(basis, np.zeros(basis.K), np.zeros((0, 0)), 0, 0,
                      None if lower is None else np.asarray(lower, dtype=float),
                      None if upper is None else np.asarray(upper, dtype=float))
    design = basis.eval_matrix(probe.to_unit(points))
    n = design.shape[0]
    if n != yv.size:
        raise InputError(f"{n} points but {yv.size} outcomes")
    if not design.any():
        raise DegenerateFitError("every basis function vanishes on the fitting points")
    if n < basis.K:
        warnings.warn(f"fitting K={basis.K} basis functions on only n={n} points", stacklevel=2)
    gram = design.T @ design / n
    inv, rank = pinv_sym(gram)
    coef = inv @ (design.T @ yv / n)
    for arr in (coef, gram):
        arr.setflags(write=False)
    return SeriesFit(basis, coef, gram, rank, n, probe.lower, probe.upper)


def predict(fit: SeriesFit, w) -> float:
    return float(fit.predict_batch(np.asarray(w, dtype=float).reshape(1, -1))[0])


def gram_diagnostics(basis: Basis, points) -> DiagnosticsReport:
    design = basis.eval_matrix(points)
    n = design.shape[0]
    if n < basis.K:
        warnings.warn(f"n={n} < K={basis.K}: the Gram matrix is rank deficient", stacklevel=2)
    gram = design.T @ design / max(n, 1)
    lam = float(np.linalg.eigvalsh(gram)[0])
    return DiagnosticsReport(lambda_min_hat=lam)


def l2_error_mc(fit: SeriesFit, truth: Callable[[np.ndarray], np.ndarray],
                sampler: Callable[[np.random.Generator, int], np.ndarray],
                n_mc: int, seed=0) -> float:
    """Monte Carlo estimate of E[(psi_hat(W) - truth(W))^2] with W drawn by ``sampler``."""
    if n_mc < 1000:
        raise InputError(f"n_mc must be at least 1000, got {n_mc}")
    pts = sampler(np.random.default_rng(seed), n_mc)
    diff = fit.predict_batch(pts) - np.asarray(truth(pts), dtype=float)
    return float(np.mean(diff * diff))


def generated_covariate_terms(fit: SeriesFit, psi: Callable[[np.ndarray], np.ndarray],
                              points_true, points_hat) -> dict:
    """R_n = ||Psi - Psi_n||^2 / n and B_n = ||(P - P_n) G^{-1/2}||_2^2 / n."""
    w = np.asarray(points_true, dtype=float)
    w_hat = np.asarray(points_hat, dtype=float)
    n = w.shape[0]
    r = np.asarray(psi(w), dtype=float) - np.asarray(psi(w_hat), dtype=float)
    diff = fit.basis.eval_matrix(w) - fit.basis.eval_matrix(w_hat)
    root_inv, _ = pinv_sym(np.asarray(fit.gram), power=-0.5)
    b_n = float(np.linalg.norm(diff @ root_inv, 2) ** 2 / n)
    return {"r_n": float(r @ r / n), "b_n": b_n,
            "max_point_error": float(np.sqrt(((w - w_hat) ** 2).sum(axis=1)).max())}
