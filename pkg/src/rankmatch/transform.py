"""Marginal empirical CDF rank transforms and generic covariate transformations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import InputError


@runtime_checkable
class Transformation(Protocol):
    """A deterministic map from raw covariates (n x d) to transformed points (n x m)."""

    def __call__(self, data: np.ndarray) -> np.ndarray: ...


def _as_matrix(data, name: str = "data") -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str = "data") -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise InputError(f"{name} has a non-finite entry at row {row}, column {col}")


@dataclass(frozen=True, eq=False)
class RankMap:
    """Fitted marginal empirical CDFs.

    ``sorted_columns[k]`` holds the sorted training values of coordinate k.
    Evaluating at x gives ``#{i : X_ik <= x_k} / n`` per coordinate, so points
    below the training minimum map to 0.0 and training points land in
    {1/n, ..., 1}.
    """

    sorted_columns: tuple[np.ndarray, ...]
    n: int

    @property
    def d(self) -> int:
        return len(self.sorted_columns)

    def __call__(self, data) -> np.ndarray:
        return apply_ecdf_batch(self, data)


def fit_ecdf(data) -> RankMap:
    """Fit marginal ECDFs on the pooled sample (all units, both groups)."""
    arr = _as_matrix(data)
    n, d = arr.shape
    if n < 1 or d < 1:
        raise InputError(f"need at least one row and one column, got shape {arr.shape}")
    check_finite(arr)
    cols = []
    for k in range(d):
        col = np.sort(arr[:, k], kind="stable")
        col.setflags(write=False)
        cols.append(col)
    return RankMap(tuple(cols), n)


def apply_ecdf(rank_map: RankMap, point) -> np.ndarray:
    p = np.asarray(point, dtype=float).reshape(-1)
    if p.shape[0] != rank_map.d:
        raise InputError(f"point has dimension {p.shape[0]}, expected {rank_map.d}")
    return apply_ecdf_batch(rank_map, p.reshape(1, -1))[0]


def apply_ecdf_batch(rank_map: RankMap, data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 0:
        return np.empty((0, rank_map.d))
    arr = _as_matrix(arr)
    if arr.shape[1] != rank_map.d:
        raise InputError(f"data has {arr.shape[1]} columns, expected {rank_map.d}")
    out = np.empty(arr.shape, dtype=float)
    for k, col in enumerate(rank_map.sorted_columns):
        # side="right" counts stored values <= x, ties included
        out[:, k] = np.searchsorted(col, arr[:, k], side="right") / rank_map.n
    return out


class Identity:
    """phi(x) = x."""

    def __call__(self, data) -> np.ndarray:
        return _as_matrix(data).copy()


@dataclass(frozen=True)
class Affine:
    """phi(x) = x * scale + shift, coordinate-wise."""

    scale: tuple[float, ...]
    shift: tuple[float, ...]

    def __call__(self, data) -> np.ndarray:
        arr = _as_matrix(data)
        return arr * np.asarray(self.scale) + np.asarray(self.shift)
