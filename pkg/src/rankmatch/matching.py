"""M-nearest-neighbor matching with replacement and catchment-area density ratios.

Both backends rank candidates by squared Euclidean distance, computed by the
same coordinate-wise accumulation, and break ties at the M-th distance by
ascending unit index. That makes the brute-force and k-d tree paths
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, InputError
from .transform import check_finite

BACKENDS = ("brute", "kdtree")

# rows of the query block processed at once by the brute-force backend
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class MatchOutput:
    """Match sets J(i) as an (n, M) array of unit indices, plus K(i) counts.

    Rows of ``match_sets`` are sorted by (distance, index). ``distances`` holds
    the matching Euclidean distances in the same layout.
    """

    match_sets: np.ndarray
    k_counts: np.ndarray
    distances: np.ndarray
    m: int

    def as_sets(self) -> list[set[int]]:
        return [set(row.tolist()) for row in self.match_sets]


@dataclass(frozen=True)
class RatioEstimate:
    value: float
    k_matched: int
    m: int


def squared_distances(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """(nq, nt) squared distances, accumulated one coordinate at a time."""
    out = np.zeros((queries.shape[0], targets.shape[0]))
    for k in range(queries.shape[1]):
        diff = queries[:, k, None] - targets[None, :, k]
        out += diff * diff
    return out


def _select(sqd: np.ndarray, m: int) -> np.ndarray:
    """Column indices of the m smallest entries per row, ties by lower index."""
    if m == sqd.shape[1]:
        thr = sqd.max(axis=1)
    else:
        thr = np.partition(sqd, m - 1, axis=1)[:, m - 1]
    below = sqd < thr[:, None]
    need = m - below.sum(axis=1)
    tied = sqd == thr[:, None]
    take = below | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))
    cols = np.nonzero(take)[1].reshape(sqd.shape[0], m)
    # order each row by (distance, index)
    d = np.take_along_axis(sqd, cols, axis=1)
    order = np.lexsort((cols, d), axis=1)
    return np.take_along_axis(cols, order, axis=1)


def _nearest_brute(queries, targets, m):
    idx = np.empty((queries.shape[0], m), dtype=np.intp)
    sq = np.empty((queries.shape[0], m))
    for start in range(0, queries.shape[0], _CHUNK):
        block = squared_distances(queries[start:start + _CHUNK], targets)
        cols = _select(block, m)
        idx[start:start + _CHUNK] = cols
        sq[start:start + _CHUNK] = np.take_along_axis(block, cols, axis=1)
    return idx, sq


def _nearest_kdtree(queries, targets, m):
    tree = cKDTree(targets)
    dist, _ = tree.query(queries, k=m)
    dist = np.asarray(dist).reshape(queries.shape[0], -1)
    radius = dist[:, m - 1]
    # The tree's own rounding may differ from ours; inflate the radius so the
    # candidate set is a superset, then select exactly on our distances.
    radius = radius * (1.0 + 1e-9) + 1e-12
    candidates = tree.query_ball_point(queries, radius)
    idx = np.empty((queries.shape[0], m), dtype=np.intp)
    sq = np.empty((queries.shape[0], m))
    for i, cand in enumerate(candidates):
        cand = np.sort(np.asarray(cand, dtype=np.intp))
        block = squared_distances(queries[i:i + 1], targets[cand])
        cols = _select(block, m)[0]
        idx[i] = cand[cols]
        sq[i] = block[0, cols]
    return idx, sq


def nearest(queries: np.ndarray, targets: np.ndarray, m: int, backend: str = "kdtree"):
    """Indices (into ``targets``) and squared distances of the m nearest targets."""
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if m < 1:
        raise ConfigurationError(f"M must be a positive integer, got {m}")
    if m > targets.shape[0]:
        raise ConfigurationError(
            f"M={m} exceeds the number of candidate units ({targets.shape[0]})"
        )
    if queries.shape[0] == 0:
        return np.empty((0, m), dtype=np.intp), np.empty((0, m))
    if backend == "brute":
        return _nearest_brute(queries, targets, m)
    return _nearest_kdtree(queries, targets, m)


def _prepare(points, name):
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D array")
    check_finite(arr, name)
    return arr


def match_nn_phi(points0, points1, treated, m: int, backend: str = "kdtree") -> MatchOutput:
    """Match each unit to M units of the opposite group.

    Treated units search among controls using ``points0`` coordinates and
    controls search among treated units using ``points1`` coordinates, i.e.
    unit i is compared in the space of group 1 - D_i.
    """
    p0 = _prepare(points0, "points0")
    p1 = _prepare(points1, "points1")
    d = np.asarray(treated, dtype=bool).reshape(-1)
    n = d.shape[0]
    if p0.shape[0] != n or p1.shape[0] != n:
        raise InputError("points and treatment flags must have the same number of rows")
    t_idx = np.flatnonzero(d)
    c_idx = np.flatnonzero(~d)
    if t_idx.size == 0 or c_idx.size == 0:
        raise ConfigurationError("both treatment groups must be non-empty")
    m = int(m)
    if m < 1:
        raise ConfigurationError(f"M must be a positive integer, got {m}")
    if m > min(t_idx.size, c_idx.size):
        raise ConfigurationError(
            f"M={m} exceeds the smaller group size "
            f"(treated={t_idx.size}, control={c_idx.size})"
        )

    match_sets = np.empty((n, m), dtype=np.intp)
    sq = np.empty((n, m))
    local, s = nearest(p0[t_idx], p0[c_idx], m, backend)
    match_sets[t_idx] = c_idx[local]
    sq[t_idx] = s
    local, s = nearest(p1[c_idx], p1[t_idx], m, backend)
    match_sets[c_idx] = t_idx[local]
    sq[c_idx] = s

    k_counts = np.bincount(match_sets.ravel(), minlength=n)
    for arr in (match_sets, k_counts, sq):
        arr.setflags(write=False)
    return MatchOutput(match_sets, k_counts, np.sqrt(sq), m)


def match_nn(points, treated, m: int, backend: str = "kdtree") -> MatchOutput:
    """M-NN matching with replacement on a single set of transformed points."""
    return match_nn_phi(points, points, treated, m, backend)


def catchment_counts(queries, base_points, target_points, m: int) -> np.ndarray:
    """K(x) = #{targets z : ||x - z|| <= M-th NN distance from z to the base sample}."""
    q = _prepare(queries, "queries")
    base = _prepare(base_points, "base_points")
    target = _prepare(target_points, "target_points")
    if target.shape[0] < 1:
        raise ConfigurationError("need at least one target point")
    if not 1 <= m <= base.shape[0]:
        raise ConfigurationError(f"M={m} must lie in [1, N0={base.shape[0]}]")
    if q.shape[1] != base.shape[1] or target.shape[1] != base.shape[1]:
        raise InputError("query, base and target points must share a dimension")
    radius_sq = np.empty(target.shape[0])
    for start in range(0, target.shape[0], _CHUNK):
        block = squared_distances(target[start:start + _CHUNK], base)
        if m == base.shape[0]:
            radius_sq[start:start + _CHUNK] = block.max(axis=1)
        else:
            radius_sq[start:start + _CHUNK] = np.partition(block, m - 1, axis=1)[:, m - 1]
    counts = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], _CHUNK):
        block = squared_distances(q[start:start + _CHUNK], target)
        counts[start:start + _CHUNK] = (block <= radius_sq[None, :]).sum(axis=1)
    return counts


def density_ratio_at(query, base_points, target_points, m: int) -> RatioEstimate:
    """Catchment-area estimate of f_target / f_base at ``query``: (N0/N1) K / M."""
    base = _prepare(base_points, "base_points")
    target = _prepare(target_points, "target_points")
    q = np.asarray(query, dtype=float).reshape(1, -1)
    k = int(catchment_counts(q, base, target, m)[0])
    return RatioEstimate(base.shape[0] / target.shape[0] * k / m, k, m)


def density_ratio_batch(queries, base_points, target_points, m: int) -> np.ndarray:
    base = _prepare(base_points, "base_points")
    target = _prepare(target_points, "target_points")
    k = catchment_counts(queries, base, target, m)
    return base.shape[0] / target.shape[0] * k / m


def odds_from_ratio(estimate: RatioEstimate, n0: int, n1: int) -> float:
    """Convert a control-base / treated-target density ratio to propensity odds.

    By Bayes, f1/f0 = [e/(1-e)] * P(D=0)/P(D=1); with group sizes as plug-in
    probabilities the odds estimate is ratio * n1/n0, which is just K/M.
    """
    if n0 < 1 or n1 < 1:
        raise InputError("group sizes must be at least 1")
    return estimate.value * n1 / n0
