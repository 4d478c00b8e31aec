"""Series basis functions on [0, 1]^d: power series and tensor-product B-splines."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial import Legendre
from scipy.stats import qmc

from .errors import ConfigurationError, DomainError

FAMILIES = ("power", "piecewise")

# inputs this close to [0, 1] are clamped instead of rejected
_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    """Basis family and size parameters.

    family="power": all monomials of total degree <= ``degree``; with
    ``orthonormal=True`` each monomial w^a is replaced by the normalized shifted
    Legendre polynomial of the same degree, which spans the same space and is
    orthonormal under the uniform measure.

    family="piecewise": tensor products of clamped B-splines of local degree
    ``degree`` on ``knots`` uniform breakpoints per axis (endpoints included),
    continuity degree - 1.
    """

    family: str
    d: int
    degree: int
    knots: int = 2
    orthonormal: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown basis family {self.family!r}")
        if self.d < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {self.d}")
        if self.degree < 0:
            raise ConfigurationError(f"degree must be >= 0, got {self.degree}")
        if self.family == "piecewise":
            if self.knots < 2:
                raise ConfigurationError(f"need at least 2 knots, got {self.knots}")
            if self.orthonormal:
                raise ConfigurationError("orthonormal=True is only available for power bases")

    @property
    def K(self) -> int:
        if self.family == "power":
            return comb(self.d + self.degree, self.d)
        return (self.knots - 1 + self.degree) ** self.d

    def label(self) -> str:
        if self.family == "power":
            return f"{'legendre' if self.orthonormal else 'power'}:{self.degree}"
        return f"pp:{self.degree},{self.knots}"


def parse_basis(text: str, d: int) -> BasisSpec | None:
    """Parse ``none``, ``power:G``, ``legendre:G`` or ``pp:G,KNOTS``."""
    text = text.strip()
    if text == "none":
        return None
    kind, _, params = text.partition(":")
    try:
        if kind in ("power", "legendre"):
            return BasisSpec("power", d, int(params), orthonormal=kind == "legendre")
        if kind == "pp":
            g, k = params.split(",")
            return BasisSpec("piecewise", d, int(g), knots=int(k))
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"cannot parse basis {text!r}") from exc
    raise ConfigurationError(f"cannot parse basis {text!r}")


def graded_multi_indices(d: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors with |a| <= degree, by total degree then w1 before w2."""
    out = []
    for g in range(degree + 1):
        level = [a for a in itertools.product(range(g + 1), repeat=d) if sum(a) == g]
        out.extend(sorted(level, reverse=True))
    return out


def _falling(a: int, t: int) -> int:
    out = 1
    for j in range(t):
        out *= a - j
    return out


def _bspline_values(x: np.ndarray, knots: np.ndarray, degree: int, deriv: int) -> np.ndarray:
    """All clamped B-spline basis functions (or derivatives) at x, shape (n, nb).

    Intervals are right-continuous; x == 1 belongs to the last interval.
    """
    breaks = np.unique(knots)
    span = np.searchsorted(breaks, x, side="right") - 1
    span = np.clip(span, 0, breaks.size - 2) + degree  # index into the knot vector
    n_knots = knots.size
    low = degree - deriv
    # degree-0 indicators on the knot vector
    vals = np.zeros((x.size, n_knots - 1))
    vals[np.arange(x.size), span] = 1.0
    xc = x[:, None]
    for p in range(1, low + 1):
        nb = n_knots - p - 1
        left_den = knots[p:p + nb] - knots[:nb]
        right_den = knots[p + 1:p + 1 + nb] - knots[1:1 + nb]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (xc - knots[:nb]) / left_den, 0.0)
            right = np.where(right_den > 0, (knots[p + 1:p + 1 + nb] - xc) / right_den, 0.0)
        vals = left * vals[:, :nb] + right * vals[:, 1:nb + 1]
    for p in range(low + 1, degree + 1):
        nb = n_knots - p - 1
        left_den = knots[p:p + nb] - knots[:nb]
        right_den = knots[p + 1:p + 1 + nb] - knots[1:1 + nb]
        with np.errstate(divide="ignore"):
            a = np.where(left_den > 0, p / left_den, 0.0)
            b = np.where(right_den > 0, p / right_den, 0.0)
        vals = a * vals[:, :nb] - b * vals[:, 1:nb + 1]
    return vals


class Basis:
    """Evaluable basis p_K(w) for a :class:`BasisSpec`."""

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        self.K = spec.K
        if spec.family == "power":
            self.exponents = np.array(graded_multi_indices(spec.d, spec.degree), dtype=int)
            if spec.orthonormal:
                self._legendre = [
                    np.sqrt(2 * a + 1) * Legendre.basis(a, domain=[0, 1])
                    for a in range(spec.degree + 1)
                ]
        else:
            g = spec.degree
            self.knot_vector = np.concatenate(
                [np.zeros(g), np.linspace(0.0, 1.0, spec.knots), np.ones(g)]
            )
            per_axis = spec.knots - 1 + g
            self.tensor_index = np.array(
                list(itertools.product(range(per_axis), repeat=spec.d)), dtype=int
            )

    @property
    def d(self) -> int:
        return self.spec.d

    def max_derivative_order(self) -> float:
        return np.inf if self.spec.family == "power" else self.spec.degree

    def check_domain(self, w) -> np.ndarray:
        arr = np.asarray(w, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1) if arr.size == self.d else arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[1] != self.d:
            raise DomainError(f"expected points of dimension {self.d}, got shape {np.shape(w)}")
        if not np.isfinite(arr).all():
            raise DomainError("basis evaluated at a non-finite point")
        if (arr < -_CLAMP_TOL).any() or (arr > 1 + _CLAMP_TOL).any():
            raise DomainError("basis evaluated outside [0, 1]^d")
        return np.clip(arr, 0.0, 1.0)

    def eval_matrix(self, w, t=None) -> np.ndarray:
        """(n, K) matrix of d^t p_K at each row of w (t=None means no derivative)."""
        pts = self.check_domain(w)
        t = np.zeros(self.d, dtype=int) if t is None else np.asarray(t, dtype=int).reshape(-1)
        if t.shape[0] != self.d or (t < 0).any():
            raise ConfigurationError(f"multi-index {t.tolist()} is invalid for d={self.d}")
        if t.sum() > self.max_derivative_order():
            raise ConfigurationError(
                f"derivative order {t.sum()} exceeds basis smoothness {self.spec.degree}"
            )
        n = pts.shape[0]
        out = np.ones((n, self.K))
        if self.spec.family == "power":
            for k in range(self.d):
                tk = int(t[k])
                for a in np.unique(self.exponents[:, k]):
                    cols = self.exponents[:, k] == a
                    if self.spec.orthonormal:
                        col = self._legendre[a].deriv(tk)(pts[:, k]) if tk else self._legendre[a](pts[:, k])
                    elif a < tk:
                        col = np.zeros(n)
                    else:
                        col = _falling(int(a), tk) * pts[:, k] ** (int(a) - tk)
                    out[:, cols] *= col[:, None]
            return out
        for k in range(self.d):
            vals = _bspline_values(pts[:, k], self.knot_vector, self.spec.degree, int(t[k]))
            out *= vals[:, self.tensor_index[:, k]]
        return out

    def eval(self, w) -> np.ndarray:
        return self.eval_matrix(np.asarray(w, dtype=float).reshape(1, -1))[0]

    def eval_deriv(self, w, t) -> np.ndarray:
        return self.eval_matrix(np.asarray(w, dtype=float).reshape(1, -1), t)[0]


def build_basis(spec: BasisSpec) -> Basis:
    return Basis(spec)


def _derivative_indices(d: int, q: int) -> list[tuple[int, ...]]:
    return [t for t in itertools.product(range(q + 1), repeat=d) if sum(t) == q]


def sup_norm_estimate(basis: Basis, q: int = 0) -> float:
    """Grid estimate of max over |t| = q of sup_w ||d^t p_K(w)||.

    d <= 2 uses a tensor grid with at least 10^4 points; larger d uses 2^17
    Sobol points plus the 2^d corners of the cube.
    """
    if q > basis.max_derivative_order():
        raise ConfigurationError(f"derivative order {q} exceeds basis smoothness")
    d = basis.d
    if d == 1:
        grid = np.linspace(0.0, 1.0, 10001).reshape(-1, 1)
    elif d == 2:
        g = np.linspace(0.0, 1.0, 101)
        grid = np.array(list(itertools.product(g, g)))
    else:
        sob = qmc.Sobol(d, scramble=True, seed=0).random_base2(17)
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=d)))
        grid = np.vstack([sob, corners])
    best = 0.0
    for t in _derivative_indices(d, q):
        for start in range(0, grid.shape[0], 8192):
            vals = basis.eval_matrix(grid[start:start + 8192], t)
            best = max(best, float(np.sqrt((vals * vals).sum(axis=1)).max()))
    return best
