"""Multivariate orthonormal Legendre bases on a box.

Basis functions are tensor products ``L_i(x) = prod_j Pn_j(u_j)`` of
orthonormal Legendre polynomials evaluated at the canonical coordinates
``u = (x - center) / half_width`` in ``[-1, 1]^d``.  The inner product uses
the constant weight 1/2 per dimension, i.e. the uniform probability
measure on the box, so ``Pn(u) = sqrt(2n + 1) * P_n(u)`` and the constant
basis function is exactly one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError, ResourceLimitError

MAX_BASIS_SIZE = 20_000
MAX_GRID_NODES = 200_000_000
DOMAIN_TOLERANCE = 1e-9
LEGENDRE_WEIGHT = 0.5


@dataclass(frozen=True, eq=False)
class DomainBox:
    """Axis-aligned box ``[lower, upper]`` mapped affinely onto ``[-1, 1]^d``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("domain bounds must be finite")
        bad = np.nonzero(lower >= upper)[0]
        if bad.size:
            raise ValueError(f"empty domain interval in dimension {int(bad[0])}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dimension: int) -> "DomainBox":
        return cls(-np.ones(dimension), np.ones(dimension))

    @classmethod
    def from_envelope(cls, samples, inflation=0.5, min_half_width=None) -> "DomainBox":
        """Box around the per-dimension min/max of ``samples``.

        Each half width is scaled by ``1 + inflation`` and then raised to
        at least ``min_half_width`` (scalar or per-dimension).
        """
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        lo = samples.min(axis=0)
        hi = samples.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * (1.0 + inflation)
        if min_half_width is not None:
            half = np.maximum(half, np.broadcast_to(min_half_width, half.shape))
        return cls(center - half, center + half)

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def to_canonical(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.half_width

    def from_canonical(self, u):
        return self.center + np.asarray(u, dtype=float) * self.half_width

    def contains(self, x, tol: float = DOMAIN_TOLERANCE) -> bool:
        u = self.to_canonical(x)
        return bool(np.all(np.abs(u) <= 1.0 + tol))

    def check(self, x, tol: float = DOMAIN_TOLERANCE) -> np.ndarray:
        """Canonical coordinates of ``x``; raises if any lie outside the box."""
        u = self.to_canonical(x)
        outside = np.abs(u) > 1.0 + tol
        if np.any(outside):
            dim = int(np.nonzero(outside.reshape(-1, self.dimension).any(axis=0))[0][0])
            value = np.asarray(x, dtype=float).reshape(-1, self.dimension)[:, dim]
            raise DomainError(
                f"point outside domain in dimension {dim}: value(s) "
                f"{np.array2string(value, precision=6)} not in "
                f"[{self.lower[dim]:.6g}, {self.upper[dim]:.6g}]",
                dimension=dim,
            )
        return np.clip(u, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data) -> "DomainBox":
        return cls(data["lower"], data["upper"])

    def __eq__(self, other):
        if not isinstance(other, DomainBox):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self):
        return f"DomainBox(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # lexicographically descending: (total, 0, ...) first
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def graded_multi_indices(dimension: int, max_order: int) -> np.ndarray:
    """All multi-indices with total order <= ``max_order`` in graded-lex order."""
    rows = [c for total in range(max_order + 1) for c in _compositions(total, dimension)]
    return np.array(rows, dtype=np.int64).reshape(-1, dimension)


def basis_size(dimension: int, max_order: int) -> int:
    return math.comb(dimension + max_order, max_order)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Total-order truncated orthonormal Legendre basis on a :class:`DomainBox`.

    ``indices[i]`` holds the per-dimension Legendre orders of basis function
    ``i``.  Row 0 is the constant function and rows ``1 .. d`` are the
    linear functions of dimensions ``0 .. d-1``.
    """

    dimension: int
    max_order: int
    indices: np.ndarray
    domain: DomainBox
    weight: float = LEGENDRE_WEIGHT

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    @property
    def multi_indices(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.indices]

    @property
    def total_orders(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def linear_index(self, dim: int) -> int:
        """Row of the degree-one basis function of dimension ``dim``."""
        return 1 + dim

    def __len__(self):
        return self.size


def build_basis(dimension: int, max_order: int, domain: DomainBox | None = None,
                max_size: int = MAX_BASIS_SIZE) -> BasisSet:
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    m = basis_size(dimension, max_order)
    if m > max_size:
        raise ResourceLimitError(
            f"basis with d={dimension}, c={max_order} has {m} functions, cap is {max_size}")
    if domain is None:
        domain = DomainBox.unit(dimension)
    if domain.dimension != dimension:
        raise ValueError(f"domain has dimension {domain.dimension}, expected {dimension}")
    indices = graded_multi_indices(dimension, max_order)
    indices.flags.writeable = False
    return BasisSet(dimension, max_order, indices, domain)


def legendre_table(u, max_order: int) -> np.ndarray:
    """Orthonormal Legendre values ``Pn_0 .. Pn_max_order`` at ``u``.

    Returns shape ``u.shape + (max_order + 1,)``.  No domain check.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty(u.shape + (max_order + 1,))
    out[..., 0] = 1.0
    if max_order >= 1:
        out[..., 1] = u
    for n in range(1, max_order):
        out[..., n + 1] = ((2 * n + 1) * u * out[..., n] - n * out[..., n - 1]) / (n + 1)
    out *= np.sqrt(2.0 * np.arange(max_order + 1) + 1.0)
    return out


def legendre_derivative_table(u, max_order: int) -> np.ndarray:
    """Derivatives d/du of the orthonormal Legendre polynomials at ``u``."""
    u = np.asarray(u, dtype=float)
    p = np.empty(u.shape + (max_order + 1,))
    dp = np.zeros(u.shape + (max_order + 1,))
    p[..., 0] = 1.0
    if max_order >= 1:
        p[..., 1] = u
        dp[..., 1] = 1.0
    for n in range(1, max_order):
        p[..., n + 1] = ((2 * n + 1) * u * p[..., n] - n * p[..., n - 1]) / (n + 1)
        dp[..., n + 1] = dp[..., n - 1] + (2 * n + 1) * p[..., n]
    dp *= np.sqrt(2.0 * np.arange(max_order + 1) + 1.0)
    return dp


def eval_orthonormal_legendre(order: int, x, tol: float = DOMAIN_TOLERANCE):
    """Orthonormal Legendre polynomial of degree ``order`` on ``[-1, 1]``.

    Arguments within ``tol`` of the interval are clamped; anything further
    out raises :class:`DomainError`.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + tol):
        raise DomainError(f"Legendre argument outside [-1, 1]: {x}")
    values = legendre_table(np.clip(x, -1.0, 1.0), order)[..., order]
    return float(values) if values.ndim == 0 else values


def _product_over_dims(tables, indices):
    # tables[j]: (n, c+1); indices: (m, d) -> (n, m)
    out = tables[0][:, indices[:, 0]]
    for j in range(1, len(tables)):
        out = out * tables[j][:, indices[:, j]]
    return out


def _canonical_points(basis: BasisSet, points, check: bool):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != basis.dimension:
        raise ValueError(f"points must have {basis.dimension} columns, got {pts.shape[1]}")
    if check:
        u = basis.domain.check(pts)
    else:
        u = basis.domain.to_canonical(pts)
    return u, single


def eval_basis_canonical(basis: BasisSet, u) -> np.ndarray:
    """All basis functions at canonical points ``u`` of shape ``(n, d)``."""
    tables = [legendre_table(u[:, j], basis.max_order) for j in range(basis.dimension)]
    return _product_over_dims(tables, basis.indices)


def eval_basis_gradient_canonical(basis: BasisSet, u) -> np.ndarray:
    """Gradients with respect to the physical coordinates, shape ``(n, m, d)``."""
    d = basis.dimension
    idx = basis.indices
    vals = [legendre_table(u[:, j], basis.max_order)[:, idx[:, j]] for j in range(d)]
    ders = [legendre_derivative_table(u[:, j], basis.max_order)[:, idx[:, j]] for j in range(d)]
    # prefix/suffix products avoid dividing by values that vanish at nodes
    prefix = [np.ones_like(vals[0])]
    for j in range(d - 1):
        prefix.append(prefix[-1] * vals[j])
    suffix = [np.ones_like(vals[0])]
    for j in range(d - 1, 0, -1):
        suffix.append(suffix[-1] * vals[j])
    suffix = suffix[::-1]
    scale = 1.0 / basis.domain.half_width
    grad = np.empty(vals[0].shape + (d,))
    for k in range(d):
        grad[..., k] = prefix[k] * ders[k] * suffix[k] * scale[k]
    return grad


def eval_basis(basis: BasisSet, point, check_domain: bool = True) -> np.ndarray:
    """Evaluate every basis function at ``point`` (``(d,)`` or ``(n, d)``)."""
    u, single = _canonical_points(basis, point, check_domain)
    out = eval_basis_canonical(basis, u)
    return out[0] if single else out


def eval_basis_gradient(basis: BasisSet, point, check_domain: bool = True) -> np.ndarray:
    """Gradient matrix ``(m, d)`` (or ``(n, m, d)``) including the domain-map chain rule."""
    u, single = _canonical_points(basis, point, check_domain)
    out = eval_basis_gradient_canonical(basis, u)
    return out[0] if single else out


def quadrature_points_for(max_order: int, dynamics_degree: int = 7) -> int:
    """Gauss-Legendre points per dimension integrating every ``K_ij`` exactly."""
    return math.ceil((2 * max_order + dynamics_degree + 1) / 2)


def gauss_legendre_1d(points: int):
    """Nodes on ``[-1, 1]`` and weights normalized to the weight 1/2."""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return nodes, weights * LEGENDRE_WEIGHT


def _grid_size_check(dimension, points_per_dim, max_nodes):
    if points_per_dim < 1:
        raise ValueError("points_per_dim must be >= 1")
    total = points_per_dim ** dimension
    if total > max_nodes:
        raise ResourceLimitError(
            f"quadrature grid of {points_per_dim}^{dimension} = {total} nodes exceeds cap {max_nodes}")
    return total


def quadrature_grid(basis: BasisSet, points_per_dim: int,
                    max_nodes: int = 5_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes (physical units) and normalized weights.

    Weights sum to one: they absorb the affine Jacobian and the constant
    weight, so ``weights @ (f * g)`` is the basis inner product.
    """
    _grid_size_check(basis.dimension, points_per_dim, max_nodes)
    nodes, weights = gauss_legendre_1d(points_per_dim)
    mesh = np.meshgrid(*([nodes] * basis.dimension), indexing="ij")
    u = np.stack([g.ravel() for g in mesh], axis=1)
    wmesh = np.meshgrid(*([weights] * basis.dimension), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
    return basis.domain.from_canonical(u), w


def iter_quadrature_canonical(dimension: int, points_per_dim: int, chunk_size: int = 65_536,
                              max_nodes: int = MAX_GRID_NODES):
    """Yield ``(u, w)`` chunks of the canonical tensor grid in a fixed order."""
    total = _grid_size_check(dimension, points_per_dim, max_nodes)
    nodes, weights = gauss_legendre_1d(points_per_dim)
    shape = (points_per_dim,) * dimension
    for start in range(0, total, chunk_size):
        flat = np.arange(start, min(start + chunk_size, total))
        idx = np.stack(np.unravel_index(flat, shape), axis=1)
        yield nodes[idx], np.prod(weights[idx], axis=1)


def inner_product(f_values, g_values, weights) -> float:
    f_values = np.asarray(f_values, dtype=float)
    g_values = np.asarray(g_values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (f_values.shape == g_values.shape == weights.shape):
        raise ValueError(
            f"length mismatch: {f_values.shape}, {g_values.shape}, {weights.shape}")
    return float(np.sum(weights * f_values * g_values))


def gram_matrix(basis: BasisSet, points_per_dim: int | None = None) -> np.ndarray:
    if points_per_dim is None:
        points_per_dim = basis.max_order + 1
    total = np.zeros((basis.size, basis.size))
    for u, w in iter_quadrature_canonical(basis.dimension, points_per_dim):
        values = eval_basis_canonical(basis, u)
        total += (values * w[:, None]).T @ values
    return total


class LegendreFeatures(TransformerMixin, BaseEstimator):
    """Map samples to orthonormal Legendre basis values.

    Parameters
    ----------
    max_order : int
        Total-order truncation of the basis.
    lower, upper : array-like or None
        Domain box.  When omitted, ``fit`` uses the sample envelope
        inflated by ``inflation``.
    inflation : float
        Relative growth of the fitted envelope.
    """

    def __init__(self, max_order=2, lower=None, upper=None, inflation=0.5):
        self.max_order = max_order
        self.lower = lower
        self.upper = upper
        self.inflation = inflation

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if self.lower is not None and self.upper is not None:
            domain = DomainBox(self.lower, self.upper)
        else:
            domain = DomainBox.from_envelope(X, inflation=self.inflation, min_half_width=1e-12)
        self.basis_ = build_basis(X.shape[1], self.max_order, domain)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return eval_basis(self.basis_, X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        names = input_features if input_features is not None else [
            f"x{j}" for j in range(self.n_features_in_)]
        out = []
        for row in self.basis_.indices:
            parts = [f"P{n}({names[j]})" for j, n in enumerate(row) if n]
            out.append("*".join(parts) if parts else "1")
        return np.array(out, dtype=object)
