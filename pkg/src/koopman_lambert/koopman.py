"""Galerkin approximation of the Koopman generator on a Legendre basis.

For a polynomial vector field ``dx/dtheta = f(x)`` the generator acts on a
basis function as ``(grad L_i) . f``; projecting that back on the basis
gives the matrix ``K`` with ``d/dtheta L(x) = K L(x)``.  Its left
eigenvectors ``P K = diag(lam) P`` define eigenfunctions ``P L(x)``, and an
observable with basis coefficients ``A`` evolves as
``A P^-1 exp(lam theta) P L(x0)``.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import (
    BasisSet,
    DomainBox,
    build_basis,
    eval_basis,
    eval_basis_canonical,
    eval_basis_gradient,
    gauss_legendre_1d,
    iter_quadrature_canonical,
    legendre_derivative_table,
    legendre_table,
    quadrature_points_for,
)
from .exceptions import (
    AssemblyError,
    DecompositionError,
    SpectralConsistencyError,
)

MODEL_FORMAT_VERSION = 1
CONDITION_THRESHOLD = 1e12
IMAG_TOLERANCE = 1e-8


@dataclass(frozen=True)
class DynamicsField:
    """Autonomous vector field ``dx/dtheta = evaluate(x)``.

    ``evaluate`` maps an ``(n, d)`` array to ``(n, d)`` derivatives.
    ``terms`` optionally gives the same field as a sparse monomial table
    (one list of ``(coefficient, exponents)`` per output), which enables
    exact separable assembly.
    """

    dimension: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    polynomial_degree: int
    terms: Sequence | None = None
    name: str = ""


def linear_field(matrix, offset=None, name="linear") -> DynamicsField:
    """Field ``f(x) = M x + b`` with its monomial table."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = M.shape[0]
    b = np.zeros(d) if offset is None else np.asarray(offset, dtype=float)
    terms = []
    for i in range(d):
        row = [(float(b[i]), (0,) * d)] if b[i] else []
        for j in range(d):
            if M[i, j]:
                exps = [0] * d
                exps[j] = 1
                row.append((float(M[i, j]), tuple(exps)))
        terms.append(row)
    return DynamicsField(d, lambda x: np.asarray(x) @ M.T + b, 1, terms, name)


# -- assembly -------------------------------------------------------------

def _directional_derivative(basis: BasisSet, u, F):
    """``(grad L_i)(x) . F(x)`` for every basis function, shape ``(n, m)``.

    Forward-mode product rule across dimensions keeps only two ``(n, m)``
    work arrays alive.
    """
    c = basis.max_order
    idx = basis.indices
    scale = 1.0 / basis.domain.half_width
    prod = None
    deriv = None
    for j in range(basis.dimension):
        v = legendre_table(u[:, j], c)[:, idx[:, j]]
        dv = legendre_derivative_table(u[:, j], c)[:, idx[:, j]] * (F[:, j] * scale[j])[:, None]
        if prod is None:
            prod, deriv = v, dv
        else:
            deriv = deriv * v + prod * dv
            prod = prod * v
    return deriv, prod


def _assemble_chunks(dynamics, basis, chunks):
    K = np.zeros((basis.size, basis.size))
    for u, w in chunks:
        x = basis.domain.from_canonical(u)
        F = np.asarray(dynamics.evaluate(x), dtype=float)
        bad = ~np.all(np.isfinite(F), axis=1)
        if np.any(bad):
            node = x[np.nonzero(bad)[0][0]]
            raise AssemblyError(f"non-finite dynamics at quadrature node {node.tolist()}")
        G, L = _directional_derivative(basis, u, F)
        K += G.T @ (L * w[:, None])
    return K


def assemble_quadrature(dynamics: DynamicsField, basis: BasisSet, points_per_dim=None,
                        chunk_size=4096, n_jobs=1) -> np.ndarray:
    """``K_ij = <(grad L_i) . f, L_j>`` by tensor Gauss-Legendre quadrature.

    Chunks are reduced in a fixed order; with ``n_jobs > 1`` each worker sums
    a contiguous block of chunks and the blocks are added in order.
    """
    if points_per_dim is None:
        points_per_dim = quadrature_points_for(basis.max_order, dynamics.polynomial_degree)
    chunks = list(iter_quadrature_canonical(basis.dimension, points_per_dim, chunk_size)) \
        if n_jobs > 1 else iter_quadrature_canonical(basis.dimension, points_per_dim, chunk_size)
    if n_jobs <= 1:
        return _assemble_chunks(dynamics, basis, chunks)
    blocks = np.array_split(np.arange(len(chunks)), n_jobs)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(
            lambda blk: _assemble_chunks(dynamics, basis, [chunks[i] for i in blk]), blocks))
    K = np.zeros((basis.size, basis.size))
    for part in parts:
        K += part
    return K


def _power_polynomial(center, half_width, power):
    # coefficients in u of (center + half_width * u) ** power
    return np.polynomial.polynomial.polypow([center, half_width], power)


def assemble_separable(dynamics: DynamicsField, basis: BasisSet) -> np.ndarray:
    """Exact assembly from the monomial table using 1-D integral tables.

    Every integrand factorizes over dimensions, so ``K_ij`` is a sum over
    monomial terms of products of small one-dimensional integrals.
    """
    if dynamics.terms is None:
        raise ValueError("dynamics has no monomial table")
    d, c, idx = basis.dimension, basis.max_order, basis.indices
    center, half = basis.domain.center, basis.domain.half_width
    max_pow = max((max(exps) for row in dynamics.terms for _, exps in row), default=0)
    nodes, weights = gauss_legendre_1d(c + (max_pow + 2) // 2 + 1)
    V = legendre_table(nodes, c)
    D = legendre_derivative_table(nodes, c)
    plain, deriv = {}, {}

    def tables(j, p):
        key = (j, p)
        if key not in plain:
            q = np.polynomial.polynomial.polyval(nodes, _power_polynomial(center[j], half[j], p))
            plain[key] = np.einsum("n,na,nb->ab", weights * q, V, V)
            deriv[key] = np.einsum("n,na,nb->ab", weights * q, D, V) / half[j]
        return plain[key], deriv[key]

    K = np.zeros((basis.size, basis.size))
    for k, row in enumerate(dynamics.terms):
        for coef, exps in row:
            M = np.full((basis.size, basis.size), float(coef))
            for j in range(d):
                T, Td = tables(j, exps[j])
                M *= (Td if j == k else T)[np.ix_(idx[:, j], idx[:, j])]
            K += M
    return K


def build_koopman_matrix(dynamics: DynamicsField, basis: BasisSet, method="auto",
                         points_per_dim=None, n_jobs=1) -> np.ndarray:
    if dynamics.dimension != basis.dimension:
        raise ValueError("dynamics and basis dimensions differ")
    if method == "auto":
        method = "separable" if dynamics.terms is not None else "quadrature"
    if method == "separable":
        K = assemble_separable(dynamics, basis)
    elif method == "quadrature":
        K = assemble_quadrature(dynamics, basis, points_per_dim, n_jobs=n_jobs)
    else:
        raise ValueError(f"unknown assembly method {method!r}")
    if not np.all(np.isfinite(K)):
        raise AssemblyError("Koopman matrix has non-finite entries")
    return K


# -- spectral decomposition ------------------------------------------------

@dataclass(frozen=True)
class SpectralDiagnostics:
    condition_P: float
    residual: float
    diagonalizable: bool


def eigendecompose(K, condition_threshold=CONDITION_THRESHOLD, residual_threshold=1e-8):
    """Left eigen-decomposition ``P K = diag(lam) P``.

    Returns ``(eigenvalues, P, P_inv, diagnostics)``.  ``P_inv`` holds the
    right eigenvectors as columns.
    """
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise DecompositionError("Koopman matrix has non-finite entries")
    try:
        lam, V = scipy.linalg.eig(K)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DecompositionError(f"eigensolver failed: {exc}") from exc
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > 1e300:
        P = np.full_like(V, np.nan)
        return lam, P, V, SpectralDiagnostics(math.inf, math.inf, False)
    P = np.linalg.inv(V)
    scale = max(np.linalg.norm(K), 1.0)
    residual = float(np.linalg.norm(P @ K - lam[:, None] * P) / scale)
    ok = cond <= condition_threshold and residual <= residual_threshold
    return lam, P, V, SpectralDiagnostics(cond, residual, ok)


# -- observables ----------------------------------------------------------

def identity_projection(basis: BasisSet) -> np.ndarray:
    """Exact coefficients of ``g(x) = x``: ``x_j = c_j + h_j * Pn_1(u_j) / sqrt(3)``."""
    if basis.max_order < 1:
        raise ValueError("identity observables need max_order >= 1")
    A = np.zeros((basis.dimension, basis.size))
    A[:, 0] = basis.domain.center
    for j in range(basis.dimension):
        A[j, basis.linear_index(j)] = basis.domain.half_width[j] / math.sqrt(3.0)
    return A


def project_observables(observables, basis: BasisSet, points_per_dim=None,
                        chunk_size=16384) -> np.ndarray:
    """``A_il = <g_i, L_l>`` by quadrature.

    ``observables`` is a callable mapping ``(n, d)`` points to ``(n, q)``
    values, or a sequence of callables each returning ``(n,)``.
    """
    if callable(observables):
        func = observables
    else:
        funcs = list(observables)
        func = lambda x: np.stack([np.asarray(g(x), dtype=float) for g in funcs], axis=1)
    if points_per_dim is None:
        points_per_dim = basis.max_order + 2
    A = None
    for u, w in iter_quadrature_canonical(basis.dimension, points_per_dim, chunk_size):
        x = basis.domain.from_canonical(u)
        G = np.asarray(func(x), dtype=float).reshape(len(x), -1)
        L = eval_basis_canonical(basis, u)
        part = (G * w[:, None]).T @ L
        A = part if A is None else A + part
    return A


# -- model ----------------------------------------------------------------

class _BuildCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def increment(self):
        with self._lock:
            self.count += 1


BUILD_COUNTER = _BuildCounter()


@dataclass(frozen=True, eq=False)
class KoopmanModel:
    basis: BasisSet
    K: np.ndarray
    eigenvalues: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    A: np.ndarray
    diagonalizable: bool
    condition_P: float
    residual: float
    metadata: dict = field(default_factory=dict)
    _operator_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.basis.size

    @cached_property
    def modes(self) -> np.ndarray:
        """Koopman modes ``B = A P^-1``."""
        return self.A @ self.P_inv

    def eigenvalue_table(self) -> np.ndarray:
        """``(m, 2)`` array of eigenvalue real and imaginary parts."""
        return np.column_stack([self.eigenvalues.real, self.eigenvalues.imag])

    def _real(self, values):
        imag = np.abs(values.imag)
        ref = np.maximum(np.abs(values.real).max(), 1.0)
        if np.any(imag > IMAG_TOLERANCE * ref):
            worst = float(imag.max() / ref)
            raise SpectralConsistencyError(
                f"imaginary residue {worst:.3e} exceeds tolerance {IMAG_TOLERANCE:g}")
        return values.real

    def flow_operator(self, theta) -> np.ndarray:
        """Real ``A exp(K theta)`` for each theta; ``(q, m)`` or ``(n, q, m)``.

        Results are cached per theta grid, so repeated propagation over the
        same angles costs one matrix product per call.
        """
        theta = np.asarray(theta, dtype=float)
        thetas = np.atleast_1d(theta)
        key = thetas.tobytes()
        cache = self._operator_cache
        op = cache.get(key)
        if op is None:
            if self.diagonalizable:
                phases = np.exp(np.outer(thetas, self.eigenvalues))
                op = self._real(np.einsum("qm,nm,mk->nqk", self.modes, phases, self.P))
            else:
                op = np.stack([self.A @ scipy.linalg.expm(self.K * t) for t in thetas])
            if len(cache) >= 64:
                cache.pop(next(iter(cache)))
            cache[key] = op
        return op[0] if theta.ndim == 0 else op

    def _flow(self, theta, right):
        op = self.flow_operator(theta)
        return op @ right

    def propagate(self, x0, theta) -> np.ndarray:
        """Observables at ``theta`` radians from ``x0``; ``(q,)`` or ``(n, q)``."""
        L0 = eval_basis(self.basis, x0)
        return self._flow(theta, L0[:, None])[..., 0]

    def state_transition_matrix(self, x0, theta) -> np.ndarray:
        """Jacobian of the observables at ``theta`` w.r.t. ``x0``; ``(q, d)``."""
        dL = eval_basis_gradient(self.basis, x0)
        return self._flow(theta, dL)

    def trajectory(self, x0, theta_end, n_samples=201):
        """Observables on ``n_samples`` evenly spaced angles from 0 to ``theta_end``."""
        thetas = np.linspace(0.0, float(theta_end), max(int(n_samples), 2))
        if self.diagonalizable:
            return thetas, self.propagate(x0, thetas)
        L0 = eval_basis(self.basis, x0)
        Ls = scipy.sparse.linalg.expm_multiply(self.K, L0, start=0.0, stop=float(theta_end),
                                               num=thetas.size, endpoint=True)
        return thetas, Ls @ self.A.T

    def reconstruct(self, x) -> np.ndarray:
        return eval_basis(self.basis, x) @ self.A.T

    # serialization
    def to_dict(self) -> dict:
        def cplx(a):
            a = np.asarray(a)
            return np.stack([a.real, a.imag], axis=-1).tolist()

        return {
            "format": "koopman-model",
            "version": MODEL_FORMAT_VERSION,
            "dimension": self.basis.dimension,
            "max_order": self.basis.max_order,
            "domain": self.basis.domain.to_dict(),
            "K": self.K.tolist(),
            "eigenvalues": cplx(self.eigenvalues),
            "P": cplx(self.P),
            "P_inv": cplx(self.P_inv),
            "A": self.A.tolist(),
            "diagonalizable": self.diagonalizable,
            "condition_P": self.condition_P,
            "residual": self.residual,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data) -> "KoopmanModel":
        if data.get("format") != "koopman-model":
            raise ValueError("not a serialized Koopman model")
        if data.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {data.get('version')}")

        def cplx(a):
            a = np.asarray(a, dtype=float)
            return a[..., 0] + 1j * a[..., 1]

        basis = build_basis(data["dimension"], data["max_order"],
                            DomainBox.from_dict(data["domain"]))
        return cls(
            basis=basis,
            K=np.asarray(data["K"], dtype=float),
            eigenvalues=cplx(data["eigenvalues"]),
            P=cplx(data["P"]),
            P_inv=cplx(data["P_inv"]),
            A=np.asarray(data["A"], dtype=float),
            diagonalizable=bool(data["diagonalizable"]),
            condition_P=float(data["condition_P"]),
            residual=float(data["residual"]),
            metadata=dict(data.get("metadata", {})),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict()))
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_model(dynamics: DynamicsField, basis: BasisSet, observables=None, method="auto",
                condition_threshold=CONDITION_THRESHOLD, metadata=None, n_jobs=1) -> KoopmanModel:
    """Assemble, decompose and project in one step.

    ``observables=None`` selects the identity observables.
    """
    K = build_koopman_matrix(dynamics, basis, method=method, n_jobs=n_jobs)
    lam, P, P_inv, diag = eigendecompose(K, condition_threshold)
    A = identity_projection(basis) if observables is None else project_observables(observables, basis)
    BUILD_COUNTER.increment()
    return KoopmanModel(basis, K, lam, P, P_inv, A, diag.diagonalizable,
                        diag.condition_P, diag.residual, dict(metadata or {}))


def propagate(model: KoopmanModel, x0, theta):
    return model.propagate(x0, theta)


def state_transition_matrix(model: KoopmanModel, x0, theta):
    return model.state_transition_matrix(x0, theta)


class KoopmanGalerkin(BaseEstimator):
    """Estimator wrapper: ``fit`` builds the model, ``predict`` propagates.

    Parameters
    ----------
    dynamics : DynamicsField
    max_order : int
    lower, upper : array-like or None
        Explicit domain box.  Otherwise ``fit`` takes the envelope of the
        training states, grown by ``inflation`` and floored at
        ``min_half_width``.
    inflation : float
    min_half_width : float or array-like or None
    assembly : {"auto", "separable", "quadrature"}
    """

    def __init__(self, dynamics=None, max_order=1, lower=None, upper=None, inflation=0.5,
                 min_half_width=1e-6, assembly="auto"):
        self.dynamics = dynamics
        self.max_order = max_order
        self.lower = lower
        self.upper = upper
        self.inflation = inflation
        self.min_half_width = min_half_width
        self.assembly = assembly

    def fit(self, X=None, y=None):
        if self.dynamics is None:
            raise ValueError("dynamics must be set before fit")
        if self.lower is not None and self.upper is not None:
            domain = DomainBox(self.lower, self.upper)
        else:
            X = check_array(X)
            domain = DomainBox.from_envelope(X, self.inflation, self.min_half_width)
        basis = build_basis(self.dynamics.dimension, self.max_order, domain)
        self.model_ = build_model(self.dynamics, basis, method=self.assembly)
        self.n_features_in_ = self.dynamics.dimension
        return self

    def transform(self, X):
        """Basis-function values of each state."""
        check_is_fitted(self, "model_")
        return eval_basis(self.model_.basis, check_array(X))

    def predict(self, X, theta=0.0):
        """States advanced by ``theta``; shape ``(n, d)``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        return np.stack([self.model_.propagate(x, theta) for x in X])
