"""Lambert's problem by Levenberg-Marquardt shooting through a Koopman model.

The unknown is the departure velocity ``v0``.  A candidate is mapped to the
zonal elements, advanced spectrally by the geometric transfer angle
``dtheta + 2 pi N`` and mapped back; the residual stacks the arrival
position error with the weighted time-of-flight error.  Time is recovered
by Gauss-Legendre quadrature of ``dt/dtheta`` along the spectral
trajectory.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import DomainBox, basis_size, build_basis, eval_basis, eval_basis_gradient
from .elements import (
    N_ELEMENTS,
    GravityModel,
    cartesian_to_elements_array,
    element_dynamics_array,
    element_dynamics_terms,
    elements_to_cartesian_array,
    time_rate,
)
from .exceptions import (
    DegenerateGeometryError,
    DomainError,
    InversionError,
    ResourceLimitError,
    SeedError,
    SingularGeometryError,
    SpectralConsistencyError,
)
from .koopman import DynamicsField, KoopmanModel, build_model
from .oracles import IntegratorConfig, propagate_elements_numeric, transfer_angle

# models above this many basis functions need an explicit opt-in
LARGE_MODEL_SIZE = 2000
QUADRATURE_NODES = 12
PANEL_WIDTH = math.pi / 4
_INVALID = (DomainError, SingularGeometryError, InversionError, SpectralConsistencyError,
            FloatingPointError)


@dataclass(frozen=True)
class LambertProblem:
    r0: np.ndarray
    rf: np.ndarray
    tof: float
    revolutions: int = 0
    gravity: GravityModel = field(default_factory=GravityModel)
    prograde: bool = True

    def __post_init__(self):
        r0 = np.asarray(self.r0, dtype=float).reshape(3)
        rf = np.asarray(self.rf, dtype=float).reshape(3)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "rf", rf)
        if not (np.linalg.norm(r0) > 0 and np.linalg.norm(rf) > 0):
            raise ValueError("r0 and rf must be nonzero")
        if not self.tof > 0:
            raise ValueError("tof must be positive")
        if int(self.revolutions) != self.revolutions or self.revolutions < 0:
            raise ValueError("revolutions must be a nonnegative integer")
        cross = np.linalg.norm(np.cross(r0, rf))
        if cross <= 1e-12 * np.linalg.norm(r0) * np.linalg.norm(rf) and self.revolutions == 0:
            raise DegenerateGeometryError("r0 and rf are parallel: transfer plane undefined")

    def with_tof(self, tof) -> "LambertProblem":
        return replace(self, tof=float(tof))

    def with_revolutions(self, revolutions) -> "LambertProblem":
        return replace(self, revolutions=int(revolutions))


@dataclass(frozen=True)
class SolverConfig:
    lm_initial_damping: float = 1e-3
    # with J2 the arrival angle drifts ~1e-8 rad off dtheta, leaving an
    # irreducible residual of a few 1e-4 km in the 4-by-3 system
    lm_tolerance_position: float = 1e-3
    lm_tolerance_time: float = 1e-3
    max_iterations: int = 100
    jacobian_mode: str = "spectral"
    time_weight: float = 1.0

    def __post_init__(self):
        for name in ("lm_initial_damping", "lm_tolerance_position", "lm_tolerance_time",
                     "time_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.jacobian_mode not in ("spectral", "finite-difference"):
            raise ValueError("jacobian_mode must be 'spectral' or 'finite-difference'")


@dataclass
class TransferSolution:
    v0: np.ndarray
    delta_theta: float
    position_residual: float
    tof_residual: float
    specific_energy: float
    semi_major_axis: float
    iterations: int
    converged: bool
    revolutions: int = 0
    tof: float = 0.0
    wall_time: float = 0.0
    trace: list = field(default_factory=list, repr=False)


# -- geometry ---------------------------------------------------------------

def delta_theta(r0, rf, revolutions=0, prograde=True) -> float:
    """In-plane transfer angle plus ``2 pi N``.

    The base angle is the arccos of the normalized dot product, taken the
    long way round when ``(r0 x rf)_z`` disagrees with the flight direction.
    """
    return transfer_angle(r0, rf, prograde) + 2.0 * math.pi * revolutions


def circular_velocity_guess(r0, rf, gravity: GravityModel | None = None, prograde=True):
    """Circular speed at ``r0`` along the transfer plane, toward ``rf``."""
    gravity = gravity or GravityModel()
    r0 = np.asarray(r0, dtype=float)
    rf = np.asarray(rf, dtype=float)
    n0 = np.linalg.norm(r0)
    if n0 == 0:
        raise ValueError("r0 must be nonzero")
    normal = np.cross(r0, rf)
    nn = np.linalg.norm(normal)
    if nn <= 1e-12 * n0 * max(np.linalg.norm(rf), 1e-300):
        # plane undefined: equatorial prograde sense
        normal = np.cross(np.cross([0.0, 0.0, 1.0], r0), r0)
        normal = -normal if normal[2] < 0 else normal
        nn = np.linalg.norm(normal)
        if nn == 0:
            normal, nn = np.cross(r0, [1.0, 0.0, 0.0]), 1.0
            nn = np.linalg.norm(normal)
    h = normal / nn
    if (h[2] < 0) == prograde and abs(h[2]) > 1e-12:
        h = -h
    direction = np.cross(h, r0 / n0)
    return math.sqrt(gravity.mu / n0) * direction / np.linalg.norm(direction)


def orbit_energy(r0, v0, gravity: GravityModel):
    """``(E, a)`` with ``a = 1 / (2/|r0| - |v0|^2/mu)`` and ``E = -mu/(2a)``."""
    inv_a = 2.0 / np.linalg.norm(r0) - float(np.dot(v0, v0)) / gravity.mu
    a = math.inf if inv_a == 0 else 1.0 / inv_a
    return -0.5 * gravity.mu * inv_a, a


# -- model construction -----------------------------------------------------

def element_field(gravity: GravityModel) -> DynamicsField:
    j2 = gravity.effective_j2
    terms = element_dynamics_terms(j2)
    degree = max(sum(e) for row in terms for _, e in row)
    name = "zonal-j2" if j2 else "zonal-two-body"
    return DynamicsField(N_ELEMENTS, lambda x: element_dynamics_array(x, j2), degree, terms, name)


def estimate_build_cost(max_order, dimension=N_ELEMENTS) -> dict:
    """Rough memory and time figures for a model of the given order."""
    m = basis_size(dimension, max_order)
    return {
        "basis_size": m,
        "matrix_mb": 8.0 * m * m / 1e6,
        # dense eig and expm scale as m^3; 165 functions take ~0.05 s
        "seconds_estimate": 0.05 * (m / 165.0) ** 3,
    }


def build_element_model(gravity: GravityModel, max_order: int, domain: DomainBox,
                        method="auto", allow_large=False, n_jobs=1) -> KoopmanModel:
    """Galerkin model of the element dynamics over ``domain``."""
    cost = estimate_build_cost(max_order)
    if cost["basis_size"] > LARGE_MODEL_SIZE and not allow_large:
        raise ResourceLimitError(
            f"order {max_order} over {N_ELEMENTS} elements gives m = {cost['basis_size']} "
            f"(~{cost['matrix_mb']:.0f} MB per matrix, ~{cost['seconds_estimate']:.0f} s); "
            "pass allow_large to build it")
    basis = build_basis(N_ELEMENTS, max_order, domain)
    metadata = {"gravity": gravity.to_dict(), "max_order": max_order, "field": "zonal-elements"}
    return build_model(element_field(gravity), basis, method=method, metadata=metadata,
                       n_jobs=n_jobs)


def two_body_domain(seed_elements) -> DomainBox:
    """Generous box around a seed state for the exact order-1 two-body model.

    The unperturbed flow is linear, so the box only fixes the affine
    scaling; it is wide enough to hold any elliptic transfer in the seed's
    plane.
    """
    seed = np.atleast_2d(np.asarray(seed_elements, dtype=float))
    center = seed.mean(axis=0)
    chi = np.abs(seed[:, 6]).max()
    half = np.array([2.0, 2.0, 1.0, 1.0, 1.0, math.pi, max(8.0 * chi, 1.0), 1.0])
    center[:2] = 0.0
    return DomainBox(center - half, center + half)


def trajectory_domain(states, inflation=0.5, min_half_width=2e-3) -> DomainBox:
    """Envelope of a sampled element trajectory, grown by ``inflation``."""
    return DomainBox.from_envelope(states, inflation, min_half_width)


def seed_elements(problem: LambertProblem, v0=None):
    v0 = circular_velocity_guess(problem.r0, problem.rf, problem.gravity, problem.prograde) \
        if v0 is None else np.asarray(v0, dtype=float)
    return cartesian_to_elements_array(np.concatenate([problem.r0, v0]), problem.gravity)


# -- time of flight ------------------------------------------------------------

def _tof_nodes(theta_span):
    panels = max(1, math.ceil(theta_span / PANEL_WIDTH))
    x, w = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    edges = np.linspace(0.0, theta_span, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _time_rate_gradient(states, gravity):
    h = time_rate(states, gravity)
    s = states[..., 0] + states[..., 4]
    grad = np.zeros_like(states)
    grad[..., 0] = -2.0 * h / s
    grad[..., 4] = -h / states[..., 4] - 2.0 * h / s
    return h, grad


def _time_of_flight(model, L0, theta_span, gravity, dL=None):
    if theta_span == 0:
        return 0.0, (None if dL is None else np.zeros(dL.shape[1]))
    nodes, weights = _tof_nodes(theta_span)
    ops = model.flow_operator(nodes)
    states = ops @ L0
    if np.any(states[:, 4] <= 0) or np.any(states[:, 0] + states[:, 4] <= 0):
        raise InversionError("propagated elements leave the physical region")
    h, grad = _time_rate_gradient(states, gravity)
    if not np.all(np.isfinite(h)):
        raise InversionError("non-finite time rate along the trajectory")
    tof = float(weights @ h)
    if dL is None:
        return tof, None
    return tof, np.einsum("n,nq,nqm->m", weights, grad, ops) @ dL


def time_of_flight(model: KoopmanModel, x0, theta_span: float, gravity: GravityModel) -> float:
    """Seconds elapsed while the model advances ``x0`` by ``theta_span``."""
    if theta_span < 0:
        raise ValueError("theta_span must be nonnegative")
    L0 = eval_basis(model.basis, np.asarray(x0, dtype=float))
    return _time_of_flight(model, L0, float(theta_span), gravity)[0]


# -- shooting -------------------------------------------------------------------

def _fold_angle(x, domain):
    # keep beta on the branch nearest the box center
    x = np.array(x, dtype=float)
    c = domain.center[5]
    x[..., 5] = c + np.mod(x[..., 5] - c + math.pi, 2.0 * math.pi) - math.pi
    return x


def _to_elements(problem, v0, domain):
    x = cartesian_to_elements_array(np.concatenate([problem.r0, v0]), problem.gravity)
    return _fold_angle(x, domain)


def _transform_jacobian(fun, x, step, wrap_input=None, wrap_output=None):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        d = fun(x + e) - fun(x - e)
        if wrap_output is not None:
            d[wrap_output] = np.mod(d[wrap_output] + math.pi, 2.0 * math.pi) - math.pi
        cols.append(d / (2.0 * step))
    return np.column_stack(cols)


class _Shooter:
    """Residual and Jacobian of one problem against one model."""

    def __init__(self, problem: LambertProblem, model: KoopmanModel, config: SolverConfig):
        self.problem = problem
        self.model = model
        self.config = config
        self.theta = delta_theta(problem.r0, problem.rf, problem.revolutions, problem.prograde)
        self.domain = model.basis.domain

    def _forward(self, v0, need_jacobian=False):
        x0 = _to_elements(self.problem, v0, self.domain)
        L0 = eval_basis(self.model.basis, x0)
        xf = self.model.flow_operator(self.theta) @ L0
        self.domain.check(_fold_angle(xf, self.domain))
        cart = elements_to_cartesian_array(xf, self.problem.gravity)
        dL = eval_basis_gradient(self.model.basis, x0) if need_jacobian else None
        tof, dtof = _time_of_flight(self.model, L0, self.theta, self.problem.gravity, dL)
        res = np.append(cart[:3] - self.problem.rf,
                        self.config.time_weight * (tof - self.problem.tof))
        return res, (x0, xf, dL, dtof)

    def residual(self, v0) -> np.ndarray:
        return self._forward(np.asarray(v0, dtype=float))[0]

    def jacobian(self, v0) -> np.ndarray:
        v0 = np.asarray(v0, dtype=float)
        if self.config.jacobian_mode == "finite-difference":
            return _transform_jacobian(self.residual, v0, 1e-6)
        _, (x0, xf, dL, dtof) = self._forward(v0, need_jacobian=True)
        stm = self.model.flow_operator(self.theta) @ dL
        dx0_dv0 = _transform_jacobian(lambda v: _to_elements(self.problem, v, self.domain),
                                      v0, 1e-6, wrap_output=5)
        drf_dxf = _transform_jacobian(
            lambda x: elements_to_cartesian_array(x, self.problem.gravity)[:3], xf, 1e-7)
        top = drf_dxf @ stm @ dx0_dv0
        bottom = self.config.time_weight * (dtof @ dx0_dv0)
        return np.vstack([top, bottom])


def shooting_residual(problem: LambertProblem, v0, model: KoopmanModel,
                      config: SolverConfig | None = None) -> np.ndarray:
    """``[r(theta_f) - rf, w (tof(theta_f) - tof)]`` for a candidate ``v0``."""
    return _Shooter(problem, model, config or SolverConfig()).residual(v0)


def _converged(res, config):
    return (np.linalg.norm(res[:3]) <= config.lm_tolerance_position
            and abs(res[3]) / config.time_weight <= config.lm_tolerance_time)


def _levenberg_marquardt(fun, jac, x, config):
    try:
        r = fun(x)
    except _INVALID as exc:
        raise SeedError(f"initial guess is not propagable ({exc}); try a different guess") from exc
    lam = config.lm_initial_damping
    trace = [float(np.linalg.norm(r))]
    it = 0
    while it < config.max_iterations and not _converged(r, config):
        it += 1
        J = jac(x)
        JtJ = J.T @ J
        g = J.T @ r
        scale = np.maximum(np.diag(JtJ), 1e-12 * max(np.diag(JtJ).max(), 1e-300))
        accepted = False
        while lam < 1e16:
            step = np.linalg.solve(JtJ + lam * np.diag(scale), -g)
            try:
                r_new = fun(x + step)
                ok = np.all(np.isfinite(r_new)) and np.dot(r_new, r_new) < np.dot(r, r)
            except _INVALID:
                ok = False
            if ok:
                x, r = x + step, r_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
        trace.append(float(np.linalg.norm(r)))
        if not accepted:
            break
    return x, r, it, _converged(r, config), trace


def solve(problem: LambertProblem, model: KoopmanModel, config: SolverConfig | None = None,
          initial_guess=None) -> TransferSolution:
    """Levenberg-Marquardt shooting for the departure velocity.

    Starts from the circular-velocity guess unless ``initial_guess`` is
    given.  Returns an unconverged solution when the iteration budget runs
    out.
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    shooter = _Shooter(problem, model, config)
    v0 = circular_velocity_guess(problem.r0, problem.rf, problem.gravity, problem.prograde) \
        if initial_guess is None else np.asarray(initial_guess, dtype=float)
    v, r, iterations, converged, trace = _levenberg_marquardt(
        shooter.residual, shooter.jacobian, v0, config)
    energy, sma = orbit_energy(problem.r0, v, problem.gravity)
    return TransferSolution(
        v0=v,
        delta_theta=shooter.theta,
        position_residual=float(np.linalg.norm(r[:3])),
        tof_residual=float(r[3] / config.time_weight),
        specific_energy=float(energy),
        semi_major_axis=float(sma),
        iterations=iterations,
        converged=bool(converged),
        revolutions=problem.revolutions,
        tof=problem.tof,
        wall_time=time.perf_counter() - start,
        trace=trace,
    )


# -- energy scan ----------------------------------------------------------------

@dataclass
class ScanPoint:
    tof: float
    solution: TransferSolution | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.solution is not None and self.solution.converged


def energy_scan(problem: LambertProblem, tof_grid, model: KoopmanModel,
                config: SolverConfig | None = None, warm_start=True, n_jobs=1,
                initial_guess=None) -> list[ScanPoint]:
    """Solve over a grid of flight times.

    With ``warm_start`` each converged ``v0`` seeds the next point, so the
    scan runs in grid order.  Cold scans may run on ``n_jobs`` threads.
    ``initial_guess`` seeds the first point (every point when cold); it is
    either one velocity or one per grid point.
    Failures are recorded on their point and the scan continues.
    """
    grid = [float(t) for t in tof_grid]
    if not grid:
        raise ValueError("tof grid must be nonempty")
    config = config or SolverConfig()

    def run(tof, guess):
        try:
            return ScanPoint(tof, solve(problem.with_tof(tof), model, config, guess))
        except Exception as exc:  # recorded, never fatal
            return ScanPoint(tof, None, f"{type(exc).__name__}: {exc}")

    guesses = [None] * len(grid)
    if initial_guess is not None:
        g = np.asarray(initial_guess, dtype=float)
        guesses = list(g) if g.ndim == 2 else [g] * len(grid)
    if warm_start:
        points, guess = [], guesses[0]
        for tof in grid:
            point = run(tof, guess)
            if point.ok:
                guess = point.solution.v0
            points.append(point)
        return points
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(run, grid, guesses))
    return [run(t, g) for t, g in zip(grid, guesses)]


def scan_argmin(points) -> ScanPoint | None:
    """Converged point of lowest specific energy."""
    good = [p for p in points if p.ok]
    return min(good, key=lambda p: p.solution.specific_energy) if good else None


# -- model selection -----------------------------------------------------------

def reference_trajectory(problem: LambertProblem, v0, n_samples=401, config=None):
    """Numerically integrated element states along the transfer from ``v0``."""
    x0 = cartesian_to_elements_array(np.concatenate([problem.r0, v0]), problem.gravity)
    theta = delta_theta(problem.r0, problem.rf, problem.revolutions, problem.prograde)
    _, states, _ = propagate_elements_numeric(
        x0, theta, problem.gravity, config or IntegratorConfig(rel_tolerance=1e-12,
                                                               abs_tolerance=1e-12), n_samples)
    return states


def plan_domain(problems, gravity: GravityModel | None = None, inflation=0.5,
                min_half_width=2e-3, config=None):
    """Domain box covering every problem, plus two-body warm starts.

    Without J2 an order-1 model is exact and a generous box around the
    circular-guess seeds suffices; the warm starts are ``None``.  With J2
    the two-body problems are solved first and the box is the envelope of
    the resulting element trajectories integrated under the J2 dynamics.
    """
    problems = list(problems)
    if not problems:
        raise ValueError("need at least one problem")
    gravity = gravity or problems[0].gravity
    two_body = gravity.with_j2(False)
    tb_problems = [replace(p, gravity=two_body) for p in problems]
    domain = two_body_domain(np.stack([seed_elements(p) for p in tb_problems]))
    if not gravity.effective_j2:
        return domain, None
    tb_model = build_element_model(two_body, 1, domain)
    warm, trajectories = [], []
    for p in tb_problems:
        sol = solve(p, tb_model, config)
        if not sol.converged:
            raise SeedError(f"two-body stage did not converge for tof={p.tof}", sol.trace)
        warm.append(sol.v0)
        trajectories.append(reference_trajectory(replace(p, gravity=gravity), sol.v0))
    return trajectory_domain(np.vstack(trajectories), inflation, min_half_width), warm


def default_order(gravity: GravityModel) -> int:
    return 3 if gravity.effective_j2 else 1


def prepare_model(problems, gravity: GravityModel | None = None, max_order=None,
                  inflation=0.5, min_half_width=2e-3, config=None, allow_large=False,
                  method="auto", n_jobs=1):
    """Model covering every problem in ``problems`` and its warm starts.

    See ``plan_domain``; the order defaults to 1 without J2 and 3 with it.
    """
    problems = list(problems)
    gravity = gravity or (problems[0].gravity if problems else None)
    domain, warm = plan_domain(problems, gravity, inflation, min_half_width, config)
    order = default_order(gravity) if max_order is None else max_order
    return build_element_model(gravity, order, domain, method, allow_large, n_jobs), warm


# -- estimator ----------------------------------------------------------------

def _problem_key(problem):
    return (tuple(problem.r0), tuple(problem.rf), problem.tof, problem.revolutions)


class KoopmanLambertSolver(BaseEstimator):
    """Estimator front end.

    Rows of ``X`` are ``[r0 (3), rf (3), tof, N]``.  ``fit`` builds one
    Koopman model covering every row; ``predict`` returns one ``v0`` row per
    problem (NaN where the solve did not converge).
    """

    def __init__(self, j2=True, max_order=None, mu=None, radius=None, j2_value=None,
                 prograde=True, inflation=0.5, min_half_width=2e-3, time_weight=1.0,
                 max_iterations=100, jacobian_mode="spectral", allow_large=False):
        self.j2 = j2
        self.max_order = max_order
        self.mu = mu
        self.radius = radius
        self.j2_value = j2_value
        self.prograde = prograde
        self.inflation = inflation
        self.min_half_width = min_half_width
        self.time_weight = time_weight
        self.max_iterations = max_iterations
        self.jacobian_mode = jacobian_mode
        self.allow_large = allow_large

    def _gravity(self):
        base = GravityModel()
        return GravityModel(self.mu or base.mu, self.radius or base.radius,
                            base.j2 if self.j2_value is None else self.j2_value, bool(self.j2))

    def _config(self):
        return SolverConfig(time_weight=self.time_weight, max_iterations=self.max_iterations,
                            jacobian_mode=self.jacobian_mode)

    def _problems(self, X):
        X = check_array(X)
        if X.shape[1] != 8:
            raise ValueError("rows must be [r0 (3), rf (3), tof, N]")
        g = self.gravity_
        return [LambertProblem(x[:3], x[3:6], x[6], int(x[7]), g, self.prograde) for x in X]

    def fit(self, X, y=None):
        self.gravity_ = self._gravity()
        problems = self._problems(X)
        self.model_, self.seeds_ = prepare_model(
            problems, self.gravity_, self.max_order, self.inflation, self.min_half_width,
            self._config(), self.allow_large)
        self.fit_keys_ = [_problem_key(p) for p in problems]
        self.n_features_in_ = 8
        return self

    def solve(self, X) -> list[TransferSolution]:
        check_is_fitted(self, "model_")
        return [solve(p, self.model_, self._config(), self._guess(p)) for p in self._problems(X)]

    def _guess(self, problem):
        # two-body solutions from fit seed matching J2 problems
        for key, v0 in zip(self.fit_keys_, self.seeds_ or []):
            if key == _problem_key(problem):
                return v0
        return None

    def predict(self, X):
        return np.stack([s.v0 if s.converged else np.full(3, np.nan) for s in self.solve(X)])
