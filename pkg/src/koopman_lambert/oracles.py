"""Ground-truth tools: a universal-variables Lambert solver and numerical
propagators in Cartesian and element coordinates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .elements import (
    CartesianState,
    GravityModel,
    element_dynamics_array,
    time_rate,
)
from .exceptions import (
    DegenerateGeometryError,
    IntegrationError,
    NoSolutionError,
    SolverError,
)

_METHODS = {"rk": "DOP853", "adams": "LSODA"}


@dataclass(frozen=True)
class IntegratorConfig:
    """``method`` is ``"rk"`` (adaptive DOP853) or ``"adams"`` (variable-order
    Adams predictor-corrector via LSODA)."""

    method: str = "rk"
    rel_tolerance: float = 2.3e-14
    abs_tolerance: float = 1e-14
    max_step: float = math.inf
    n_samples: int = 201

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {sorted(_METHODS)}")
        for name in ("rel_tolerance", "abs_tolerance"):
            value = getattr(self, name)
            if not 0 < value <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3]")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass
class PropagationResult:
    final_state: CartesianState
    times: np.ndarray
    states: np.ndarray
    energy_drift: float
    swept_angle: float = 0.0
    step_times: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def samples(self) -> list[tuple[float, CartesianState]]:
        return [(float(t), CartesianState.from_array(x)) for t, x in zip(self.times, self.states)]


# -- universal variables ---------------------------------------------------

def stumpff_c(z: float) -> float:
    if z > 1e-6:
        # half-angle form keeps precision near z = (2 pi k)^2
        return 2.0 * math.sin(0.5 * math.sqrt(z)) ** 2 / z
    if z < -1e-6:
        return (math.cosh(math.sqrt(-z)) - 1.0) / (-z)
    return 0.5 - z / 24.0 + z * z / 720.0


def stumpff_s(z: float) -> float:
    if z > 1e-6:
        sz = math.sqrt(z)
        return (sz - math.sin(sz)) / sz**3
    if z < -1e-6:
        sz = math.sqrt(-z)
        return (math.sinh(sz) - sz) / sz**3
    return 1.0 / 6.0 - z / 120.0 + z * z / 5040.0


def transfer_angle(r0, rf, prograde=True) -> float:
    """Angle from ``r0`` to ``rf`` in ``[0, 2 pi)`` for the chosen direction."""
    r0 = np.asarray(r0, dtype=float)
    rf = np.asarray(rf, dtype=float)
    n0, nf = np.linalg.norm(r0), np.linalg.norm(rf)
    if n0 == 0 or nf == 0:
        raise ValueError("position vectors must be nonzero")
    cos_dth = float(np.clip(np.dot(r0, rf) / (n0 * nf), -1.0, 1.0))
    cross = np.cross(r0, rf)
    if np.linalg.norm(cross) <= 1e-12 * n0 * nf and cos_dth < 0:
        raise DegenerateGeometryError("anti-parallel position vectors: transfer plane undefined")
    dth = math.acos(cos_dth)
    if (cross[2] < 0) == prograde and np.linalg.norm(cross) > 1e-12 * n0 * nf:
        dth = 2.0 * math.pi - dth
    return dth


class _TransferTime:
    """Universal-variable time of flight ``t(z)`` for a fixed geometry."""

    def __init__(self, r0, rf, prograde, mu):
        self.n0, self.nf = float(np.linalg.norm(r0)), float(np.linalg.norm(rf))
        self.dth = transfer_angle(r0, rf, prograde)
        if abs(math.sin(self.dth)) < 1e-12:
            raise DegenerateGeometryError("transfer angle of 0 or 180 degrees: plane undefined")
        self.A = math.sin(self.dth) * math.sqrt(self.n0 * self.nf / (1.0 - math.cos(self.dth)))
        self.mu = mu

    def y(self, z):
        return self.n0 + self.nf + self.A * (z * stumpff_s(z) - 1.0) / math.sqrt(stumpff_c(z))

    def t(self, z):
        y = self.y(z)
        if y < 0:
            return -math.inf
        c, s = stumpff_c(z), stumpff_s(z)
        return ((y / c) ** 1.5 * s + self.A * math.sqrt(y)) / math.sqrt(self.mu)

    def interval(self, revolutions):
        a = (2.0 * math.pi * revolutions) ** 2
        b = (2.0 * math.pi * (revolutions + 1)) ** 2
        eps = 1e-10 * b
        return a + eps, b - eps

    def minimum(self, revolutions):
        lo, hi = self.interval(revolutions)
        opt = minimize_scalar(self.t, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * hi})
        return float(opt.x), float(opt.fun)


def universal_lambert(r0, rf, tof, revolutions=0, prograde=True, gravity=None,
                      branch="long", tol=1e-14, max_iter=200) -> np.ndarray:
    """Initial velocity of the conic from ``r0`` to ``rf`` in ``tof`` seconds.

    Bate-Mueller-White universal-variable formulation: solve
    ``t(z) = tof`` for the universal variable ``z`` with Stumpff functions.
    For ``revolutions >= 1`` there are two roots inside
    ``((2 pi N)^2, (2 pi (N+1))^2)``; ``branch="long"`` picks the smaller
    ``z`` (larger semi-major axis), ``"short"`` the other.
    """
    gravity = gravity or GravityModel()
    r0 = np.asarray(r0, dtype=float)
    rf = np.asarray(rf, dtype=float)
    if tof <= 0:
        raise ValueError("time of flight must be positive")
    if branch not in ("long", "short"):
        raise ValueError("branch must be 'long' or 'short'")
    tt = _TransferTime(r0, rf, prograde, gravity.mu)
    trace: list[tuple[float, float]] = []

    def residual(z):
        value = tt.t(z) - tof
        trace.append((z, value))
        return value

    try:
        if revolutions == 0:
            hi = (2.0 * math.pi) ** 2 * (1.0 - 1e-12)
            lo = -4.0 * math.pi**2
            for _ in range(200):
                if tt.t(lo) < tof:
                    break
                lo = 2.0 * lo - 1.0
            else:
                raise SolverError("could not bracket the universal variable", trace)
            if tt.A > 0 and tt.y(lo) < 0:
                # raise the bracket to where y(z) >= 0
                lo = brentq(tt.y, lo, hi, xtol=1e-15)
            z = brentq(residual, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
        else:
            a, b = tt.interval(revolutions)
            z_min, t_min = tt.minimum(revolutions)
            if t_min > tof:
                raise NoSolutionError(
                    f"no {revolutions}-revolution solution: minimum time {t_min:.3f} s "
                    f"exceeds requested {tof:.3f} s")
            if branch == "long":
                z = brentq(residual, a, z_min, xtol=tol, maxiter=max_iter)
            else:
                z = brentq(residual, z_min, b, xtol=tol, maxiter=max_iter)
    except RuntimeError as exc:
        raise SolverError(f"universal-variable iteration failed: {exc}", trace) from exc

    y = tt.y(z)
    f = 1.0 - y / tt.n0
    g = tt.A * math.sqrt(y / gravity.mu)
    return (rf - f * r0) / g


def minimum_multirev_time(r0, rf, revolutions, prograde=True, gravity=None) -> float:
    """Smallest time of flight admitting an ``N``-revolution conic transfer."""
    gravity = gravity or GravityModel()
    if revolutions < 1:
        return 0.0
    tt = _TransferTime(np.asarray(r0, float), np.asarray(rf, float), prograde, gravity.mu)
    return tt.minimum(revolutions)[1]


# -- Cartesian propagation -----------------------------------------------

def cartesian_acceleration(position, gravity: GravityModel) -> np.ndarray:
    """Point-mass plus J2 acceleration [km/s^2].

    The J2 term is minus the gradient of
    ``mu R^2 J2 (3 z^2 / r^2 - 1) / (2 r^3)``.
    """
    r = np.asarray(position, dtype=float)
    rn = np.linalg.norm(r)
    acc = -gravity.mu * r / rn**3
    j2 = gravity.effective_j2
    if j2:
        z2 = (r[2] / rn) ** 2
        k = 1.5 * j2 * gravity.mu * gravity.radius**2 / rn**5
        acc = acc - k * np.array([r[0] * (1 - 5 * z2), r[1] * (1 - 5 * z2), r[2] * (3 - 5 * z2)])
    return acc


def cartesian_energy(states, gravity: GravityModel) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    r = np.linalg.norm(states[:, :3], axis=1)
    energy = 0.5 * np.sum(states[:, 3:] ** 2, axis=1) - gravity.mu / r
    j2 = gravity.effective_j2
    if j2:
        sin_lat = states[:, 2] / r
        energy = energy + 0.5 * gravity.mu * gravity.radius**2 * j2 / r**3 * (3 * sin_lat**2 - 1)
    return energy


def _cancellable(rhs, cancel):
    if cancel is None:
        return rhs

    def wrapped(t, y):
        if cancel():
            raise IntegrationError("integration cancelled", last_time=t)
        return rhs(t, y)

    return wrapped


def propagate_numeric(state0: CartesianState, tof: float, gravity: GravityModel | None = None,
                      config: IntegratorConfig | None = None,
                      cancel: Callable[[], bool] | None = None) -> PropagationResult:
    """Integrate the Cartesian equations of motion for ``tof`` seconds.

    The state is augmented with the swept in-plane angle
    ``|r x v| / r^2`` so revolution counts can be checked.
    """
    gravity = gravity or GravityModel()
    config = config or IntegratorConfig()
    if tof < 0:
        raise ValueError("time of flight must be nonnegative")
    x0 = np.append(state0.as_array(), 0.0)
    if tof == 0:
        return PropagationResult(state0, np.zeros(1), x0[None, :6], 0.0, 0.0, np.zeros(1))

    def rhs(t, y):
        r, v = y[:3], y[3:6]
        return np.concatenate([v, cartesian_acceleration(r, gravity),
                               [np.linalg.norm(np.cross(r, v)) / np.dot(r, r)]])

    sol = solve_ivp(_cancellable(rhs, cancel), (0.0, tof), x0, method=_METHODS[config.method],
                    rtol=config.rel_tolerance, atol=config.abs_tolerance,
                    max_step=config.max_step, dense_output=True)
    if sol.status != 0:
        raise IntegrationError(f"integration failed: {sol.message}", last_time=float(sol.t[-1]))
    energy = cartesian_energy(sol.y[:6].T, gravity)
    drift = float(np.max(np.abs(energy - energy[0])) / abs(energy[0]))
    times = np.linspace(0.0, tof, max(config.n_samples, 2))
    states = sol.sol(times)[:6].T
    states[-1] = sol.y[:6, -1]
    final = CartesianState.from_array(sol.y[:6, -1])
    return PropagationResult(final, times, states, drift, float(sol.y[6, -1]), sol.t)


def miss_distance(r0, v0, rf, tof, gravity=None, config=None) -> float:
    """Distance [km] between ``rf`` and the numerically propagated arrival."""
    result = propagate_numeric(CartesianState(r0, v0), tof, gravity, config)
    return float(np.linalg.norm(result.final_state.position - np.asarray(rf, dtype=float)))


def propagate_elements_numeric(x0, theta_span: float, gravity: GravityModel | None = None,
                               config: IntegratorConfig | None = None, n_samples: int = 201):
    """Integrate the element equations in ``theta`` directly.

    Returns ``(thetas, states, times)``; ``times`` integrates
    ``dt/dtheta = r^2 / p_theta`` alongside.
    """
    gravity = gravity or GravityModel()
    config = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    j2 = gravity.effective_j2
    thetas = np.linspace(0.0, theta_span, max(n_samples, 2))
    if theta_span == 0:
        return thetas, np.repeat(x0[None, :], len(thetas), axis=0), np.zeros(len(thetas))

    def rhs(_, y):
        return np.append(element_dynamics_array(y[:8], j2), time_rate(y[:8], gravity))

    # absolute tolerance floor keeps the time component's error in check
    sol = solve_ivp(rhs, (0.0, theta_span), np.append(x0, 0.0), method=_METHODS[config.method],
                    rtol=max(config.rel_tolerance, 1e-13), atol=max(config.abs_tolerance, 1e-15),
                    max_step=config.max_step, t_eval=thetas)
    if sol.status != 0:
        raise IntegrationError(f"element integration failed: {sol.message}",
                               last_time=float(sol.t[-1]) if sol.t.size else 0.0)
    return sol.t, sol.y[:8].T, sol.y[8]


def write_trajectory_csv(path, result: PropagationResult, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "vx", "vy", "vz"])
        for t, x in zip(result.times, result.states):
            writer.writerow([f"{t:.6f}"] + [f"{v:.12e}" for v in x])
