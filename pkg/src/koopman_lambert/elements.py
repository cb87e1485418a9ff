"""Cartesian, spherical and zonal orbital-element representations.

The eight zonal elements ``(Lambda, eta, s, gamma, kappa, beta, chi, rho)``
make unperturbed two-body motion linear in the in-plane angle ``theta``
(``dtheta/dt = p_theta / r**2``), and turn the J2 problem into a polynomial
system of degree seven.

Units: spherical momenta are ``p_r`` [km/s], ``p_lat`` and ``p_lon``
[km^2/s].  All elements are dimensionless except ``beta`` [rad].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InversionError, SingularGeometryError

MU_EARTH = 398600.4418  # km^3/s^2
R_EARTH = 6378.137  # km
J2_EARTH = 1.08262668e-3

ELEMENT_NAMES = ("Lambda", "eta", "s", "gamma", "kappa", "beta", "chi", "rho")
N_ELEMENTS = 8

_SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class GravityModel:
    mu: float = MU_EARTH
    radius: float = R_EARTH
    j2: float = J2_EARTH
    j2_enabled: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.j2 >= 0:
            raise ValueError("J2 must be nonnegative")

    @property
    def effective_j2(self) -> float:
        return self.j2 if self.j2_enabled else 0.0

    def with_j2(self, enabled: bool) -> "GravityModel":
        return GravityModel(self.mu, self.radius, self.j2, enabled)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "radius": self.radius, "j2": self.j2, "j2_enabled": self.j2_enabled}


@dataclass(frozen=True, eq=False)
class CartesianState:
    position: np.ndarray
    velocity: np.ndarray
    # optional floor on |position|, e.g. the planet radius
    min_radius: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.position, dtype=float).reshape(3).copy()
        v = np.asarray(self.velocity, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("Cartesian state must be finite")
        if not np.linalg.norm(r) > self.min_radius:
            raise ValueError(f"position norm must exceed {self.min_radius} km")
        object.__setattr__(self, "position", r)
        object.__setattr__(self, "velocity", v)

    @classmethod
    def from_array(cls, x) -> "CartesianState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.position))


@dataclass(frozen=True)
class SphericalState:
    r: float
    lat: float
    lon: float
    p_r: float
    p_lat: float
    p_lon: float

    @property
    def p_theta(self) -> float:
        return float(np.sqrt(self.p_lat**2 + self.p_lon**2 / np.cos(self.lat) ** 2))

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.lat, self.lon, self.p_r, self.p_lat, self.p_lon])

    @classmethod
    def from_array(cls, x) -> "SphericalState":
        return cls(*(float(v) for v in np.asarray(x, dtype=float)[:6]))


@dataclass(frozen=True)
class ElementState:
    Lambda: float
    eta: float
    s: float
    gamma: float
    kappa: float
    beta: float
    chi: float
    rho: float

    def as_array(self) -> np.ndarray:
        return np.array([self.Lambda, self.eta, self.s, self.gamma,
                         self.kappa, self.beta, self.chi, self.rho])

    @classmethod
    def from_array(cls, x) -> "ElementState":
        return cls(*(float(v) for v in np.asarray(x, dtype=float)[:N_ELEMENTS]))


# -- Cartesian <-> spherical -------------------------------------------------

def cartesian_to_spherical_array(x) -> np.ndarray:
    """``(..., 6)`` Cartesian rows to ``(r, lat, lon, p_r, p_lat, p_lon)`` rows."""
    x = np.asarray(x, dtype=float)
    px, py, pz, vx, vy, vz = np.moveaxis(x, -1, 0)
    rho2 = px * px + py * py
    r = np.sqrt(rho2 + pz * pz)
    if np.any(rho2 <= (_SINGULAR_TOL * r) ** 2):
        raise SingularGeometryError("position on the polar axis: latitude momentum undefined")
    lat = np.arcsin(pz / r)
    lon = np.arctan2(py, px)
    rdot = (px * vx + py * vy + pz * vz) / r
    # z = r sin(lat)  ->  zdot = rdot sin(lat) + r cos(lat) latdot
    latdot = (vz - rdot * pz / r) / np.sqrt(rho2)
    p_lat = r * r * latdot
    p_lon = px * vy - py * vx
    return np.stack([r, lat, lon, rdot, p_lat, p_lon], axis=-1)


def spherical_to_cartesian_array(sph) -> np.ndarray:
    sph = np.asarray(sph, dtype=float)
    r, lat, lon, p_r, p_lat, p_lon = np.moveaxis(sph, -1, 0)
    cl, sl = np.cos(lat), np.sin(lat)
    co, so = np.cos(lon), np.sin(lon)
    latdot = p_lat / (r * r)
    londot = p_lon / (r * r * cl * cl)
    pos = np.stack([r * cl * co, r * cl * so, r * sl], axis=-1)
    vel = np.stack([
        p_r * cl * co - r * sl * co * latdot - r * cl * so * londot,
        p_r * cl * so - r * sl * so * latdot + r * cl * co * londot,
        p_r * sl + r * cl * latdot,
    ], axis=-1)
    return np.concatenate([pos, vel], axis=-1)


def cartesian_to_spherical(state: CartesianState) -> SphericalState:
    return SphericalState.from_array(cartesian_to_spherical_array(state.as_array()))


def spherical_to_cartesian(state: SphericalState) -> CartesianState:
    return CartesianState.from_array(spherical_to_cartesian_array(state.as_array()))


# -- spherical <-> elements -------------------------------------------------

def spherical_to_elements_array(sph, gravity: GravityModel) -> np.ndarray:
    """Zonal elements of spherical rows.

    The node offset ``lon - beta`` is evaluated as ``atan2(rho*s, gamma)``.
    On physical states this equals the arcsine form
    ``arcsin(tan(lat) * |p_lon| / sqrt(p_theta**2 - p_lon**2))`` for prograde
    orbits, resolved to the descending half when ``p_lat < 0``, so ``beta``
    stays continuous along the orbit.
    """
    sph = np.asarray(sph, dtype=float)
    mu, R = gravity.mu, gravity.radius
    r, lat, lon, p_r, p_lat, p_lon = np.moveaxis(sph, -1, 0)
    cl = np.cos(lat)
    p_theta = np.sqrt(p_lat**2 + (p_lon / cl) ** 2)
    if np.any(~(p_theta > 0)):
        raise SingularGeometryError("zero angular momentum: elements undefined")
    rho = p_lon / p_theta
    if np.any(np.abs(p_lon) < _SINGULAR_TOL * p_theta):
        raise SingularGeometryError("polar orbit (p_lon = 0) is a singularity of the element map")
    if np.any(rho <= -1.0 + _SINGULAR_TOL):
        raise SingularGeometryError("retrograde equatorial orbit is a singularity of the element map")
    if np.any((np.abs(rho) >= 1.0 - _SINGULAR_TOL) & (np.abs(lat) > _SINGULAR_TOL)):
        raise SingularGeometryError("p_theta**2 == p_lon**2 off the equator: beta undefined")
    s = np.sin(lat)
    gamma = p_lat / p_theta * cl
    sqrt_rm = np.sqrt(R / mu)
    Lam = sqrt_rm * (p_theta / r - mu / p_theta)
    eta = p_r * sqrt_rm
    kappa = np.sqrt(mu * R) / p_theta
    beta = _wrap(lon - np.arctan2(rho * s, gamma))
    # chi is unbounded on equatorial orbits (s = gamma = 0); inversion never uses it
    with np.errstate(divide="ignore"):
        chi = p_lon / p_theta**4 * (mu * R) ** 1.5 / (s * s + (p_lat / p_theta) ** 2 * cl * cl)
    return np.stack([Lam, eta, s, gamma, kappa, beta, chi, rho], axis=-1)


def elements_to_spherical_array(el, gravity: GravityModel) -> np.ndarray:
    el = np.asarray(el, dtype=float)
    mu, R = gravity.mu, gravity.radius
    Lam, eta, s, gamma, kappa, beta, chi, rho = np.moveaxis(el, -1, 0)
    if np.any(~(kappa > 0)):
        raise InversionError("kappa must be positive")
    if np.any(~(np.abs(s) < 1.0)):
        raise InversionError("|s| must be below one")
    p_theta = np.sqrt(mu * R) / kappa
    denom = np.sqrt(mu / R) * Lam + mu / p_theta
    if np.any(~(denom > 0)):
        raise InversionError("elements give a non-positive radius")
    r = p_theta / denom
    p_r = eta * np.sqrt(mu / R)
    lat = np.arcsin(s)
    cl = np.cos(lat)
    p_lat = gamma * p_theta / cl
    p_lon = rho * p_theta
    lon = _wrap(beta + np.arctan2(rho * s, gamma))
    return np.stack([r, lat, lon, p_r, p_lat, p_lon], axis=-1)


def spherical_to_elements(state: SphericalState, gravity: GravityModel) -> ElementState:
    return ElementState.from_array(spherical_to_elements_array(state.as_array(), gravity))


def elements_to_spherical(state: ElementState, gravity: GravityModel) -> SphericalState:
    return SphericalState.from_array(elements_to_spherical_array(state.as_array(), gravity))


def cartesian_to_elements_array(x, gravity: GravityModel) -> np.ndarray:
    return spherical_to_elements_array(cartesian_to_spherical_array(x), gravity)


def elements_to_cartesian_array(el, gravity: GravityModel) -> np.ndarray:
    return spherical_to_cartesian_array(elements_to_spherical_array(el, gravity))


def _wrap(angle):
    return np.mod(angle + np.pi, 2.0 * np.pi) - np.pi


def angular_momentum_from_elements(el, gravity: GravityModel):
    """``p_theta = sqrt(mu R) / kappa`` [km^2/s]."""
    return np.sqrt(gravity.mu * gravity.radius) / np.asarray(el, dtype=float)[..., 4]


def radius_from_elements(el, gravity: GravityModel):
    # R / r = kappa * (Lambda + kappa)
    el = np.asarray(el, dtype=float)
    return gravity.radius / (el[..., 4] * (el[..., 0] + el[..., 4]))


def time_rate(el, gravity: GravityModel):
    """``dt/dtheta = r**2 / p_theta`` [s/rad]."""
    el = np.asarray(el, dtype=float)
    Lam, kappa = el[..., 0], el[..., 4]
    return gravity.radius**1.5 / (np.sqrt(gravity.mu) * kappa * (Lam + kappa) ** 2)


# -- dynamics ----------------------------------------------------------------

def element_dynamics_array(el, j2: float) -> np.ndarray:
    """Hamilton equations in the zonal elements, derivatives per radian.

    ``el`` has shape ``(..., 8)``.  ``j2 = 0`` leaves the two decoupled
    rotations ``(Lambda, eta)`` and ``(s, gamma)``.  The ``chi`` equation
    carries the ``gamma`` factor that follows from differentiating
    ``chi = rho * kappa**3 / (s**2 + gamma**2)``.
    """
    el = np.asarray(el, dtype=float)
    Lam, eta, s, g, k, b, c, rho = np.moveaxis(el, -1, 0)
    lk = Lam + k
    k3 = k**3
    out = np.empty_like(el)
    out[..., 0] = -eta - 3 * j2 * s * g * k3 * lk * (Lam + 2 * k)
    out[..., 1] = Lam + 1.5 * j2 * k3 * lk**2 * (3 * s * s - 1)
    out[..., 2] = g
    out[..., 3] = -s - 3 * j2 * s * rho**2 * k3 * lk
    out[..., 4] = 3 * j2 * s * g * k**4 * lk
    out[..., 5] = -3 * j2 * s * s * c * lk
    out[..., 6] = 12 * j2 * s * g * c * k3 * lk + 6 * j2 * s * g * rho * c * c * lk
    out[..., 7] = 3 * j2 * s * g * rho * k3 * lk
    return out


def element_dynamics(state: ElementState, gravity: GravityModel) -> np.ndarray:
    return element_dynamics_array(state.as_array(), gravity.effective_j2)


def _t(coef, **powers):
    exps = [0] * N_ELEMENTS
    names = {"L": 0, "eta": 1, "s": 2, "g": 3, "k": 4, "b": 5, "c": 6, "rho": 7}
    for name, p in powers.items():
        exps[names[name]] = p
    return coef, tuple(exps)


# Expanded monomials: (coefficient at j2 = 0, coefficient per unit j2, exponents).
# Written out by hand from the factored equations so that it can serve as
# an independent check of element_dynamics_array.
_LINEAR_TERMS = {
    0: [_t(-1.0, eta=1)],
    1: [_t(1.0, L=1)],
    2: [_t(1.0, g=1)],
    3: [_t(-1.0, s=1)],
}
_J2_TERMS = {
    0: [_t(-3.0, s=1, g=1, k=3, L=2), _t(-9.0, s=1, g=1, k=4, L=1), _t(-6.0, s=1, g=1, k=5)],
    1: [_t(4.5, s=2, k=3, L=2), _t(9.0, s=2, k=4, L=1), _t(4.5, s=2, k=5),
        _t(-1.5, k=3, L=2), _t(-3.0, k=4, L=1), _t(-1.5, k=5)],
    3: [_t(-3.0, s=1, rho=2, k=3, L=1), _t(-3.0, s=1, rho=2, k=4)],
    4: [_t(3.0, s=1, g=1, k=4, L=1), _t(3.0, s=1, g=1, k=5)],
    5: [_t(-3.0, s=2, c=1, L=1), _t(-3.0, s=2, c=1, k=1)],
    6: [_t(12.0, s=1, g=1, c=1, k=3, L=1), _t(12.0, s=1, g=1, c=1, k=4),
        _t(6.0, s=1, g=1, rho=1, c=2, L=1), _t(6.0, s=1, g=1, rho=1, c=2, k=1)],
    7: [_t(3.0, s=1, g=1, rho=1, k=3, L=1), _t(3.0, s=1, g=1, rho=1, k=4)],
}


def element_dynamics_terms(j2: float) -> list[list[tuple[float, tuple[int, ...]]]]:
    """Sparse monomial form of the element dynamics, one term list per output."""
    rows = []
    for i in range(N_ELEMENTS):
        terms = list(_LINEAR_TERMS.get(i, []))
        if j2 != 0.0:
            terms += [(coef * j2, exps) for coef, exps in _J2_TERMS.get(i, [])]
        rows.append(terms)
    return rows


def evaluate_terms(terms, x) -> np.ndarray:
    """Evaluate a monomial table at rows ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (len(terms),))
    for i, row in enumerate(terms):
        for coef, exps in row:
            term = np.full(x.shape[:-1], coef)
            for j, p in enumerate(exps):
                if p:
                    term = term * x[..., j] ** p
            out[..., i] += term
    return out


def hamiltonian(state: SphericalState, gravity: GravityModel) -> float:
    """Specific energy [km^2/s^2], including the J2 potential when enabled."""
    return float(hamiltonian_array(state.as_array(), gravity))


def hamiltonian_array(sph, gravity: GravityModel):
    sph = np.asarray(sph, dtype=float)
    r, lat, _, p_r, p_lat, p_lon = np.moveaxis(sph, -1, 0)
    kinetic = 0.5 * (p_r**2 + p_lat**2 / r**2 + p_lon**2 / (r**2 * np.cos(lat) ** 2))
    potential = -gravity.mu / r
    j2 = gravity.effective_j2
    if j2:
        potential = potential + 0.5 * gravity.mu * gravity.radius**2 * j2 / r**3 * (
            3 * np.sin(lat) ** 2 - 1)
    return kinetic + potential
