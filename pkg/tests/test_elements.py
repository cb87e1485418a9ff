import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopman_lambert.elements import (
    CartesianState,
    ElementState,
    GravityModel,
    SphericalState,
    angular_momentum_from_elements,
    cartesian_to_elements_array,
    cartesian_to_spherical,
    cartesian_to_spherical_array,
    element_dynamics,
    element_dynamics_array,
    element_dynamics_terms,
    elements_to_cartesian_array,
    elements_to_spherical,
    elements_to_spherical_array,
    evaluate_terms,
    hamiltonian,
    hamiltonian_array,
    spherical_to_cartesian_array,
    spherical_to_elements,
    spherical_to_elements_array,
)
from koopman_lambert.exceptions import InversionError, SingularGeometryError
from koopman_lambert.oracles import propagate_elements_numeric

MU = 398600.4418


def kepler_state(a, e, inc, raan, argp, nu, mu=MU):
    p = a * (1 - e * e)
    r = p / (1 + e * math.cos(nu))
    rp = r * np.array([math.cos(nu), math.sin(nu), 0.0])
    vp = math.sqrt(mu / p) * np.array([-math.sin(nu), e + math.cos(nu), 0.0])

    def rot(axis, ang):
        c, s = math.cos(ang), math.sin(ang)
        if axis == 3:
            return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    Q = rot(3, raan) @ rot(1, inc) @ rot(3, argp)
    return np.concatenate([Q @ rp, Q @ vp])


bound_orbits = st.builds(
    kepler_state,
    a=st.floats(7000, 40000),
    e=st.floats(0.0, 0.8),
    inc=st.floats(0.05, 1.5).filter(lambda i: abs(i - math.pi / 2) > 0.05),
    raan=st.floats(0, 2 * math.pi),
    argp=st.floats(0, 2 * math.pi),
    nu=st.floats(0, 2 * math.pi),
)


def test_cartesian_to_spherical_equatorial():
    sph = cartesian_to_spherical(CartesianState([7000.0, 0, 0], [0, 7.5, 0]))
    assert sph.r == pytest.approx(7000.0)
    assert sph.lat == 0 and sph.lon == 0 and sph.p_r == 0 and sph.p_lat == 0
    assert sph.p_lon == pytest.approx(7000.0 * 7.5)


def test_curtis_radius():
    assert cartesian_to_spherical_array([5000, 10000, 2100, 1, 1, 1])[0] == pytest.approx(
        11375.9, abs=0.05)


def test_polar_axis_rejected():
    with pytest.raises(SingularGeometryError):
        cartesian_to_spherical_array([0.0, 0.0, 7000.0, 1.0, 0.0, 0.0])


def test_min_radius_floor():
    with pytest.raises(ValueError):
        CartesianState([1000.0, 0, 0], [0, 1, 0], min_radius=6378.137)


@given(bound_orbits)
def test_cartesian_spherical_round_trip(x):
    back = spherical_to_cartesian_array(cartesian_to_spherical_array(x))
    assert np.allclose(back, x, rtol=1e-12, atol=1e-12 * np.abs(x).max())


@given(bound_orbits)
def test_full_round_trip(x):
    g = GravityModel()
    el = cartesian_to_elements_array(x, g)
    back = elements_to_cartesian_array(el, g)
    scale = np.concatenate([np.full(3, np.linalg.norm(x[:3])), np.full(3, np.linalg.norm(x[3:]))])
    assert np.max(np.abs(back - x) / scale) <= 1e-10


@given(bound_orbits)
def test_elements_spherical_round_trip(x):
    g = GravityModel()
    sph = cartesian_to_spherical_array(x)
    el = spherical_to_elements_array(sph, g)
    back = elements_to_spherical_array(el, g)
    d = back - sph
    d[2] = (d[2] + math.pi) % (2 * math.pi) - math.pi
    assert np.max(np.abs(d) / np.maximum(np.abs(sph), 1.0)) <= 1e-10
    el2 = spherical_to_elements_array(back, g)
    d = el2 - el
    d[5] = (d[5] + math.pi) % (2 * math.pi) - math.pi
    assert np.max(np.abs(d)) <= 1e-10


@given(bound_orbits)
def test_angular_momentum_consistency(x):
    g = GravityModel()
    h = np.linalg.norm(np.cross(x[:3], x[3:]))
    el = cartesian_to_elements_array(x, g)
    assert angular_momentum_from_elements(el, g) == pytest.approx(h, rel=1e-10)


@given(bound_orbits)
def test_element_constraint(x):
    el = cartesian_to_elements_array(x, GravityModel())
    _, _, s, gamma, kappa, _, _, rho = el
    assert s * s + gamma * gamma + rho * rho == pytest.approx(1.0, abs=1e-12)
    assert kappa > 0 and abs(s) <= 1 and abs(rho) <= 1


def test_equatorial_circular_elements():
    g = GravityModel()
    r = 8000.0
    sph = SphericalState(r, 0.0, 0.3, 0.0, 0.0, math.sqrt(g.mu * r))
    el = spherical_to_elements(sph, g)
    assert abs(el.Lambda) < 1e-12 and el.eta == 0 and el.s == 0 and el.gamma == 0
    assert el.rho == pytest.approx(1.0)


def test_circular_and_equatorial_inversion():
    g = GravityModel()
    p_theta = 60000.0
    kappa = math.sqrt(g.mu * g.radius) / p_theta
    state = ElementState(0.0, 0.0, 0.0, 0.0, kappa, 0.2, 1.0, 1.0)
    sph = elements_to_spherical(state, g)
    assert sph.r == pytest.approx(p_theta**2 / g.mu, rel=1e-12)
    assert sph.lat == 0 and sph.p_lat == 0


def test_singularities():
    g = GravityModel()
    with pytest.raises(SingularGeometryError):
        spherical_to_elements_array([7000, 0.3, 0.0, 0.0, 50000.0, 0.0], g)  # polar
    with pytest.raises(SingularGeometryError):
        spherical_to_elements_array([7000, 0.0, 0.0, 0.0, 0.0, -50000.0], g)  # retrograde eq.
    with pytest.raises(InversionError):
        elements_to_spherical_array([0, 0, 0.1, 0.1, -0.5, 0, 1, 0.9], g)
    with pytest.raises(InversionError):
        elements_to_spherical_array([-2.0, 0, 0.1, 0.1, 0.5, 0, 1, 0.9], g)


def test_retrograde_inclined_round_trip():
    g = GravityModel()
    x = kepler_state(9000, 0.1, 2.4, 0.7, 1.1, 0.4)
    back = elements_to_cartesian_array(cartesian_to_elements_array(x, g), g)
    assert np.allclose(back, x, rtol=1e-10, atol=1e-8)


def test_dynamics_examples():
    j2 = GravityModel().j2
    d = element_dynamics_array(np.array([0.1, 0, 0, 0, 0.7, 0.2, 1.0, 1.0]), 0.0)
    assert np.allclose(d, [0, 0.1, 0, 0, 0, 0, 0, 0])
    x = np.array([0.1, 0.05, 0.0, 0.0, 0.7, 0.2, 1.3, 1.0])
    d = element_dynamics_array(x, j2)
    assert d[4] == 0 and d[6] == 0 and d[7] == 0 and d[0] == -x[1]


def test_dynamics_object_wrapper():
    g = GravityModel(j2_enabled=False)
    state = ElementState(0.1, 0.2, 0.3, 0.4, 0.6, 0.0, 1.0, 0.8)
    assert np.allclose(element_dynamics(state, g), [-0.2, 0.1, 0.4, -0.3, 0, 0, 0, 0])


def test_dual_implementation_agrees():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (1000, 8))
    x[:, 4] = rng.uniform(0.2, 1.5, 1000)
    for j2 in (0.0, GravityModel().j2, 0.3):
        a = element_dynamics_array(x, j2)
        b = evaluate_terms(element_dynamics_terms(j2), x)
        assert np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0)) <= 1e-13


def test_element_flow_matches_cartesian_flow():
    # a strong J2 exercises every perturbation term, including the chi row
    from koopman_lambert.oracles import propagate_numeric

    g = GravityModel(j2=0.05)
    x0 = kepler_state(9000, 0.1, 0.6, 0.3, 0.2, 0.1)
    el0 = cartesian_to_elements_array(x0, g)
    _, states, times = propagate_elements_numeric(el0, 2.0, g, n_samples=5)
    res = propagate_numeric(CartesianState(x0[:3], x0[3:]), times[-1], g)
    el_ref = cartesian_to_elements_array(res.final_state.as_array(), g)
    assert np.max(np.abs(states[-1] - el_ref)) <= 1e-8


def test_hamiltonian_examples():
    g = GravityModel(j2_enabled=False)
    r = 7200.0
    sph = SphericalState(r, 0.0, 0.0, 0.0, 0.0, math.sqrt(g.mu * r))
    assert hamiltonian(sph, g) == pytest.approx(-g.mu / (2 * r), rel=1e-14)
    x = kepler_state(11000, 0.3, 0.7, 1.0, 2.0, 0.5)
    e_cart = 0.5 * x[3:] @ x[3:] - g.mu / np.linalg.norm(x[:3])
    assert hamiltonian_array(cartesian_to_spherical_array(x), g) == pytest.approx(e_cart, rel=1e-13)


@pytest.mark.parametrize("j2_enabled", [False, True])
def test_hamiltonian_conserved_along_element_flow(j2_enabled):
    g = GravityModel(j2_enabled=j2_enabled)
    x0 = kepler_state(12000, 0.2, 0.8, 0.4, 0.9, 0.0)
    el0 = cartesian_to_elements_array(x0, g)
    _, states, _ = propagate_elements_numeric(el0, 2 * math.pi, g, n_samples=101)
    H = hamiltonian_array(elements_to_spherical_array(states, g), g)
    assert np.max(np.abs(H - H[0])) / abs(H[0]) <= 1e-9


def test_unperturbed_closure():
    g = GravityModel(j2_enabled=False)
    el0 = cartesian_to_elements_array(kepler_state(15000, 0.4, 0.5, 0.1, 0.2, 0.3), g)
    thetas, states, _ = propagate_elements_numeric(el0, 3.0, g, n_samples=31)
    c, s = np.cos(thetas), np.sin(thetas)
    assert np.allclose(states[:, 0], el0[0] * c - el0[1] * s, atol=1e-10)
    assert np.allclose(states[:, 1], el0[1] * c + el0[0] * s, atol=1e-10)
    assert np.allclose(states[:, 2], el0[2] * c + el0[3] * s, atol=1e-10)
    assert np.allclose(states[:, 3], el0[3] * c - el0[2] * s, atol=1e-10)
    assert np.max(np.abs(states[:, 4:] - el0[4:])) <= 1e-12


def test_gravity_validation():
    with pytest.raises(ValueError):
        GravityModel(mu=-1.0)
    with pytest.raises(ValueError):
        GravityModel(j2=-1e-3)
    assert GravityModel(j2_enabled=False).effective_j2 == 0.0
    assert GravityModel().with_j2(False).j2 == GravityModel().j2
