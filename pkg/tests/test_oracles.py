import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopman_lambert.elements import CartesianState, GravityModel, cartesian_to_elements_array
from koopman_lambert.exceptions import (
    DegenerateGeometryError,
    IntegrationError,
    NoSolutionError,
)
from koopman_lambert.oracles import (
    IntegratorConfig,
    cartesian_energy,
    minimum_multirev_time,
    miss_distance,
    propagate_elements_numeric,
    propagate_numeric,
    stumpff_c,
    stumpff_s,
    transfer_angle,
    universal_lambert,
    write_trajectory_csv,
)

from reference_values import (
    DELTA_THETA,
    ENERGY_MULTIREV,
    MULTIREV_TOF,
    PERIOD_ONE_HOUR,
    R0,
    RF,
    UNIVERSAL_MISS_J2,
    V0_ONE_HOUR,
)

TWO_BODY = GravityModel(j2_enabled=False)


def energy(r, v, mu=TWO_BODY.mu):
    return 0.5 * np.dot(v, v) - mu / np.linalg.norm(r)


@given(st.floats(-50.0, 50.0))
def test_stumpff_series_continuity(z):
    # series branch vs closed form on both sides of the switch
    for zz in (z * 1e-8, 1.01e-6 * np.sign(z or 1.0)):
        c, s = stumpff_c(zz), stumpff_s(zz)
        assert c == pytest.approx(0.5 - zz / 24, abs=1e-9)
        assert s == pytest.approx(1 / 6 - zz / 120, abs=1e-9)


def test_stumpff_near_full_turn():
    z = (2 * math.pi) ** 2 * (1 - 1e-12)
    assert 0 < stumpff_c(z) < 1e-10


def test_transfer_angle():
    assert transfer_angle(R0, RF) == pytest.approx(DELTA_THETA, abs=1e-12)
    assert transfer_angle(R0, RF, prograde=False) == pytest.approx(2 * math.pi - DELTA_THETA)
    with pytest.raises(DegenerateGeometryError):
        transfer_angle([7000.0, 0, 0], [-8000.0, 0, 0])


def test_curtis_velocity_and_miss(two_body):
    v0 = universal_lambert(R0, RF, 3600.0, gravity=two_body)
    assert np.allclose(v0, V0_ONE_HOUR, rtol=0, atol=1e-12)
    assert miss_distance(R0, v0, RF, 3600.0, two_body) <= 1e-9


def test_curtis_j2_miss(gravity):
    v0 = universal_lambert(R0, RF, 3600.0, gravity=TWO_BODY)
    miss = miss_distance(R0, v0, RF, 3600.0, gravity)
    assert miss == pytest.approx(UNIVERSAL_MISS_J2, abs=1e-6)
    assert abs(miss - 7.81) <= 0.5


def test_anti_parallel_rejected():
    with pytest.raises(DegenerateGeometryError):
        universal_lambert([7000.0, 0, 0], [-9000.0, 0, 0], 3000.0)


def test_half_period_transfer_hits_apogee():
    # perigee at 7000 km, apogee at 12000 km, slightly off 180 deg so the plane is defined
    mu = TWO_BODY.mu
    rp, ra = 7000.0, 12000.0
    a = 0.5 * (rp + ra)
    e = (ra - rp) / (ra + rp)
    nu = math.pi - 1e-3
    p = a * (1 - e * e)
    r = p / (1 + e * math.cos(nu))
    rf = r * np.array([math.cos(nu), math.sin(nu), 0.0])
    ecc_anom = 2 * math.atan(math.sqrt((1 - e) / (1 + e)) * math.tan(nu / 2))
    tof = math.sqrt(a**3 / mu) * (ecc_anom - e * math.sin(ecc_anom))
    v0 = universal_lambert([rp, 0.0, 0.0], rf, tof, gravity=TWO_BODY)
    vp = math.sqrt(mu * (1 + e) / rp)
    assert np.allclose(v0, [0.0, vp, 0.0], atol=1e-10)


def test_multirev_branches():
    for (n, branch), e_ref in ENERGY_MULTIREV.items():
        v0 = universal_lambert(R0, RF, MULTIREV_TOF, n, gravity=TWO_BODY, branch=branch)
        assert energy(R0, v0) == pytest.approx(e_ref, abs=1e-9)
        assert miss_distance(R0, v0, RF, MULTIREV_TOF, TWO_BODY) <= 1e-6


def test_multirev_minimum_time():
    t_min = minimum_multirev_time(R0, RF, 2, gravity=TWO_BODY)
    assert t_min < MULTIREV_TOF
    with pytest.raises(NoSolutionError):
        universal_lambert(R0, RF, 0.9 * t_min, 2, gravity=TWO_BODY)
    assert minimum_multirev_time(R0, RF, 0) == 0.0


def test_bad_arguments():
    with pytest.raises(ValueError):
        universal_lambert(R0, RF, -1.0)
    with pytest.raises(ValueError):
        universal_lambert(R0, RF, 10.0, branch="middle")


@given(st.floats(7000, 30000), st.floats(0.3, 2.8), st.floats(0.2, 1.5))
def test_universal_round_trip(radius, angle, frac):
    # choose a target on a circle and a time near the circular one
    r0 = np.array([radius, 0.0, 0.0])
    rf = 1.1 * radius * np.array([math.cos(angle), math.sin(angle), 0.05])
    tof = frac * angle * math.sqrt(radius**3 / TWO_BODY.mu)
    v0 = universal_lambert(r0, rf, tof, gravity=TWO_BODY)
    assert miss_distance(r0, v0, rf, tof, TWO_BODY) <= 1e-6 * radius


def test_circular_orbit_closes():
    r = 7000.0
    v = math.sqrt(TWO_BODY.mu / r)
    period = 2 * math.pi * math.sqrt(r**3 / TWO_BODY.mu)
    res = propagate_numeric(CartesianState([r, 0, 0], [0, v, 0]), period, TWO_BODY)
    assert np.linalg.norm(res.final_state.position - [r, 0, 0]) <= 1e-8
    assert res.swept_angle == pytest.approx(2 * math.pi, abs=1e-9)


def test_conservation_over_ten_periods():
    r0, v0 = np.array([7000.0, 0, 0]), np.array([0.0, 8.2, 1.0])
    e0 = energy(r0, v0)
    a = -TWO_BODY.mu / (2 * e0)
    period = 2 * math.pi * math.sqrt(a**3 / TWO_BODY.mu)
    res = propagate_numeric(CartesianState(r0, v0), 10 * period, TWO_BODY)
    states = res.states
    E = cartesian_energy(states, TWO_BODY)
    h = np.linalg.norm(np.cross(states[:, :3], states[:, 3:]), axis=1)
    assert np.max(np.abs(E - e0) / abs(e0)) <= 1e-9
    assert np.max(np.abs(h - h[0]) / h[0]) <= 1e-9
    assert res.energy_drift <= 1e-9


def test_j2_energy_conserved(gravity):
    res = propagate_numeric(CartesianState(R0, V0_ONE_HOUR), 30000.0, gravity)
    assert res.energy_drift <= 1e-10


def test_zero_tof_returns_initial_state():
    res = propagate_numeric(CartesianState(R0, V0_ONE_HOUR), 0.0)
    assert np.array_equal(res.final_state.position, R0)
    with pytest.raises(ValueError):
        propagate_numeric(CartesianState(R0, V0_ONE_HOUR), -1.0)


def test_adams_agrees_with_rk(gravity):
    state = CartesianState(R0, V0_ONE_HOUR)
    rk = propagate_numeric(state, 3600.0, gravity)
    adams = propagate_numeric(state, 3600.0, gravity,
                              IntegratorConfig(method="adams", rel_tolerance=1e-12,
                                               abs_tolerance=1e-12))
    assert np.linalg.norm(rk.final_state.position - adams.final_state.position) <= 1e-4


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tolerance=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(max_step=0.0)


def test_cancellation():
    calls = {"n": 0}

    def cancel():
        calls["n"] += 1
        return calls["n"] > 50

    with pytest.raises(IntegrationError) as info:
        propagate_numeric(CartesianState(R0, V0_ONE_HOUR), 3600.0, cancel=cancel)
    assert info.value.last_time is not None and info.value.last_time < 3600.0


def test_element_propagation_matches_cartesian(gravity):
    x0 = cartesian_to_elements_array(np.concatenate([R0, V0_ONE_HOUR]), gravity)
    _, states, times = propagate_elements_numeric(x0, DELTA_THETA, gravity, n_samples=11)
    res = propagate_numeric(CartesianState(R0, V0_ONE_HOUR), times[-1], gravity)
    ref = cartesian_to_elements_array(res.final_state.as_array(), gravity)
    assert np.max(np.abs(states[-1] - ref)) <= 1e-6


def test_two_body_element_constants(two_body):
    x0 = cartesian_to_elements_array(np.concatenate([R0, V0_ONE_HOUR]), two_body)
    thetas, states, times = propagate_elements_numeric(x0, 2 * math.pi, two_body, n_samples=41)
    assert np.max(np.abs(states[:, 4:] - x0[4:])) <= 1e-12
    assert np.allclose(states[:, 0], x0[0] * np.cos(thetas) - x0[1] * np.sin(thetas), atol=1e-11)
    assert times[-1] == pytest.approx(PERIOD_ONE_HOUR, rel=1e-10)


def test_trajectory_csv(tmp_path):
    res = propagate_numeric(CartesianState(R0, V0_ONE_HOUR), 600.0,
                            config=IntegratorConfig(n_samples=5))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, res, comment="oracle")
    lines = path.read_text().splitlines()
    assert lines[0] == "# oracle"
    assert lines[1] == "t,x,y,z,vx,vy,vz"
    assert len(lines) == 7
    assert len(res.samples) == 5
