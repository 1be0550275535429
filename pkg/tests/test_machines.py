import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import vehicle_params, vehicle_spec
from theory_of_machine.datagen import excite
from theory_of_machine.machines import (
    CLASS_RANGES,
    MachineClass,
    MachineSpec,
    ValidationError,
    Vehicle,
    init_machine,
    spawn_fleet,
    spectral_radius_bound,
    with_params,
)

FULL_FLEET = {"SUV": 4, "TRACK": 4, "SPORT": 4, "GT": 4}
small = st.floats(-0.1, 0.1, allow_nan=False)
control = st.tuples(small, small, small)


def run(spec, controls):
    m = init_machine(spec)
    return np.array([m.step(u) for u in controls])


def test_empty_fleet():
    assert spawn_fleet(1, {}) == []


def test_fleet_sizes_and_ranges():
    specs = spawn_fleet(1, FULL_FLEET)
    assert len(specs) == 16
    assert [s.machine_id for s in specs] == list(range(16))
    for s in specs:
        (m_lo, m_hi), (f_lo, f_hi), (mu_lo, mu_hi) = CLASS_RANGES[s.machine_class]
        assert m_lo <= s.params.mass <= m_hi
        assert f_lo <= s.params.f_max <= f_hi
        assert mu_lo <= s.params.mu0 <= mu_hi
        assert s.params.b_max == 1.5 * s.params.f_max
        assert 1960 <= s.params.year <= 2020
    suv = [s.params.mass for s in specs if s.machine_class is MachineClass.SUV]
    assert len(suv) == 4 and all(2000 <= m <= 2500 for m in suv)


def test_fleet_determinism_and_shared_road():
    a, b = spawn_fleet(1, FULL_FLEET), spawn_fleet(1, FULL_FLEET)
    assert a == b
    assert len({(s.params.slope_amp, s.params.slope_period) for s in a}) == 1
    assert spawn_fleet(2, FULL_FLEET) != a


def test_rest_states():
    v = init_machine(vehicle_spec())
    assert v.state.speed == 0.0 and v.state.heading == 0.0
    lti = init_machine(spawn_fleet(3, {"LTI": 1})[0])
    assert np.array_equal(lti.x, np.zeros(4))


def test_negative_mass_rejected():
    with pytest.raises(ValidationError, match="mass"):
        init_machine(vehicle_spec(mass=-1.0))


def test_wrong_params_type_rejected():
    lti = spawn_fleet(3, {"LTI": 1})[0]
    with pytest.raises(ValidationError):
        MachineSpec(0, MachineClass.SUV, lti.params, 0).validate()


def test_control_out_of_range_rejected():
    with pytest.raises(ValidationError):
        init_machine(vehicle_spec()).step((0.3, 0.0, 0.0))


def test_zero_input_at_rest():
    assert run(vehicle_spec(), [(0.0, 0.0, 0.0)]).tolist() == [[0.0, 0.0, 0.0]]


def test_first_throttle_step_by_hand():
    # a_thr = 0.2, F = 1000 N, a = 1 m/s^2, v = 0.1 m/s, dx = v * dt
    out = run(vehicle_spec(mass=1000.0, f_max=5000.0), [(0.2, 0.0, 0.0)])[0]
    assert out[0] == pytest.approx(0.01, abs=1e-15)
    assert out[1] == 0.0
    # the grade term is slope_amp * sin(2 pi s / period) * ds with s = 0.01 m
    assert abs(out[2]) < 1e-7


def test_lti_closed_form():
    spec = spawn_fleet(4, {"LTI": 1})[0]
    p = spec.params
    u, u2 = np.array([0.1, -0.05, 0.2]), np.array([-0.2, 0.15, 0.0])
    out = run(spec, [u, u2])
    np.testing.assert_allclose(out[0], p.d_matrix @ u, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out[1], p.c_matrix @ p.b_matrix @ u + p.d_matrix @ u2, rtol=0, atol=1e-14)


def test_lti_rescaled_stable():
    for spec in spawn_fleet(5, {"LTI": 6}):
        rho = max(abs(np.linalg.eigvals(spec.params.a_matrix)))
        assert rho <= 0.95 + 1e-12


def test_spectral_radius_bound_is_upper_bound():
    a = np.array([[0.5, 10.0], [0.0, 0.4]])
    b = spectral_radius_bound(a)
    assert b >= 0.5
    assert b < 0.5 * 1.1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(control, control), min_size=1, max_size=30))
def test_lti_superposition(seq):
    spec = spawn_fleet(6, {"LTI": 1})[0]
    us = [np.array(a) for a, _ in seq]
    vs = [np.array(b) for _, b in seq]
    both = run(spec, [u + v for u, v in zip(us, vs)])
    np.testing.assert_allclose(both, run(spec, us) + run(spec, vs), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(control, min_size=2, max_size=20), st.randoms(use_true_random=False))
def test_stateless_permutation(seq, rnd):
    spec = spawn_fleet(7, {"STATELESS": 1})[0]
    perm = list(range(len(seq)))
    rnd.shuffle(perm)
    a = run(spec, seq)
    b = run(spec, [seq[i] for i in perm])
    assert np.array_equal(a[perm], b)


def test_stateless_linear_flag():
    spec = spawn_fleet(7, {"STATELESS": 1}, linear_stateless=True)[0]
    u = np.array([0.1, 0.2, -0.1])
    np.testing.assert_allclose(run(spec, [u])[0], 2.0 * spec.params.weights @ u, atol=1e-15)


def test_year_invariance():
    controls = excite(11, 600, 0.3, 0.05)
    spec = spawn_fleet(8, {"GT": 1})[0]
    other = with_params(spec, year=2020 if spec.params.year != 2020 else 1960)
    assert np.array_equal(run(spec, controls), run(other, controls))


def test_heavier_vehicle_travels_less():
    controls = [(0.05, 0.0, 0.0)] * 200
    light = np.abs(run(vehicle_spec(mass=900.0), controls)[:, 0]).sum()
    heavy = np.abs(run(vehicle_spec(mass=2300.0), controls)[:, 0]).sum()
    assert heavy < light


def test_bounds_along_trajectory():
    for spec in spawn_fleet(9, FULL_FLEET)[::3]:
        v = Vehicle(spec)
        for u in excite(spec.seed, 1500, 0.3, 0.08):
            v.step(u)
            assert 0.0 <= v.state.speed <= spec.params.v_max
            g = v.grip()
            assert 0.5 * spec.params.mu0 <= g <= spec.params.mu0


def test_replay_bit_identical():
    spec = spawn_fleet(10, {"TRACK": 1})[0]
    controls = excite(3, 500, 0.3, 0.05)
    assert np.array_equal(run(spec, controls), run(spec, controls))
    assert all(math.isfinite(x) for x in run(spec, controls).ravel())
