import numpy as np
import pytest

from theory_of_machine.machines import MachineClass, MachineSpec, VehicleParams


def vehicle_params(**changes) -> VehicleParams:
    base = dict(
        mass=1000.0, f_max=5000.0, b_max=7500.0, mu0=1.0, c_drag=0.4, c_rr=0.015,
        wheelbase=2.7, delta_max=0.5, v_max=60.0, t_opt=365.0, k_heat=0.03, k_cool=0.08,
        k_temp_sens=0.7, slope_amp=0.06, slope_period=500.0, year=1990,
    )
    base.update(changes)
    return VehicleParams(**base)


def vehicle_spec(machine_id=0, cls=MachineClass.SPORT, **changes) -> MachineSpec:
    return MachineSpec(machine_id, cls, vehicle_params(**changes), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULT_LINES

    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
