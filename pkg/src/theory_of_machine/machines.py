"""Deterministic machines with a uniform ``reset``/``step`` interface.

Three families:

* vehicles: a planar single-track car whose motion depends on fixed
  parameters (mass, grip, force limits) *and* on hidden state (speed,
  heading, actuator positions, tyre temperature, road grade);
* LTI: a discrete linear state-space system with an analytic oracle;
* stateless: a memoryless map of the current input, used for ablations.

All vehicle arithmetic is scalar f64 in a fixed order so that trajectories
are bit-reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Union

import numpy as np

from .rng import SplitMix64, mix_seed

DT = 0.1
GRAVITY = 9.81
AMBIENT_K = 300.0
DELTA_BOUND = 0.2


class ValidationError(ValueError):
    """Raised for malformed machine specs or out-of-range inputs."""


class MachineClass(str, enum.Enum):
    SUV = "SUV"
    HATCH = "HATCH"
    SPORT = "SPORT"
    GT = "GT"
    TRACK = "TRACK"
    LTI = "LTI"
    STATELESS = "STATELESS"


VEHICLE_CLASSES = (
    MachineClass.SUV,
    MachineClass.HATCH,
    MachineClass.SPORT,
    MachineClass.GT,
    MachineClass.TRACK,
)

# mass [kg], f_max [N], mu0
CLASS_RANGES = {
    MachineClass.SUV: ((2000.0, 2500.0), (4000.0, 6000.0), (0.8, 0.9)),
    MachineClass.HATCH: ((1100.0, 1400.0), (3000.0, 5000.0), (0.9, 1.0)),
    MachineClass.SPORT: ((1300.0, 1600.0), (6000.0, 9000.0), (1.0, 1.2)),
    MachineClass.GT: ((1400.0, 1600.0), (8000.0, 11000.0), (1.1, 1.3)),
    MachineClass.TRACK: ((600.0, 800.0), (12000.0, 16000.0), (1.6, 2.0)),
}

SHARED_RANGES = {
    "c_drag": (0.3, 0.5),
    "c_rr": (0.01, 0.02),
    "wheelbase": (2.4, 3.0),
    "delta_max": (0.4, 0.6),
    "v_max": (40.0, 90.0),
    "t_opt": (350.0, 380.0),
    "k_heat": (0.02, 0.05),
    "k_cool": (0.05, 0.1),
    "k_temp_sens": (0.5, 1.0),
}
SLOPE_AMP_RANGE = (0.05, 0.08)
SLOPE_PERIOD_RANGE = (400.0, 600.0)
YEAR_RANGE = (1960, 2020)

# stream tag for the per-fleet road profile
_ROAD_TAG = 0x5107E


class ControlDelta(NamedTuple):
    d_throttle: float
    d_brake: float
    d_steer: float


class MotionDelta(NamedTuple):
    dx: float
    dy: float
    dz: float


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    f_max: float
    b_max: float
    mu0: float
    c_drag: float
    c_rr: float
    wheelbase: float
    delta_max: float
    v_max: float
    t_opt: float
    k_heat: float
    k_cool: float
    k_temp_sens: float
    slope_amp: float
    slope_period: float
    year: int

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "year":
                continue
            if not (math.isfinite(v) and v > 0.0):
                raise ValidationError(f"vehicle parameter {f.name} must be positive and finite, got {v!r}")
        if not 0.5 <= self.mu0 <= 2.5:
            raise ValidationError(f"mu0 must lie in [0.5, 2.5], got {self.mu0!r}")
        if not YEAR_RANGE[0] <= self.year <= YEAR_RANGE[1]:
            raise ValidationError(f"year must lie in [1960, 2020], got {self.year!r}")


@dataclass
class VehicleState:
    pos_x: float = 0.0
    pos_y: float = 0.0
    pos_z: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    arc_length: float = 0.0
    tire_temp: float = AMBIENT_K
    a_thr: float = 0.0
    a_brk: float = 0.0
    a_str: float = 0.0


@dataclass(frozen=True, eq=False)
class LtiParams:
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    c_matrix: np.ndarray
    d_matrix: np.ndarray
    state: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def validate(self) -> None:
        expect = {"a_matrix": (4, 4), "b_matrix": (4, 3), "c_matrix": (3, 4), "d_matrix": (3, 3), "state": (4,)}
        for name, shape in expect.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ValidationError(f"LTI {name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"LTI {name} has non-finite entries")

    def __eq__(self, other):
        if not isinstance(other, LtiParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("a_matrix", "b_matrix", "c_matrix", "d_matrix", "state")
        )


@dataclass(frozen=True, eq=False)
class StatelessParams:
    """``output = 2 * tanh(W @ u)``, or ``2 * W @ u`` when ``linear``."""

    weights: np.ndarray
    linear: bool = False

    def validate(self) -> None:
        w = np.asarray(self.weights)
        if w.shape != (3, 3):
            raise ValidationError(f"stateless weights must be 3x3, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("stateless weights have non-finite entries")

    def __eq__(self, other):
        if not isinstance(other, StatelessParams):
            return NotImplemented
        return self.linear == other.linear and np.array_equal(self.weights, other.weights)


Params = Union[VehicleParams, LtiParams, StatelessParams]


@dataclass(frozen=True)
class MachineSpec:
    machine_id: int
    machine_class: MachineClass
    params: Params
    seed: int

    def validate(self) -> None:
        want = {
            MachineClass.LTI: LtiParams,
            MachineClass.STATELESS: StatelessParams,
        }.get(self.machine_class, VehicleParams)
        if not isinstance(self.params, want):
            raise ValidationError(
                f"machine {self.machine_id}: class {self.machine_class.value} needs {want.__name__}, "
                f"got {type(self.params).__name__}"
            )
        self.params.validate()


# ---------------------------------------------------------------------------
# sampling


def sample_vehicle(rng: SplitMix64, cls: MachineClass, slope_amp: float, slope_period: float) -> VehicleParams:
    """Draw vehicle parameters in a fixed order.

    Order: mass, f_max, mu0, then the shared ranges in ``SHARED_RANGES``
    order, then year.  ``b_max`` is derived as ``1.5 * f_max``.
    """
    (m_lo, m_hi), (f_lo, f_hi), (mu_lo, mu_hi) = CLASS_RANGES[cls]
    mass = rng.uniform(m_lo, m_hi)
    f_max = rng.uniform(f_lo, f_hi)
    mu0 = rng.uniform(mu_lo, mu_hi)
    shared = {name: rng.uniform(lo, hi) for name, (lo, hi) in SHARED_RANGES.items()}
    year = rng.integers(*YEAR_RANGE)
    return VehicleParams(
        mass=mass,
        f_max=f_max,
        b_max=1.5 * f_max,
        mu0=mu0,
        slope_amp=slope_amp,
        slope_period=slope_period,
        year=year,
        **shared,
    )


def spectral_radius_bound(a: np.ndarray, iterations: int = 100) -> float:
    """Upper bound on the spectral radius: ``||A^k||_F ** (1/k)``.

    Computed by ``iterations`` normalised matrix power steps.  By Gelfand's
    formula this converges to the spectral radius from above, so rescaling
    by it can never leave the matrix unstable.
    """
    p = np.eye(a.shape[0])
    log_norm = 0.0
    for _ in range(iterations):
        p = a @ p
        n = float(np.linalg.norm(p))
        if n == 0.0:
            return 0.0
        log_norm += math.log(n)
        p /= n
    return math.exp(log_norm / iterations)


def sample_lti(rng: SplitMix64) -> LtiParams:
    """A, B, C, D entries uniform in [-1, 1], row-major, in that order."""

    def draw(r, c):
        return np.array(rng.uniform_array(r * c, -1.0, 1.0)).reshape(r, c)

    a = draw(4, 4)
    b = draw(4, 3)
    c = draw(3, 4)
    d = draw(3, 3)
    rho = spectral_radius_bound(a)
    if rho > 0.0:
        a = a * (0.95 / rho)
    return LtiParams(a, b, c, d, np.zeros(4))


def sample_stateless(rng: SplitMix64, linear: bool = False) -> StatelessParams:
    return StatelessParams(np.array(rng.uniform_array(9, -1.0, 1.0)).reshape(3, 3), linear)


def road_profile(fleet_seed: int) -> tuple[float, float]:
    rng = SplitMix64(mix_seed(fleet_seed, _ROAD_TAG))
    return rng.uniform(*SLOPE_AMP_RANGE), rng.uniform(*SLOPE_PERIOD_RANGE)


def spawn_fleet(fleet_seed: int, counts: dict, linear_stateless: bool = False) -> list[MachineSpec]:
    """Sample a fleet.

    Machines are laid out class by class in ``MachineClass`` declaration
    order and numbered 0..N-1.  Each machine draws from its own stream
    seeded with ``mix_seed(fleet_seed, machine_id)``; the road grade
    profile is shared by the whole fleet.
    """
    counts = {MachineClass(k): int(v) for k, v in counts.items()}
    for cls, n in counts.items():
        if n < 0:
            raise ValidationError(f"count for {cls.value} must be nonnegative, got {n}")
    slope_amp, slope_period = road_profile(fleet_seed)
    specs = []
    machine_id = 0
    for cls in MachineClass:
        for _ in range(counts.get(cls, 0)):
            seed = mix_seed(fleet_seed, machine_id)
            rng = SplitMix64(seed)
            if cls is MachineClass.LTI:
                params = sample_lti(rng)
            elif cls is MachineClass.STATELESS:
                params = sample_stateless(rng, linear_stateless)
            else:
                params = sample_vehicle(rng, cls, slope_amp, slope_period)
            specs.append(MachineSpec(machine_id, cls, params, seed))
            machine_id += 1
    return specs


# ---------------------------------------------------------------------------
# machines


def check_control(u) -> ControlDelta:
    u = ControlDelta(*(float(c) for c in u))
    for name, c in zip(ControlDelta._fields, u):
        if not (math.isfinite(c) and -DELTA_BOUND <= c <= DELTA_BOUND):
            raise ValidationError(f"control component {name}={c!r} outside [-0.2, 0.2]")
    return u


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


class Vehicle:
    def __init__(self, spec: MachineSpec):
        spec.validate()
        self.spec = spec
        self.p: VehicleParams = spec.params
        self.reset()

    def reset(self) -> None:
        self.state = VehicleState()

    def grip(self) -> float:
        p, s = self.p, self.state
        return p.mu0 * _clamp(1.0 - p.k_temp_sens * abs(s.tire_temp - p.t_opt) / p.t_opt, 0.5, 1.0)

    def step(self, u) -> MotionDelta:
        d_thr, d_brk, d_str = check_control(u)
        p, s = self.p, self.state

        s.a_thr = _clamp(s.a_thr + d_thr, 0.0, 1.0)
        s.a_brk = _clamp(s.a_brk + d_brk, 0.0, 1.0)
        s.a_str = _clamp(s.a_str + d_str, -1.0, 1.0)

        mu_eff = self.grip()
        moving = 1.0 if s.speed > 0.0 else 0.0
        f_drive = s.a_thr * p.f_max * max(0.0, 1.0 - s.speed / p.v_max)
        f_brake = s.a_brk * p.b_max * moving
        f_resist = p.c_drag * s.speed * s.speed + p.c_rr * p.mass * GRAVITY * moving

        a_lim = mu_eff * GRAVITY
        a_long = _clamp((f_drive - f_brake - f_resist) / p.mass, -a_lim, a_lim)
        s.speed = max(0.0, s.speed + a_long * DT)

        delta = p.delta_max * s.a_str
        r = s.speed * math.tan(delta) / p.wheelbase
        if abs(s.speed * r) > a_lim:
            r = math.copysign(1.0, r) * a_lim / max(s.speed, 1e-6)
        s.heading = s.heading + r * DT

        s.tire_temp = s.tire_temp + DT * (
            p.k_heat * (abs(a_long) + abs(s.speed * r)) * s.speed - p.k_cool * (s.tire_temp - AMBIENT_K)
        )

        dx = s.speed * math.cos(s.heading) * DT
        dy = s.speed * math.sin(s.heading) * DT
        s.arc_length = s.arc_length + s.speed * DT
        dz = p.slope_amp * math.sin(2.0 * math.pi * s.arc_length / p.slope_period) * s.speed * DT
        s.pos_x += dx
        s.pos_y += dy
        s.pos_z += dz
        return MotionDelta(dx, dy, dz)


class LtiMachine:
    def __init__(self, spec: MachineSpec):
        spec.validate()
        self.spec = spec
        self.p: LtiParams = spec.params
        self.reset()

    def reset(self) -> None:
        self.x = np.zeros(4)

    def step(self, u) -> MotionDelta:
        u = np.array(check_control(u))
        y = self.p.c_matrix @ self.x + self.p.d_matrix @ u
        self.x = self.p.a_matrix @ self.x + self.p.b_matrix @ u
        return MotionDelta(*(float(v) for v in y))


class StatelessMachine:
    def __init__(self, spec: MachineSpec):
        spec.validate()
        self.spec = spec
        self.p: StatelessParams = spec.params

    def reset(self) -> None:
        pass

    def step(self, u) -> MotionDelta:
        pre = self.p.weights @ np.array(check_control(u))
        y = 2.0 * pre if self.p.linear else 2.0 * np.tanh(pre)
        return MotionDelta(*(float(v) for v in y))


Machine = Union[Vehicle, LtiMachine, StatelessMachine]


def init_machine(spec: MachineSpec) -> Machine:
    """Build a machine at its canonical rest state."""
    if spec.machine_class is MachineClass.LTI:
        return LtiMachine(spec)
    if spec.machine_class is MachineClass.STATELESS:
        return StatelessMachine(spec)
    return Vehicle(spec)


def with_params(spec: MachineSpec, **changes) -> MachineSpec:
    """Copy of a vehicle spec with some parameters replaced."""
    return replace(spec, params=replace(spec.params, **changes))
