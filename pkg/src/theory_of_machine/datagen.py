"""Excite machines, roll out I/O trajectories, window them, split, persist.

On disk a dataset is a directory holding ``manifest.json`` and one
``traj_<machine_id>.jsonl`` per machine with one record per tick::

    {"t":0,"i":[f,f,f],"o":[f,f,f]}

Floats are written with 17 significant digits so reading is bit-exact.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .machines import (
    DELTA_BOUND,
    ControlDelta,
    LtiParams,
    MachineClass,
    MachineSpec,
    MotionDelta,
    StatelessParams,
    VehicleParams,
    init_machine,
    spawn_fleet,
)
from .rng import SplitMix64, mix_seed
from .serial import dump_json, fmt_float, parse_json_file

DATASET_VERSION = "TOMD-1"
EXCITE_TAG = 0xE5C17A
MASS_BUCKETS = ((600.0, 1000.0), (1000.0, 1500.0), (1500.0, 2000.0), (2000.0, 2500.0))


class DatasetError(ValueError):
    pass


class IOPair(NamedTuple):
    input: ControlDelta
    output: MotionDelta
    t: int


@dataclass(frozen=True)
class ExcitationConfig:
    alpha: float = 0.3
    sigma: float = 0.05
    throttle_bias: float = 0.05

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma!r}")


@dataclass(eq=False)
class Trajectory:
    """Inputs and outputs as ``(T, 3)`` arrays; tick ``k`` is row ``k``."""

    machine_id: int
    inputs: np.ndarray
    outputs: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def pairs(self) -> list[IOPair]:
        return [
            IOPair(ControlDelta(*map(float, i)), MotionDelta(*map(float, o)), t)
            for t, (i, o) in enumerate(zip(self.inputs, self.outputs))
        ]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.inputs, self.outputs], axis=1)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.machine_id == other.machine_id
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.outputs, other.outputs)
        )


@dataclass(eq=False)
class Window:
    machine_id: int
    start: int
    pairs: np.ndarray  # (n, 6): input then output per tick
    next_input: np.ndarray
    next_output: np.ndarray

    @property
    def end(self) -> int:
        return self.start + self.pairs.shape[0] - 1


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def ids(self, split: str) -> tuple[int, ...]:
        if split == "train":
            return self.train_ids
        if split == "test":
            return self.test_ids
        raise ValueError(f"unknown split {split!r}; expected 'train' or 'test'")


@dataclass
class DatasetManifest:
    specs: list[MachineSpec]
    split: SplitSpec
    excitation: ExcitationConfig
    ticks: int
    fleet_seed: int
    version: str = DATASET_VERSION
    files: dict[int, str] = field(default_factory=dict)

    def spec(self, machine_id: int) -> MachineSpec:
        for s in self.specs:
            if s.machine_id == machine_id:
                return s
        raise KeyError(machine_id)


@dataclass
class Dataset:
    manifest: DatasetManifest
    trajectories: dict[int, Trajectory]

    def split_ids(self, split: str) -> tuple[int, ...]:
        return self.manifest.split.ids(split)


# ---------------------------------------------------------------------------
# excitation and rollout


def excite(seed: int, length: int, alpha: float, sigma: float, throttle_bias: float = 0.05) -> list[ControlDelta]:
    """Smooth pseudo-random control deltas.

    Per channel ``u_0 = 0`` and ``u_{k+1} = (1 - alpha) u_k + sigma e_k``
    with ``e_k`` uniform in [-1, 1]; the emitted delta is ``u_k`` (plus
    ``throttle_bias`` on the throttle channel) clamped to [-0.2, 0.2].
    Draw order per tick: throttle, brake, steer.
    """
    if length < 1:
        raise ValueError(f"excitation length must be >= 1, got {length}")
    ExcitationConfig(alpha, sigma, throttle_bias).validate()
    rng = SplitMix64(seed)
    bias = (throttle_bias, 0.0, 0.0)
    u = [0.0, 0.0, 0.0]
    out = []
    for k in range(length):
        out.append(ControlDelta(*(min(DELTA_BOUND, max(-DELTA_BOUND, u[c] + bias[c])) for c in range(3))))
        if k + 1 < length:
            u = [(1.0 - alpha) * u[c] + sigma * (2.0 * rng.random() - 1.0) for c in range(3)]
    return out


def roll(machine, controls) -> Trajectory:
    """Step a freshly initialised machine through ``controls``."""
    inputs = np.asarray(controls, dtype=np.float64).reshape(-1, 3)
    outputs = np.array([machine.step(u) for u in controls], dtype=np.float64).reshape(-1, 3)
    return Trajectory(machine.spec.machine_id, inputs, outputs)


def excitation_seed(fleet_seed: int, machine_id: int) -> int:
    return mix_seed(fleet_seed, machine_id, EXCITE_TAG)


def rollout_spec(spec: MachineSpec, fleet_seed: int, ticks: int, excitation: ExcitationConfig) -> Trajectory:
    controls = excite(
        excitation_seed(fleet_seed, spec.machine_id), ticks, excitation.alpha, excitation.sigma, excitation.throttle_bias
    )
    return roll(init_machine(spec), controls)


# ---------------------------------------------------------------------------
# windows and splits


def make_windows(traj: Trajectory, n: int, stride: int) -> list[Window]:
    """Windows starting at 0, stride, 2*stride, ... that leave room for a target."""
    if n < 1 or stride < 1:
        raise ValueError(f"window length and stride must be >= 1, got n={n}, stride={stride}")
    stacked = traj.stacked()
    out = []
    i = 0
    while i + n <= len(traj) - 1:
        out.append(Window(traj.machine_id, i, stacked[i : i + n], traj.inputs[i + n], traj.outputs[i + n]))
        i += stride
    return out


def window_starts(length: int, n: int, stride: int) -> np.ndarray:
    if length - 1 - n < 0:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, length - n, stride, dtype=np.int64)


def split_fleet(specs: list[MachineSpec], n_train: int, n_test: int, seed: int) -> SplitSpec:
    """Stratified split by machine.

    Test slots go to classes in proportion to their size (largest remainder,
    ties broken by class order), with every class of two or more machines
    kept on both sides.  Members are then drawn by a seeded shuffle per class.
    """
    total = len(specs)
    if n_train < 0 or n_test < 0 or n_train + n_test != total:
        raise ValueError(f"n_train + n_test must equal the fleet size {total}, got {n_train} + {n_test}")
    groups: dict[MachineClass, list[int]] = {}
    for s in specs:
        groups.setdefault(s.machine_class, []).append(s.machine_id)
    classes = [c for c in MachineClass if c in groups]

    quota, lo, hi, alloc = {}, {}, {}, {}
    for c in classes:
        size = len(groups[c])
        quota[c] = n_test * size / total if total else 0.0
        # stratify only when both sides are requested to be nonempty
        lo[c] = 1 if size >= 2 and n_test > 0 else 0
        hi[c] = size - 1 if size >= 2 and n_train > 0 else size
        alloc[c] = min(max(int(quota[c]), lo[c]), hi[c])
    while sum(alloc.values()) < n_test:
        open_ = [c for c in classes if alloc[c] < hi[c]]
        if not open_:
            raise ValueError(f"cannot place {n_test} test machines while keeping every class in the training split")
        best = max(open_, key=lambda c: (quota[c] - alloc[c], -classes.index(c)))
        alloc[best] += 1
    while sum(alloc.values()) > n_test:
        open_ = [c for c in classes if alloc[c] > lo[c]]
        if not open_:
            raise ValueError(f"{n_test} test machines is too few to cover every class with two or more machines")
        worst = min(open_, key=lambda c: (quota[c] - alloc[c], classes.index(c)))
        alloc[worst] -= 1

    train, test = [], []
    for idx, c in enumerate(classes):
        members = sorted(groups[c])
        rng = SplitMix64(mix_seed(seed, idx))
        for i in range(len(members) - 1, 0, -1):
            j = rng.randbelow(i + 1)
            members[i], members[j] = members[j], members[i]
        test.extend(members[: alloc[c]])
        train.extend(members[alloc[c] :])
    return SplitSpec(tuple(sorted(train)), tuple(sorted(test)))


def generate_dataset(
    fleet_seed: int,
    counts: dict,
    ticks: int,
    n_test: int,
    excitation: ExcitationConfig = ExcitationConfig(),
    split_seed: int | None = None,
    linear_stateless: bool = False,
    threads: int = 1,
    specs: list[MachineSpec] | None = None,
) -> Dataset:
    """Spawn (or take) a fleet, roll every machine and split it."""
    excitation.validate()
    if specs is None:
        specs = spawn_fleet(fleet_seed, counts, linear_stateless=linear_stateless)
    if not specs:
        raise ValueError("cannot build a dataset from an empty fleet")
    split = split_fleet(specs, len(specs) - n_test, n_test, mix_seed(fleet_seed, 0x5B117) if split_seed is None else split_seed)

    def job(spec):
        return rollout_spec(spec, fleet_seed, ticks, excitation)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        trajs = list(pool.map(job, specs))
    manifest = DatasetManifest(specs, split, excitation, ticks, fleet_seed)
    return Dataset(manifest, {t.machine_id: t for t in trajs})


# ---------------------------------------------------------------------------
# metadata tags


def mass_bucket(mass: float) -> str:
    for lo, hi in MASS_BUCKETS:
        if lo <= mass < hi or (hi == MASS_BUCKETS[-1][1] and mass == hi):
            return f"{int(lo)}-{int(hi)}"
    return "other"


def year_bucket(year: int) -> str:
    lo = 1960 + 20 * min((year - 1960) // 20, 2)
    return f"{lo}-{lo + 20}"


def spec_tags(spec: MachineSpec) -> dict:
    p = spec.params
    if isinstance(p, VehicleParams):
        return {"class": spec.machine_class.value, "mass": p.mass, "year": p.year,
                "mass_bucket": mass_bucket(p.mass), "year_bucket": year_bucket(p.year)}
    return {"class": spec.machine_class.value, "mass": None, "year": None, "mass_bucket": "n/a", "year_bucket": "n/a"}


# ---------------------------------------------------------------------------
# persistence


def _params_to_json(p) -> dict:
    if isinstance(p, VehicleParams):
        return {"kind": "vehicle", **{k: (float(v) if k != "year" else int(v)) for k, v in asdict(p).items()}}
    if isinstance(p, LtiParams):
        return {
            "kind": "lti",
            **{k: np.asarray(getattr(p, k), dtype=float).tolist() for k in ("a_matrix", "b_matrix", "c_matrix", "d_matrix", "state")},
        }
    return {"kind": "stateless", "weights": np.asarray(p.weights, dtype=float).tolist(), "linear": bool(p.linear)}


def _params_from_json(d: dict):
    kind = d["kind"]
    body = {k: v for k, v in d.items() if k != "kind"}
    if kind == "vehicle":
        body = {k: (int(v) if k == "year" else float(v)) for k, v in body.items()}
        return VehicleParams(**body)
    if kind == "lti":
        return LtiParams(**{k: np.asarray(v, dtype=np.float64) for k, v in body.items()})
    if kind == "stateless":
        return StatelessParams(np.asarray(body["weights"], dtype=np.float64), bool(body["linear"]))
    raise ValueError(f"unknown machine parameter kind {kind!r}")


def traj_filename(machine_id: int) -> str:
    return f"traj_{machine_id}.jsonl"


def manifest_to_json(manifest: DatasetManifest) -> dict:
    return {
        "version": manifest.version,
        "fleet_seed": manifest.fleet_seed,
        "ticks": manifest.ticks,
        "excitation": asdict(manifest.excitation),
        "split": {"train": list(manifest.split.train_ids), "test": list(manifest.split.test_ids)},
        "machines": [
            {
                "machine_id": s.machine_id,
                "class": s.machine_class.value,
                "seed": s.seed,
                "tags": spec_tags(s),
                "file": manifest.files.get(s.machine_id, traj_filename(s.machine_id)),
                "params": _params_to_json(s.params),
            }
            for s in manifest.specs
        ],
    }


def write_trajectory(traj: Trajectory, path: Path) -> None:
    lines = []
    for t in range(len(traj)):
        i = ",".join(fmt_float(v) for v in traj.inputs[t])
        o = ",".join(fmt_float(v) for v in traj.outputs[t])
        lines.append(f'{{"t":{t},"i":[{i}],"o":[{o}]}}\n')
    path.write_text("".join(lines))


def write_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest
    manifest.files = {s.machine_id: traj_filename(s.machine_id) for s in manifest.specs}
    for s in manifest.specs:
        write_trajectory(dataset.trajectories[s.machine_id], directory / manifest.files[s.machine_id])
    (directory / "manifest.json").write_text(dump_json(manifest_to_json(manifest)))
    return directory


def read_trajectory(path: Path, machine_id: int) -> Trajectory:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DatasetError(f"{path}: trajectory file not found") from None
    inputs, outputs = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            rec = json.loads(line)
            t, i, o = rec["t"], rec["i"], rec["o"]
            if t != lineno - 1:
                raise ValueError(f"tick {t} out of sequence")
            if len(i) != 3 or len(o) != 3:
                raise ValueError("input and output must have three components")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: corrupt trajectory record ({exc})") from exc
        inputs.append(i)
        outputs.append(o)
    return Trajectory(
        machine_id,
        np.asarray(inputs, dtype=np.float64).reshape(-1, 3),
        np.asarray(outputs, dtype=np.float64).reshape(-1, 3),
    )


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: dataset directory not found")
    mpath = directory / "manifest.json"
    doc = parse_json_file(mpath, DatasetError)
    version = doc.get("version") if isinstance(doc, dict) else None
    if version != DATASET_VERSION:
        raise DatasetError(f"{mpath}: unsupported dataset version {version!r}")
    try:
        specs, files = [], {}
        for m in doc["machines"]:
            spec = MachineSpec(int(m["machine_id"]), MachineClass(m["class"]), _params_from_json(m["params"]), int(m["seed"]))
            spec.validate()
            specs.append(spec)
            files[spec.machine_id] = m["file"]
        manifest = DatasetManifest(
            specs=specs,
            split=SplitSpec(tuple(doc["split"]["train"]), tuple(doc["split"]["test"])),
            excitation=ExcitationConfig(**doc["excitation"]),
            ticks=int(doc["ticks"]),
            fleet_seed=int(doc["fleet_seed"]),
            version=version,
            files=files,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{mpath}: malformed manifest ({exc})") from exc
    trajs = {mid: read_trajectory(directory / name, mid) for mid, name in files.items()}
    return Dataset(manifest, trajs)
