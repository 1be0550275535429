"""Run configuration.

The config file is flat ``section.key = value`` text; ``#`` starts a
comment and blank lines are ignored.  Recognised keys::

    run.seed                   master seed (int)
    run.out                    output directory
    run.threads                worker cap for rollouts
    fleet.SUV ... fleet.TRACK  machines per vehicle class
    data.ticks                 ticks per machine
    data.n_test                machines held out for testing
    data.alpha                 excitation smoothing, (0, 1]
    data.sigma                 excitation noise scale
    data.throttle_bias         constant added to the throttle delta
    train.epochs | train.seq_len | train.stride | train.embed_dim
    train.lr | train.batch_size
    analysis.samples_per_machine

Unknown sections or keys are rejected.  Command-line flags override file
values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .datagen import ExcitationConfig
from .machines import VEHICLE_CLASSES
from .rng import mix_seed
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2024
    out: str = "runs/default"
    threads: int = 1
    counts: dict = field(default_factory=lambda: {"SUV": 4, "TRACK": 4, "SPORT": 4, "GT": 4})
    ticks: int = 4000
    n_test: int = 4
    excitation: ExcitationConfig = ExcitationConfig()
    train: TrainConfig = TrainConfig()
    samples_per_machine: int = 8

    # component seeds, all derived from the master seed
    @property
    def fleet_seed(self) -> int:
        return mix_seed(self.seed, 0xF1EE7)

    @property
    def model_seed(self) -> int:
        return mix_seed(self.seed, 0x70DE1)

    @property
    def embed_seed(self) -> int:
        return mix_seed(self.seed, 0xE3BED)

    def train_config(self, **changes) -> TrainConfig:
        return replace(self.train, seed=self.model_seed, **changes)


def _int(v: str) -> int:
    return int(v, 0)


_KEYS = {
    "run.seed": ("seed", _int),
    "run.out": ("out", str),
    "run.threads": ("threads", _int),
    "data.ticks": ("ticks", _int),
    "data.n_test": ("n_test", _int),
    "data.alpha": ("excitation.alpha", float),
    "data.sigma": ("excitation.sigma", float),
    "data.throttle_bias": ("excitation.throttle_bias", float),
    "train.epochs": ("train.epochs", _int),
    "train.seq_len": ("train.seq_len", _int),
    "train.stride": ("train.stride", _int),
    "train.embed_dim": ("train.embed_dim", _int),
    "train.lr": ("train.learning_rate", float),
    "train.batch_size": ("train.batch_size", _int),
    "analysis.samples_per_machine": ("samples_per_machine", _int),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse into a flat ``{dotted_key: typed_value}`` mapping."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("fleet."):
            cls = key.split(".", 1)[1]
            if cls not in {c.value for c in VEHICLE_CLASSES}:
                raise ConfigError(f"{source}:{lineno}: unknown fleet class {cls!r}")
            conv = _int
        elif key in _KEYS:
            conv = _KEYS[key][1]
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = conv(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def apply_overrides(cfg: RunConfig, values: dict[str, object]) -> RunConfig:
    top, exc, trn = {}, {}, {}
    counts = dict(cfg.counts)
    fleet_given = False
    for key, value in values.items():
        if key.startswith("fleet."):
            if not fleet_given:
                counts, fleet_given = {}, True
            counts[key.split(".", 1)[1]] = value
            continue
        target = _KEYS[key][0]
        if target.startswith("excitation."):
            exc[target.split(".", 1)[1]] = value
        elif target.startswith("train."):
            trn[target.split(".", 1)[1]] = value
        else:
            top[target] = value
    cfg = replace(cfg, counts=counts, excitation=replace(cfg.excitation, **exc), train=replace(cfg.train, **trn), **top)
    cfg.excitation.validate()
    cfg.train.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return apply_overrides(RunConfig(), parse_config_text(text, str(path)))


DEFAULT_CONFIG_TEXT = """\
# default desk-scale run: 16 vehicles x 4000 ticks, 12/4 split
run.seed = 2024
run.out = runs/default
fleet.SUV = 4
fleet.TRACK = 4
fleet.SPORT = 4
fleet.GT = 4
data.ticks = 4000
data.n_test = 4
data.alpha = 0.3
data.sigma = 0.05
data.throttle_bias = 0.05
train.epochs = 30
train.seq_len = 100
train.stride = 25
train.embed_dim = 16
train.lr = 0.001
train.batch_size = 32
analysis.samples_per_machine = 8
"""
