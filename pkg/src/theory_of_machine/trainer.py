"""Adam training and per-split evaluation.

Windows are visited machine by machine (ascending id) and, within a
machine, by start tick, so the stateless embedding accumulates in time
order.  It resets to zero at every machine boundary and at every epoch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset, window_starts
from .model import ModelDims, ModelParams, chain_loss, init_model
from .netcore import ParamBlock
from .serial import dump_json

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    seq_len: int = 100
    stride: int = 25
    embed_dim: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    use_embeddings: bool = True

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.seq_len < 1 or self.stride < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError(f"seq_len, stride, batch_size and embed_dim must be >= 1: {self}")
        if not (self.learning_rate > 0 and self.adam_eps > 0):
            raise ValueError("learning rate and adam_eps must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamBlock, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every array in ``params`` in place."""
    for name, g in params.grads.items():
        if g.shape != params.values[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, value has {params.values[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, g in params.grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params.values[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class WindowSet:
    """All windows of a split, machine-major then start-tick order."""

    pairs: np.ndarray
    next_inputs: np.ndarray
    next_outputs: np.ndarray
    machine_ids: np.ndarray
    starts: np.ndarray
    chain_start: np.ndarray

    def __len__(self) -> int:
        return self.pairs.shape[0]


def build_windows(dataset: Dataset, ids, n: int, stride: int) -> WindowSet:
    pairs, nin, nout, mids, starts = [], [], [], [], []
    for mid in sorted(ids):
        traj = dataset.trajectories[mid]
        st = window_starts(len(traj), n, stride)
        if st.size == 0:
            continue
        view = np.lib.stride_tricks.sliding_window_view(traj.stacked(), n, axis=0)  # (T-n+1, 6, n)
        pairs.append(np.ascontiguousarray(view[st].transpose(0, 2, 1)))
        nin.append(traj.inputs[st + n])
        nout.append(traj.outputs[st + n])
        mids.append(np.full(st.size, mid))
        starts.append(st)
    if not pairs:
        return WindowSet(np.zeros((0, n, 6)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, bool))
    mids = np.concatenate(mids)
    chain_start = np.ones(mids.size, dtype=bool)
    chain_start[1:] = mids[1:] != mids[:-1]
    return WindowSet(np.concatenate(pairs), np.concatenate(nin), np.concatenate(nout), mids, np.concatenate(starts), chain_start)


@dataclass
class SplitMetrics:
    split: str
    per_machine: dict[int, float]
    window_counts: dict[int, int]
    aggregate: float
    output_variance: float

    @property
    def normalized(self) -> float:
        """Aggregate MSE over the mean per-component variance of the targets."""
        return self.aggregate / self.output_variance if self.output_variance > 0 else math.inf

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "aggregate_mse": self.aggregate,
            "output_variance": self.output_variance,
            "normalized_mse": self.normalized,
            "machines": [
                {"machine_id": mid, "windows": self.window_counts[mid], "mse": self.per_machine[mid]}
                for mid in sorted(self.per_machine)
            ],
        }


@dataclass
class Metrics:
    epoch_train_mse: list[float] = field(default_factory=list)
    splits: dict[str, SplitMetrics] = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self, config: TrainConfig | None = None) -> dict:
        # wall time is left out so reports are byte-reproducible
        doc = {}
        if config is not None:
            doc["config"] = asdict(config)
        doc["epochs"] = [{"epoch": i + 1, "train_mse": v} for i, v in enumerate(self.epoch_train_mse)]
        doc["final"] = {k: v.to_json() for k, v in self.splits.items()}
        return doc


def write_metrics(metrics: Metrics, path, config: TrainConfig | None = None) -> None:
    Path(path).write_text(dump_json(metrics.to_json(config)))


def train(config: TrainConfig, dataset: Dataset, on_epoch=None) -> tuple[ModelParams, Metrics]:
    """Offline end-to-end training; fully deterministic given its inputs."""
    config.validate()
    train_ids = dataset.split_ids("train")
    if not train_ids:
        raise TrainingError("training split is empty")
    model = init_model(ModelDims(config.embed_dim), config.seed, config.use_embeddings)
    metrics = Metrics()
    if config.epochs == 0:
        return model, metrics
    ws = build_windows(dataset, train_ids, config.seq_len, config.stride)
    if len(ws) == 0:
        raise TrainingError(f"no training windows: trajectories are too short for seq_len={config.seq_len}")

    opt = AdamState()
    e = config.embed_dim
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        total = 0.0
        carry = np.zeros(e)
        for b0 in range(0, len(ws), config.batch_size):
            sl = slice(b0, min(b0 + config.batch_size, len(ws)))
            count = sl.stop - sl.start
            model.block.zero_grads()
            losses, m_new, _ = chain_loss(
                model, ws.pairs[sl], ws.next_inputs[sl], ws.next_outputs[sl], carry, ws.chain_start[sl],
                grad_scale=1.0 / count,
            )
            if not np.all(np.isfinite(losses)):
                k = int(np.flatnonzero(~np.isfinite(losses))[0]) + sl.start
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, machine {int(ws.machine_ids[k])}, window start {int(ws.starts[k])}"
                )
            adam_step(model.block, opt, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
            carry = m_new[-1]
            total += float(np.sum(losses))
        metrics.epoch_train_mse.append(total / len(ws))
        log.info("epoch %d/%d train mse %.6g", epoch + 1, config.epochs, metrics.epoch_train_mse[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, metrics.epoch_train_mse[-1])
    metrics.wall_time = time.perf_counter() - t0
    return model, metrics


def evaluate(model: ModelParams, dataset: Dataset, split: str, seq_len: int = 100, stride: int = 25) -> SplitMetrics:
    """Per-machine and window-weighted aggregate MSE; parameters untouched."""
    ids = dataset.split_ids(split)
    if not ids:
        raise TrainingError(f"{split} split is empty")
    ws = build_windows(dataset, ids, seq_len, stride)
    if len(ws) == 0:
        raise TrainingError(f"{split} split has no windows for seq_len={seq_len}")
    per_machine, counts = {}, {}
    all_losses = []
    for mid in sorted(set(ws.machine_ids.tolist())):
        idx = np.flatnonzero(ws.machine_ids == mid)
        losses, _, _ = chain_loss(
            model, ws.pairs[idx], ws.next_inputs[idx], ws.next_outputs[idx],
            np.zeros(model.dims.embed_dim), ws.chain_start[idx], backward=False,
        )
        per_machine[int(mid)] = float(np.mean(losses))
        counts[int(mid)] = int(idx.size)
        all_losses.append(losses)
    aggregate = float(np.mean(np.concatenate(all_losses)))
    variance = float(np.mean(np.var(ws.next_outputs, axis=0)))
    return SplitMetrics(split, per_machine, counts, aggregate, variance)
