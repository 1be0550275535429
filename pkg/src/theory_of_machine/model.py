"""The theory-of-machine network.

A GRU reads a window of ``(input, output)`` pairs and a projection turns
its final hidden state into the stateful embedding ``s``.  A per-machine
accumulator keeps the stateless embedding ``m = sig(beta_raw) * m_prev +
gamma * s``.  A single affine head maps ``[s, m, next_input]`` to the
predicted next output.

``m_prev`` is always treated as a constant: gradients never flow from one
window into the windows before it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netcore
from .netcore import GRU_NAMES, ParamBlock, ShapeError, affine_backward, affine_forward, sigmoid
from .rng import SplitMix64
from .serial import dump_json, parse_json_file

CHECKPOINT_VERSION = "TOMM-1"
INPUT_DIM = 3
OUTPUT_DIM = 3
PAIR_DIM = INPUT_DIM + OUTPUT_DIM
BETA_INIT = 2.0
GAMMA_INIT = 0.1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    embed_dim: int = 16
    input_dim: int = INPUT_DIM
    output_dim: int = OUTPUT_DIM

    def __post_init__(self):
        if min(self.embed_dim, self.input_dim, self.output_dim) <= 0:
            raise ValueError(f"model dimensions must be positive: {self}")

    @property
    def pair_dim(self) -> int:
        return self.input_dim + self.output_dim

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim

    @property
    def head_in(self) -> int:
        return 2 * self.embed_dim + self.input_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        e, d = self.embed_dim, self.pair_dim
        out = {}
        for gate in ("z", "r", "h"):
            out[f"W_{gate}"] = (e, d)
            out[f"U_{gate}"] = (e, e)
            out[f"b_{gate}"] = (e,)
        out.update(
            proj_W=(e, e),
            proj_b=(e,),
            beta_raw=(e,),
            gamma=(e,),
            theory_w=(self.output_dim, self.head_in),
            theory_b=(self.output_dim,),
        )
        return out


class ModelParams:
    """Parameter block plus the metadata needed to rebuild it.

    With ``use_embeddings=False`` the head sees zeros in place of ``s`` and
    ``m``; this is the baseline that only knows the next input.
    """

    def __init__(self, dims: ModelDims, block: ParamBlock, seed: int, use_embeddings: bool = True):
        self.dims = dims
        self.block = block
        self.seed = seed
        self.use_embeddings = use_embeddings

    def __getitem__(self, name):
        return self.block.values[name]

    @property
    def grads(self):
        return self.block.grads

    def decay(self) -> np.ndarray:
        return sigmoid(self.block["beta_raw"])

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, self.block.copy(), self.seed, self.use_embeddings)

    def equal(self, other: "ModelParams") -> bool:
        return (
            self.dims == other.dims
            and self.seed == other.seed
            and self.use_embeddings == other.use_embeddings
            and self.block.equal(other.block)
        )


def init_model(dims: ModelDims, seed: int, use_embeddings: bool = True) -> ModelParams:
    """Deterministic init: GRU, projection, then head, drawn from one stream."""
    rng = SplitMix64(seed)
    e = dims.embed_dim
    block = ParamBlock(netcore.gru_init(rng, dims.pair_dim, e))
    block.add("proj_W", netcore.init_uniform(rng, (e, e), e))
    block.add("proj_b", netcore.init_uniform(rng, (e,), e))
    block.add("beta_raw", np.full(e, BETA_INIT))
    block.add("gamma", np.full(e, GAMMA_INIT))
    block.add("theory_w", netcore.init_uniform(rng, (dims.output_dim, dims.head_in), dims.head_in))
    block.add("theory_b", netcore.init_uniform(rng, (dims.output_dim,), dims.head_in))
    return ModelParams(dims, block, seed, use_embeddings)


# ---------------------------------------------------------------------------
# forward pieces


def _pairs_array(window) -> np.ndarray:
    return window.pairs if isinstance(window.pairs, np.ndarray) else np.asarray(window.pairs, dtype=np.float64)


def encode(model: ModelParams, pairs: np.ndarray):
    """Encode windows of shape ``(n, 6)`` or ``(B, n, 6)``; return ``(s, state)``.

    ``h_0 = 0``, the GRU consumes the pairs in tick order and ``s`` is the
    projection of the final hidden state.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.shape[-1] != model.dims.pair_dim or pairs.ndim not in (2, 3):
        raise ShapeError(f"window pairs must have shape (n, {model.dims.pair_dim}) or (B, n, ...), got {pairs.shape}")
    h, cache = netcore.gru_sequence(model.block, pairs)
    s = affine_forward(model["proj_W"], model["proj_b"], h)
    return s, (cache, h)


def encode_backward(model: ModelParams, state, ds: np.ndarray) -> None:
    cache, h_final = state
    g = model.grads
    dh = affine_backward(model["proj_W"], h_final, ds, g["proj_W"], g["proj_b"])
    netcore.gru_sequence_backward(model.block, cache, dh)


def encode_window(model: ModelParams, window, n: int | None = None) -> np.ndarray:
    """Stateful embedding of one window."""
    pairs = _pairs_array(window)
    if n is not None and pairs.shape[0] != n:
        raise ShapeError(f"window has {pairs.shape[0]} pairs, expected {n}")
    return encode(model, pairs)[0]


def update_stateless(model: ModelParams, m_prev: np.ndarray, s: np.ndarray) -> np.ndarray:
    e = model.dims.embed_dim
    if np.shape(m_prev)[-1] != e or np.shape(s)[-1] != e:
        raise ShapeError(f"accumulator shapes must end in {e}: m_prev{np.shape(m_prev)} s{np.shape(s)}")
    return model.decay() * m_prev + model["gamma"] * s


def predict_next(model: ModelParams, s: np.ndarray, m: np.ndarray, next_input) -> np.ndarray:
    u = np.asarray(next_input, dtype=np.float64)
    if not model.use_embeddings:
        s, m = np.zeros_like(s), np.zeros_like(m)
    return affine_forward(model["theory_w"], model["theory_b"], np.concatenate([s, m, u], axis=-1))


# ---------------------------------------------------------------------------
# losses


def chain_loss(
    model: ModelParams,
    pairs: np.ndarray,
    next_inputs: np.ndarray,
    next_outputs: np.ndarray,
    m_start: np.ndarray,
    starts_chain: np.ndarray,
    backward: bool = True,
    grad_scale: float = 1.0,
):
    """Loss over a run of consecutive windows, ``B`` at a time.

    Window ``k`` uses ``m_prev = m_new[k-1]``, or zeros when
    ``starts_chain[k]`` is set, or ``m_start`` for ``k = 0`` otherwise.
    Per-window gradients times ``grad_scale`` are accumulated in window
    order into ``model.grads``.

    Returns ``(losses, m_new, s)`` with one row per window.
    """
    B = pairs.shape[0]
    e = model.dims.embed_dim
    use_emb = model.use_embeddings
    if use_emb:
        s, enc_state = encode(model, pairs)
    else:
        s, enc_state = np.zeros((B, e)), None

    decay = model.decay()
    gamma = model["gamma"]
    m_prev = np.empty((B, e))
    m_new = np.empty((B, e))
    carry = np.asarray(m_start, dtype=np.float64)
    for k in range(B):
        prev = np.zeros(e) if starts_chain[k] else carry
        m_prev[k] = prev
        carry = decay * prev + gamma * s[k]
        m_new[k] = carry

    if use_emb:
        head_in = np.concatenate([s, m_new, next_inputs], axis=1)
    else:
        head_in = np.concatenate([np.zeros((B, 2 * e)), next_inputs], axis=1)
    pred = affine_forward(model["theory_w"], model["theory_b"], head_in)
    diff = pred - next_outputs
    losses = np.mean(diff * diff, axis=1)

    if backward:
        g = model.grads
        dpred = grad_scale * netcore.mse_backward(pred, next_outputs)
        d_in = affine_backward(model["theory_w"], head_in, dpred, g["theory_w"], g["theory_b"])
        if use_emb:
            ds = d_in[:, :e].copy()
            dm = d_in[:, e : 2 * e]
            g["gamma"] += (dm * s).sum(axis=0)
            g["beta_raw"] += (dm * m_prev).sum(axis=0) * decay * (1.0 - decay)
            ds += dm * gamma
            encode_backward(model, enc_state, ds)
    return losses, m_new, s


def window_loss(model: ModelParams, window, m_prev: np.ndarray):
    """MSE of the next-output prediction for one window.

    Accumulates gradients into ``model.grads`` and returns ``(loss, m_new)``.
    """
    pairs = _pairs_array(window)[None]
    losses, m_new, _ = chain_loss(
        model,
        pairs,
        np.asarray(window.next_input, dtype=np.float64)[None],
        np.asarray(window.next_output, dtype=np.float64)[None],
        np.asarray(m_prev, dtype=np.float64),
        np.array([False]),
    )
    return float(losses[0]), m_new[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: ModelParams, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "dims": {
            "embed_dim": model.dims.embed_dim,
            "input_dim": model.dims.input_dim,
            "output_dim": model.dims.output_dim,
        },
        "seed": model.seed,
        "use_embeddings": model.use_embeddings,
        "params": {
            name: {"shape": list(v.shape), "data": [float(x) for x in v.reshape(-1)]}
            for name, v in model.block.values.items()
        },
    }
    Path(path).write_text(dump_json(doc))


def load_model(path) -> ModelParams:
    path = Path(path)
    doc = parse_json_file(path, CheckpointError)
    try:
        version = doc["version"]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
        dims = ModelDims(**doc["dims"])
        params = doc["params"]
        seed = int(doc["seed"])
        use_embeddings = bool(doc.get("use_embeddings", True))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc

    expected = dims.shapes()
    if set(params) != set(expected):
        raise CheckpointError(f"{path}: parameter names {sorted(params)} do not match dims")
    block = ParamBlock()
    for name in list(GRU_NAMES) + ["proj_W", "proj_b", "beta_raw", "gamma", "theory_w", "theory_b"]:
        entry = params[name]
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if shape != expected[name] or data.size != math.prod(shape):
            raise CheckpointError(
                f"{path}: parameter {name} has shape {shape} with {data.size} values, dims require {expected[name]}"
            )
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"{path}: parameter {name} has non-finite values")
        block.add(name, data.reshape(shape))
    return ModelParams(dims, block, seed, use_embeddings)


def model_digest(model: ModelParams) -> str:
    """Stable content hash of the parameters (for side-effect checks)."""
    h = hashlib.sha256()
    for name, v in model.block.values.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "ModelDims",
    "ModelParams",
    "chain_loss",
    "encode",
    "encode_window",
    "init_model",
    "load_model",
    "model_digest",
    "predict_next",
    "save_model",
    "update_stateless",
    "window_loss",
]
