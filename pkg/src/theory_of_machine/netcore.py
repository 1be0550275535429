"""Small f64 autograd-free numeric core.

Each primitive has a forward function and an explicit backward function.
Backward functions *accumulate* parameter gradients into a ``ParamBlock``
and return the gradient with respect to their non-parameter inputs.

Inputs may carry a leading batch axis: ``x`` of shape ``(c,)`` or ``(B, c)``.
Parameter gradients are summed over the batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .rng import SplitMix64

GRU_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


class ShapeError(ValueError):
    pass


class ParamBlock:
    """Named f64 arrays with gradient buffers of identical shape."""

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, v in (values or {}).items():
            self.add(name, v)

    def add(self, name: str, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamBlock":
        return ParamBlock({k: v.copy() for k, v in self.values.items()})

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def equal(self, other: "ParamBlock") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.values[k], other.values[k]) for k in self.values
        )


def init_uniform(rng: SplitMix64, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], filled row-major."""
    bound = 1.0 / math.sqrt(fan_in)
    n = int(np.prod(shape))
    return np.array([rng.uniform(-bound, bound) for _ in range(n)], dtype=np.float64).reshape(shape)


def sigmoid(x):
    """Logistic function via ``0.5 * (1 + tanh(x / 2))``; never overflows."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _check_affine(W, b, x):
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine shape mismatch: W{W.shape} b{b.shape} x{x.shape}")


def affine_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``y = W x + b`` (batched over leading axes of ``x``)."""
    _check_affine(W, b, x)
    return x @ W.T + b


def affine_backward(W: np.ndarray, x: np.ndarray, g: np.ndarray, gW: np.ndarray, gb: np.ndarray) -> np.ndarray:
    """Accumulate ``dW += g x^T`` and ``db += g``; return ``W^T g``."""
    if g.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine backward: upstream {g.shape} does not match W{W.shape}")
    if g.ndim == 1:
        gW += np.outer(g, x)
        gb += g
    else:
        gW += g.T @ x
        gb += g.sum(axis=0)
    return g @ W


@dataclass
class GruCache:
    h: np.ndarray
    x: np.ndarray
    z: np.ndarray
    r: np.ndarray
    hh: np.ndarray


def gru_init(rng: SplitMix64, input_dim: int, hidden_dim: int) -> dict[str, np.ndarray]:
    """Weights in GRU_NAMES order; each W/U is drawn with its own fan-in."""
    out = {}
    for gate in ("z", "r", "h"):
        out[f"W_{gate}"] = init_uniform(rng, (hidden_dim, input_dim), input_dim)
        out[f"U_{gate}"] = init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim)
        out[f"b_{gate}"] = init_uniform(rng, (hidden_dim,), hidden_dim)
    return out


def gru_step(cell: ParamBlock, h: np.ndarray, x: np.ndarray, prefix: str = "") -> tuple[np.ndarray, GruCache]:
    """One gated recurrent update.

    z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
    hh = tanh(W_h x + U_h (r*h) + b_h), h' = (1-z)*h + z*hh.
    """
    v = cell.values
    W_z, U_z = v[prefix + "W_z"], v[prefix + "U_z"]
    if x.shape[-1] != W_z.shape[1] or h.shape[-1] != U_z.shape[0] or h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"gru_step shape mismatch: h{h.shape} x{x.shape} W_z{W_z.shape} U_z{U_z.shape}")
    z = sigmoid(x @ W_z.T + h @ U_z.T + v[prefix + "b_z"])
    r = sigmoid(x @ v[prefix + "W_r"].T + h @ v[prefix + "U_r"].T + v[prefix + "b_r"])
    hh = np.tanh(x @ v[prefix + "W_h"].T + (r * h) @ v[prefix + "U_h"].T + v[prefix + "b_h"])
    h_new = (1.0 - z) * h + z * hh
    return h_new, GruCache(h, x, z, r, hh)


def gru_backward(cell: ParamBlock, cache: GruCache, dh_new: np.ndarray, prefix: str = "") -> tuple[np.ndarray, np.ndarray]:
    """Accumulate all nine parameter gradients; return ``(dh, dx)``."""
    v, g = cell.values, cell.grads
    h, x, z, r, hh = cache.h, cache.x, cache.z, cache.r, cache.hh

    dz = dh_new * (hh - h)
    dhh = dh_new * z
    dh = dh_new * (1.0 - z)

    da_h = dhh * (1.0 - hh * hh)
    rh = r * h
    d_rh = affine_backward(v[prefix + "U_h"], rh, da_h, g[prefix + "U_h"], np.zeros_like(v[prefix + "b_h"]))
    dx = affine_backward(v[prefix + "W_h"], x, da_h, g[prefix + "W_h"], g[prefix + "b_h"])
    dr = d_rh * h
    dh = dh + d_rh * r

    da_r = dr * r * (1.0 - r)
    dh = dh + affine_backward(v[prefix + "U_r"], h, da_r, g[prefix + "U_r"], np.zeros_like(v[prefix + "b_r"]))
    dx = dx + affine_backward(v[prefix + "W_r"], x, da_r, g[prefix + "W_r"], g[prefix + "b_r"])

    da_z = dz * z * (1.0 - z)
    dh = dh + affine_backward(v[prefix + "U_z"], h, da_z, g[prefix + "U_z"], np.zeros_like(v[prefix + "b_z"]))
    dx = dx + affine_backward(v[prefix + "W_z"], x, da_z, g[prefix + "W_z"], g[prefix + "b_z"])
    return dh, dx


@dataclass
class GruSequenceCache:
    xs: np.ndarray
    hs: np.ndarray  # (..., n + 1, e), hs[..., 0, :] is h0
    z: np.ndarray
    r: np.ndarray
    hh: np.ndarray


def gru_sequence(cell: ParamBlock, xs: np.ndarray, h0: np.ndarray | None = None, prefix: str = ""):
    """Run ``gru_step`` over axis -2 of ``xs`` in one pass.

    Input projections for every tick are computed by a single matmul; the
    result equals iterating ``gru_step`` up to rounding.  Returns
    ``(h_final, cache)``.
    """
    v = cell.values
    e = v[prefix + "U_z"].shape[0]
    if xs.shape[-1] != v[prefix + "W_z"].shape[1]:
        raise ShapeError(f"gru_sequence: inputs {xs.shape} do not match W_z{v[prefix + 'W_z'].shape}")
    lead, n = xs.shape[:-2], xs.shape[-2]
    Wx = np.concatenate([v[prefix + "W_z"], v[prefix + "W_r"], v[prefix + "W_h"]])
    bx = np.concatenate([v[prefix + "b_z"], v[prefix + "b_r"], v[prefix + "b_h"]])
    U_zr = np.concatenate([v[prefix + "U_z"], v[prefix + "U_r"]])
    U_h = v[prefix + "U_h"]
    xp = xs @ Wx.T + bx
    hs = np.empty(lead + (n + 1, e))
    z = np.empty(lead + (n, e))
    r = np.empty(lead + (n, e))
    hh = np.empty(lead + (n, e))
    h = np.zeros(lead + (e,)) if h0 is None else h0
    hs[..., 0, :] = h
    for t in range(n):
        a = xp[..., t, :]
        gz = sigmoid(a[..., : 2 * e] + h @ U_zr.T)
        zt, rt = gz[..., :e], gz[..., e:]
        ht = np.tanh(a[..., 2 * e :] + (rt * h) @ U_h.T)
        h = h + zt * (ht - h)
        z[..., t, :], r[..., t, :], hh[..., t, :] = zt, rt, ht
        hs[..., t + 1, :] = h
    return h, GruSequenceCache(xs, hs, z, r, hh)


def gru_sequence_backward(cell: ParamBlock, cache: GruSequenceCache, dh_final: np.ndarray, prefix: str = ""):
    """Backward through ``gru_sequence``; accumulates all nine gradients.

    Returns ``(dh0, dxs)``.
    """
    v, g = cell.values, cell.grads
    xs, hs, z, r, hh = cache.xs, cache.hs, cache.z, cache.r, cache.hh
    e = z.shape[-1]
    n = xs.shape[-2]
    U_z, U_r, U_h = v[prefix + "U_z"], v[prefix + "U_r"], v[prefix + "U_h"]
    da = np.empty(z.shape[:-1] + (3 * e,))  # per tick: d pre-activation of z, r, hh
    dh = dh_final
    for t in range(n - 1, -1, -1):
        h = hs[..., t, :]
        zt, rt, ht = z[..., t, :], r[..., t, :], hh[..., t, :]
        da_h = dh * zt * (1.0 - ht * ht)
        d_rh = da_h @ U_h
        da_r = d_rh * h * rt * (1.0 - rt)
        da_z = dh * (ht - h) * zt * (1.0 - zt)
        da[..., t, :e], da[..., t, e : 2 * e], da[..., t, 2 * e :] = da_z, da_r, da_h
        dh = dh * (1.0 - zt) + d_rh * rt + da_r @ U_r + da_z @ U_z

    flat_da = da.reshape(-1, 3 * e)
    flat_x = xs.reshape(-1, xs.shape[-1])
    flat_h = hs[..., :-1, :].reshape(-1, e)
    dWx = flat_da.T @ flat_x
    dbx = flat_da.sum(axis=0)
    rh = (r * hs[..., :-1, :]).reshape(-1, e)
    for k, gate in enumerate(("z", "r", "h")):
        g[prefix + f"W_{gate}"] += dWx[k * e : (k + 1) * e]
        g[prefix + f"b_{gate}"] += dbx[k * e : (k + 1) * e]
    g[prefix + "U_z"] += flat_da[:, :e].T @ flat_h
    g[prefix + "U_r"] += flat_da[:, e : 2 * e].T @ flat_h
    g[prefix + "U_h"] += flat_da[:, 2 * e :].T @ rh
    Wx = np.concatenate([v[prefix + "W_z"], v[prefix + "W_r"], v[prefix + "W_h"]])
    dxs = da @ Wx
    return dh, dxs


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse length mismatch: pred{pred.shape} target{target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of the per-row mean squared error: ``2 (pred - target) / k``."""
    return 2.0 * (pred - target) / pred.shape[-1]


def finite_diff_check(
    loss_fn: Callable[[ParamBlock], float],
    params: ParamBlock,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return the scalar loss and accumulate its
    analytic gradient into ``params.grads``; the checker zeroes the buffers
    before the analytic call.  The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    params.zero_grads()
    base = loss_fn(params)
    if not math.isfinite(base):
        raise FloatingPointError(f"non-finite loss {base!r} at the base point")
    analytic = {k: g.copy() for k, g in params.grads.items()}

    worst = 0.0
    for name in names or params.names():
        value = params.values[name]
        flat = value.reshape(-1)
        an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(params)
            flat[i] = orig - eps
            down = loss_fn(params)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            num = (up - down) / (2.0 * eps)
            rel = abs(an[i] - num) / max(abs(an[i]), abs(num), 1e-8)
            worst = max(worst, rel)
    params.zero_grads()
    return worst
