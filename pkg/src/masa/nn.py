"""Dense feed-forward networks with hand-written backprop, a diagonal
Gaussian head and Adam.  Everything is float64 and a pure function of its
inputs and seed.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass(frozen=True)
class NetArch:
    """Layer widths from input to output, e.g. ``(4, 8, 2)``.

    Hidden layers use ``activation``; the last layer is linear unless
    ``output_activation`` is set (used for feature extractors).
    """

    widths: tuple[int, ...]
    activation: str = "elu"
    output_activation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ("elu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activation": self.activation, "output_activation": self.output_activation}


@dataclass
class NetParams:
    arch: NetArch
    weights: list[np.ndarray]  # (in, out) per layer
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "NetParams":
        return NetParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetParams":
        return NetParams(self.arch, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(arch: NetArch, rng_seed: int | np.random.Generator, output_gain: float = 1.0) -> NetParams:
    """Orthogonal weights (gain sqrt(2) on activated layers), zero biases."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    weights, biases = [], []
    for k, (a, b) in enumerate(zip(arch.widths[:-1], arch.widths[1:])):
        activated = k < arch.n_layers - 1 or arch.output_activation
        weights.append(_orthogonal(rng, a, b, math.sqrt(2.0) if activated else output_gain))
        biases.append(np.zeros(b))
    return NetParams(arch, weights, biases)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z > 0, 1.0, h + 1.0)
    return 1.0 - h * h


@dataclass
class Tape:
    arch: NetArch
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]
    post: list[np.ndarray]
    squeeze: bool


def forward(params: NetParams, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != params.arch.input_width:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {params.arch.input_width}")
    arch = params.arch
    inputs, pre, post = [], [], []
    h = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if k < arch.n_layers - 1 or arch.output_activation:
            h = _act(arch.activation, z)
        else:
            h = z
        post.append(h)
    y = h[0] if squeeze else h
    return y, Tape(arch, inputs, pre, post, squeeze)


def backward(params: NetParams, tape: Tape, upstream: np.ndarray) -> tuple[NetParams, np.ndarray]:
    """Parameter gradients and input gradient for a scalar loss with dL/dy = upstream."""
    if tape.arch != params.arch:
        raise ValueError("tape was recorded with a different architecture")
    g = np.asarray(upstream, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.post[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match output {tape.post[-1].shape}")
    arch = params.arch
    gw: list[np.ndarray] = [None] * arch.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * arch.n_layers  # type: ignore[list-item]
    for k in reversed(range(arch.n_layers)):
        if k < arch.n_layers - 1 or arch.output_activation:
            g = g * _act_grad(arch.activation, tape.pre[k], tape.post[k])
        gw[k] = tape.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    gx = g[0] if tape.squeeze else g
    return NetParams(arch, gw, gb), gx


@dataclass
class GaussianHead:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)


def gaussian_logprob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Sum over the last axis of diagonal Gaussian log densities."""
    z = (np.asarray(action) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_logprob_grads(mean, log_std, action):
    """d logp / d mean and d logp / d log_std (elementwise, before summing)."""
    inv_var = np.exp(-2.0 * log_std)
    diff = np.asarray(action) - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


def head_logprob(head: GaussianHead, action: np.ndarray) -> float:
    return float(gaussian_logprob(head.mean, head.log_std, action))


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns fresh (params, state) without touching the inputs."""
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


class Adam:
    """In-place wrapper around :func:`adam_step` for a fixed list of arrays."""

    def __init__(self, params: list[np.ndarray], lr: float):
        self.params = params
        self.lr = lr
        self.state = AdamState.zeros(params)

    def step(self, grads: list[np.ndarray]) -> None:
        new, self.state = adam_step(self.params, grads, self.state, self.lr)
        for p, q in zip(self.params, new):
            p[...] = q


def global_norm(grads: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


# -- checkpoints -------------------------------------------------------------

MAGIC = b"MASANET\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Magic tag, u32 version, u32-length JSON descriptor, then LE float64 data in order."""
    desc = {
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    desc = json.loads(data[16:16 + n])
    off = 16 + n
    out = {}
    for entry in desc["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        out[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after array data")
    return out, desc["meta"]
