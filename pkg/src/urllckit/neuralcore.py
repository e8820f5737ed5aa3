"""Minimal feed-forward network engine.

Dense layers x -> f(W x + b) with a handful of activations, exact backprop
(parameter and input gradients), plain/momentum/adam updates, prefix
freezing for transfer fine-tuning, and a versioned flat file format. Pure
numpy, single-threaded, bit-reproducible for a fixed seed: the learning
case studies depend on exact re-runs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import make_rng

__all__ = [
    "ACTIVATIONS",
    "FnnModel",
    "TrainConfig",
    "Gradients",
    "OptimizerState",
    "fnn_init",
    "forward",
    "forward_cached",
    "backward",
    "sgd_step",
    "freeze_prefix",
    "clone_model",
    "save_model",
    "load_model",
]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))


ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(z.dtype)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "softplus": (_softplus, lambda z, a: _sigmoid(z)),
}


@dataclass
class FnnModel:
    """Weights/biases/activations of a dense stack, with a frozen prefix.

    ``weights[i]`` has shape (out_i, in_i) chaining the layer sizes; layers
    with index below ``frozen_prefix`` are excluded from gradient updates.
    """

    weights: list
    biases: list
    activations: list
    frozen_prefix: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(
            self.activations
        ):
            raise ValueError("weights/biases/activations length mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bad shapes {w.shape} / {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if not 0 <= self.frozen_prefix <= len(self.weights):
            raise ValueError("frozen_prefix out of range")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Gradients:
    """Per-layer parameter gradients plus the gradient wrt the input."""

    weights: list
    biases: list
    input: np.ndarray


@dataclass
class OptimizerState:
    """Slot arrays for momentum / adam; created lazily by sgd_step."""

    velocity_w: list = field(default_factory=list)
    velocity_b: list = field(default_factory=list)
    second_w: list = field(default_factory=list)
    second_b: list = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_model(cls, model: FnnModel) -> "OptimizerState":
        return cls(
            velocity_w=[np.zeros_like(w) for w in model.weights],
            velocity_b=[np.zeros_like(b) for b in model.biases],
            second_w=[np.zeros_like(w) for w in model.weights],
            second_b=[np.zeros_like(b) for b in model.biases],
        )


def fnn_init(
    layer_sizes: Sequence[int],
    activations: Sequence[str],
    seed: int,
) -> FnnModel:
    """Scaled-uniform fan-in initialization, biases zero, explicit seed."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    acts = list(activations)
    if len(acts) != len(sizes) - 1:
        raise ValueError("one activation per layer required")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return FnnModel(weights=weights, biases=biases, activations=acts)


def _promote(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError("input must be a vector or a (batch, features) matrix")


def forward(model: FnnModel, x):
    """Network output for one vector or a batch of rows."""
    out, _ = forward_cached(model, x)
    return out


def forward_cached(model: FnnModel, x):
    """Forward pass keeping pre-activations for a later backward call."""
    h, single = _promote(x)
    if h.shape[1] != model.weights[0].shape[1]:
        raise ValueError(
            f"input has {h.shape[1]} features, model expects "
            f"{model.weights[0].shape[1]}"
        )
    inputs, preacts, acts_out = [], [], []
    for w, b, name in zip(model.weights, model.biases, model.activations):
        inputs.append(h)
        z = h @ w.T + b
        h = ACTIVATIONS[name][0](z)
        preacts.append(z)
        acts_out.append(h)
    cache = {"inputs": inputs, "preacts": preacts, "acts": acts_out, "single": single}
    return (h[0] if single else h), cache


def backward(model: FnnModel, cache: dict, upstream) -> Gradients:
    """Backprop an output-side gradient to all unfrozen parameters.

    Frozen layers receive zero gradient arrays (shapes preserved) while the
    signal still flows through them to the input gradient. Batch rows are
    summed, matching a summed (not averaged) loss.
    """
    g, _ = _promote(upstream)
    if g.shape != cache["acts"][-1].shape:
        raise ValueError(
            f"upstream shape {g.shape} does not match output "
            f"{cache['acts'][-1].shape}"
        )
    n = model.n_layers
    grad_w = [None] * n
    grad_b = [None] * n
    for i in range(n - 1, -1, -1):
        name = model.activations[i]
        dz = g * ACTIVATIONS[name][1](cache["preacts"][i], cache["acts"][i])
        if i >= model.frozen_prefix:
            grad_w[i] = dz.T @ cache["inputs"][i]
            grad_b[i] = dz.sum(axis=0)
        else:
            grad_w[i] = np.zeros_like(model.weights[i])
            grad_b[i] = np.zeros_like(model.biases[i])
        g = dz @ model.weights[i]
    input_grad = g[0] if cache["single"] else g
    return Gradients(weights=grad_w, biases=grad_b, input=input_grad)


def sgd_step(
    model: FnnModel,
    grads: Gradients,
    cfg: TrainConfig,
    state: OptimizerState | None = None,
) -> FnnModel:
    """One descent step in place; frozen layers stay bit-identical.

    Momentum and adam need an OptimizerState carried across calls; plain
    sgd ignores it.
    """
    lr = cfg.learning_rate
    if cfg.optimizer != "sgd" and state is None:
        raise ValueError("momentum/adam require an OptimizerState")
    if state is not None:
        state.step_count += 1
    for i in range(model.frozen_prefix, model.n_layers):
        gw, gb = grads.weights[i], grads.biases[i]
        if gw.shape != model.weights[i].shape:
            raise ValueError(f"layer {i}: gradient shape mismatch")
        if cfg.optimizer == "sgd":
            model.weights[i] -= lr * gw
            model.biases[i] -= lr * gb
        elif cfg.optimizer == "momentum":
            state.velocity_w[i] = cfg.momentum * state.velocity_w[i] - lr * gw
            state.velocity_b[i] = cfg.momentum * state.velocity_b[i] - lr * gb
            model.weights[i] += state.velocity_w[i]
            model.biases[i] += state.velocity_b[i]
        else:  # adam
            b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
            t = state.step_count
            for slot_m, slot_v, g, param in (
                (state.velocity_w, state.second_w, gw, model.weights),
                (state.velocity_b, state.second_b, gb, model.biases),
            ):
                slot_m[i] = b1 * slot_m[i] + (1 - b1) * g
                slot_v[i] = b2 * slot_v[i] + (1 - b2) * g * g
                m_hat = slot_m[i] / (1 - b1**t)
                v_hat = slot_v[i] / (1 - b2**t)
                param[i] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return model


def freeze_prefix(model: FnnModel, k: int) -> FnnModel:
    """Exclude the first k layers from all future gradient updates."""
    if not 0 <= k <= model.n_layers:
        raise ValueError(f"k must be in [0, {model.n_layers}]")
    model.frozen_prefix = k
    return model


def clone_model(model: FnnModel) -> FnnModel:
    return FnnModel(
        weights=[w.copy() for w in model.weights],
        biases=[b.copy() for b in model.biases],
        activations=list(model.activations),
        frozen_prefix=model.frozen_prefix,
    )


_MAGIC = b"UKFNN\x00"
_FORMAT_VERSION = 1


def save_model(model: FnnModel, path) -> None:
    """Write the documented flat binary format.

    Layout: magic, uint32 version, uint32 header length, JSON header
    (layer_sizes, activations, frozen_prefix), then per layer the row-major
    float64 little-endian weight matrix followed by the bias vector.
    """
    header = json.dumps(
        {
            "layer_sizes": model.layer_sizes,
            "activations": model.activations,
            "frozen_prefix": model.frozen_prefix,
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(header)))
        fh.write(header)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> FnnModel:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError("not a model file (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, len(_MAGIC))
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    off = len(_MAGIC) + 8
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    sizes = header["layer_sizes"]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=off)
        off += w.nbytes
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += b.nbytes
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    return FnnModel(
        weights=weights,
        biases=biases,
        activations=header["activations"],
        frozen_prefix=header["frozen_prefix"],
    )
