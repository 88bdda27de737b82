"""Small feed-forward network core with manual backpropagation.

Layers store weights as ``(out, in)`` matrices and operate on row batches,
so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import struct
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

BCE_EPS = 1e-7
LEAKY_SLOPE = 0.2

CHECKPOINT_MAGIC = b"AUGBPMNN"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class Activation(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


_ACT_CODES = {Activation.RELU: 0, Activation.LEAKY_RELU: 1, Activation.SIGMOID: 2, Activation.IDENTITY: 3}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: Activation = Activation.IDENTITY
    slope: float = LEAKY_SLOPE

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation is Activation.RELU:
            return np.maximum(z, 0.0)
        if self.activation is Activation.LEAKY_RELU:
            return np.where(z > 0, z, self.slope * z)
        if self.activation is Activation.SIGMOID:
            return sigmoid(z)
        return z

    def activation_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Elementwise derivative of the activation at pre-activation ``z``."""
        if self.activation is Activation.RELU:
            return (z > 0).astype(float)
        if self.activation is Activation.LEAKY_RELU:
            return np.where(z > 0, 1.0, self.slope)
        if self.activation is Activation.SIGMOID:
            return a * (1.0 - a)
        return np.ones_like(z)


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer {k} emits {a.n_out} values but layer {k + 1} expects {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def copy(self) -> "Mlp":
        return Mlp([DenseLayer(l.weights.copy(), l.biases.copy(), l.activation, l.slope) for l in self.layers])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def equals(self, other: "Mlp") -> bool:
        """Bitwise equality of architecture and parameters."""
        if len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if a.activation is not b.activation or a.slope != b.slope:
                return False
            if not (np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)):
                return False
        return True


@dataclass(frozen=True)
class ElasticNetConfig:
    l1: float = 5e-7
    l2: float = 5e-7

    def __post_init__(self) -> None:
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("elastic-net penalties must be non-negative")

    @classmethod
    def split(cls, total: float) -> "ElasticNetConfig":
        """Split a combined penalty magnitude evenly between L1 and L2."""
        return cls(l1=total / 2.0, l2=total / 2.0)


NO_PENALTY = ElasticNetConfig(0.0, 0.0)


class Direction(str, Enum):
    DESCENT = "descent"
    ASCENT = "ascent"


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    direction: Direction = Direction.DESCENT

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")


@dataclass
class Cache:
    net: Mlp
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.extend((w.ravel(), b.ravel()))
        return np.concatenate(parts)


def forward(net: Mlp, batch: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.n_in:
        raise ShapeError(f"batch has {x.shape[1]} columns, network expects {net.n_in}")
    cache = Cache(net)
    for layer in net.layers:
        cache.inputs.append(x)
        z = x @ layer.weights.T + layer.biases
        x = layer.activate(z)
        cache.pre.append(z)
        cache.post.append(x)
    return x, cache


def bce_loss(predictions, labels, eps: float = BCE_EPS) -> float:
    p = np.clip(np.asarray(predictions, dtype=float), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_logit_grad(predictions, labels) -> np.ndarray:
    """Gradient of mean BCE with respect to the sigmoid pre-activation."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    return (p - y) / p.shape[0]


def backward(
    net: Mlp,
    cache: Cache,
    loss_grad: np.ndarray,
    enet: ElasticNetConfig = NO_PENALTY,
    *,
    wrt_preactivation: bool = False,
) -> Gradients:
    """Reverse-mode gradients of a scalar loss.

    ``loss_grad`` is dL/d(output) with the same shape as the forward output.
    With ``wrt_preactivation=True`` it is taken as dL/d(pre-activation) of the
    last layer instead, which is how BCE on a sigmoid output is usually fed in.
    """
    if cache.net is not net or len(cache.pre) != len(net.layers):
        raise UsageError("cache does not belong to this network; run forward again")
    g = np.asarray(loss_grad, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != cache.post[-1].shape:
        raise ShapeError(f"loss gradient shape {g.shape} != output shape {cache.post[-1].shape}")

    n = len(net.layers)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        layer = net.layers[k]
        if k == n - 1 and wrt_preactivation:
            dz = g
        else:
            dz = g * layer.activation_grad(cache.pre[k], cache.post[k])
        dw = dz.T @ cache.inputs[k]
        if enet.l2:
            dw = dw + 2.0 * enet.l2 * layer.weights
        if enet.l1:
            dw = dw + enet.l1 * np.sign(layer.weights)
        dws[k] = dw
        dbs[k] = dz.sum(axis=0)
        g = dz @ layer.weights
    return Gradients(dws, dbs, g)


def sgd_step(net: Mlp, grads: Gradients, cfg: SgdConfig) -> Mlp:
    if len(grads.weights) != len(net.layers):
        raise ShapeError("gradient list does not match the network depth")
    sign = -1.0 if Direction(cfg.direction) is Direction.DESCENT else 1.0
    layers = []
    for layer, dw, db in zip(net.layers, grads.weights, grads.biases):
        if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
            raise ShapeError("gradient shapes do not match layer parameters")
        layers.append(
            DenseLayer(
                layer.weights + sign * cfg.learning_rate * dw,
                layer.biases + sign * cfg.learning_rate * db,
                layer.activation,
                layer.slope,
            )
        )
    return Mlp(layers)


def init_weights(
    sizes: Sequence[int],
    activations: Sequence[Activation | str],
    seed: int,
    slope: float = LEAKY_SLOPE,
) -> Mlp:
    """Glorot-uniform weights, zero biases.

    ``sizes`` lists the width of every layer boundary, so ``[5, 300, 300, 1]``
    builds three dense layers and needs three activations.
    """
    if len(sizes) < 2 or len(activations) != len(sizes) - 1:
        raise ShapeError("need len(sizes) - 1 activations and at least one layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), Activation(act), slope))
    return Mlp(layers)


# Checkpoint layout (all integers little-endian):
#   8 bytes  magic b"AUGBPMNN"
#   u32      format version
#   u32      layer count L
#   per layer: u32 n_in, u32 n_out, u8 activation code, f64 slope,
#              n_out*n_in f64 weights (row-major), n_out f64 biases

def write_checkpoint(net: Mlp, fh: BinaryIO) -> None:
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.layers)))
    for layer in net.layers:
        fh.write(struct.pack("<IIBd", layer.n_in, layer.n_out, _ACT_CODES[layer.activation], layer.slope))
        fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError("checkpoint is truncated")
    return data


def read_checkpoint(fh: BinaryIO) -> Mlp:
    magic = fh.read(8)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a network checkpoint (magic {magic!r})")
    version, n_layers = struct.unpack("<II", _read_exact(fh, 8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    header = struct.Struct("<IIBd")
    layers = []
    for _ in range(n_layers):
        n_in, n_out, code, slope = header.unpack(_read_exact(fh, header.size))
        w = np.frombuffer(_read_exact(fh, 8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in).astype(float)
        b = np.frombuffer(_read_exact(fh, 8 * n_out), dtype="<f8").astype(float)
        if code not in _CODE_ACTS:
            raise CheckpointError(f"unknown activation code {code}")
        layers.append(DenseLayer(w, b, _CODE_ACTS[code], slope))
    return Mlp(layers)


def save(net: Mlp, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_checkpoint(net, fh)


def load(path: str | Path) -> Mlp:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)
