"""Small dense networks in numpy: forward, reverse-mode gradients, Adam.

Weights of layer ``k`` have shape ``(out_k, in_k)``. Every function accepts a
single input vector or a batch of row vectors; gradients from a batch are the
sum of per-sample gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "clip")

_MAGIC = b"GOATNN\x00\x01"


@dataclass
class Network:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    output_activation: str = "identity"
    # tanh/clip heads are scaled to [-output_scale, output_scale]
    output_scale: float = 1.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Network":
        return Network(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_activation,
            self.output_scale,
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads([w * factor for w in self.weights], [b * factor for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class AdamState:
    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None
    squeeze: bool = False


def mlp_init(
    layer_sizes: list[int],
    seed: int,
    activation: str = "relu",
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> Network:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError(f"need at least two layer sizes, got {layer_sizes!r}")
    if any(n <= 0 for n in sizes):
        raise ConfigError(f"layer sizes must be positive, got {layer_sizes!r}")
    if activation not in HIDDEN_ACTIVATIONS:
        raise ConfigError(f"unknown hidden activation {activation!r}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigError(f"unknown output activation {output_activation!r}")
    if output_scale <= 0:
        raise ConfigError("output_scale must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(sizes, weights, biases, activation, output_activation, float(output_scale))


def _as_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeError(f"expected input width {net.layer_sizes[0]}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite network input")
    return x, squeeze


def forward_cached(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    h, squeeze = _as_batch(net, x)
    cache = ForwardCache(squeeze=squeeze)
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0) if net.activation == "relu" else np.tanh(z)
        elif net.output_activation == "tanh":
            h = net.output_scale * np.tanh(z)
        elif net.output_activation == "clip":
            h = np.clip(z, -net.output_scale, net.output_scale)
        else:
            h = z
    cache.output = h
    return (h[0] if squeeze else h), cache


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    return forward_cached(net, x)[0]


def backward_cached(
    net: Network, cache: ForwardCache, upstream: np.ndarray
) -> tuple[ParamGrads, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and inputs."""
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {cache.output.shape}")
    last = net.n_layers - 1
    z = cache.pre[last]
    if net.output_activation == "tanh":
        t = cache.output / net.output_scale
        g = g * net.output_scale * (1.0 - t * t)
    elif net.output_activation == "clip":
        g = g * (np.abs(z) <= net.output_scale)
    dws: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for k in range(last, -1, -1):
        dws[k] = g.T @ cache.inputs[k]
        dbs[k] = g.sum(axis=0)
        g = g @ net.weights[k]
        if k > 0:
            if net.activation == "relu":
                g = g * (cache.pre[k - 1] > 0)
            else:
                a = cache.inputs[k]
                g = g * (1.0 - a * a)
    dx = g[0] if cache.squeeze else g
    return ParamGrads(dws, dbs), dx


def backward(net: Network, x: np.ndarray, upstream: np.ndarray) -> ParamGrads:
    _, cache = forward_cached(net, x)
    return backward_cached(net, cache, upstream)[0]


def _param_arrays(net: Network) -> list[np.ndarray]:
    return [a for pair in zip(net.weights, net.biases) for a in pair]


def finite_diff_grad(
    net: Network,
    x: np.ndarray,
    scalar_loss_fn: Callable[[np.ndarray], float],
    h: float = 1e-5,
) -> ParamGrads:
    """Central-difference gradient of ``scalar_loss_fn(forward(net, x))``.

    Perturbs one parameter at a time on a private copy, so ``net`` is untouched.
    """
    if not h > 0:
        raise ConfigError("finite-difference step h must be positive")
    probe = net.copy()
    grads = []
    for arr in _param_arrays(probe):
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(scalar_loss_fn(forward(probe, x)))
            flat[i] = orig - h
            down = float(scalar_loss_fn(forward(probe, x)))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return ParamGrads(grads[0::2], grads[1::2])


def adam_init(net: Network, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = lambda arrs: [np.zeros_like(a) for a in arrs]  # noqa: E731
    return AdamState(
        zeros(net.weights), zeros(net.biases), zeros(net.weights), zeros(net.biases), 0, beta1, beta2, eps
    )


def adam_step(
    net: Network, grads: ParamGrads, state: AdamState, lr: float
) -> tuple[Network, AdamState]:
    """Bias-corrected Adam update, applied in place; returns ``(net, state)``."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    if len(grads.weights) != net.n_layers or len(grads.biases) != net.n_layers:
        raise ShapeError("gradient layer count does not match network")
    for k, (dw, db) in enumerate(zip(grads.weights, grads.biases)):
        if dw.shape != net.weights[k].shape or db.shape != net.biases[k].shape:
            raise ShapeError(f"gradient shape mismatch at layer {k}")
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise NumericError(f"non-finite gradient in layer {k}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_size = lr / (1.0 - b1**state.step)
    bc2 = 1.0 - b2**state.step
    params = net.weights + net.biases
    gs = grads.weights + grads.biases
    ms = state.m_weights + state.m_biases
    vs = state.v_weights + state.v_biases
    for p, g, m, v in zip(params, gs, ms, vs):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.eps)
    return net, state


# -- checkpoints --------------------------------------------------------------
#
# Binary layout (all little-endian):
#   8 bytes   magic  b"GOATNN\x00\x01"
#   uint32    length of the UTF-8 JSON header
#   header    {"layer_sizes", "activation", "output_activation", "output_scale"}
#   float64[] W_0, b_0, W_1, b_1, ... in row-major order


def _header(net: Network) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "output_activation": net.output_activation,
        "output_scale": net.output_scale,
    }


def network_to_bytes(net: Network) -> bytes:
    header = json.dumps(_header(net), sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in _param_arrays(net))
    return _MAGIC + struct.pack("<I", len(header)) + header + body


def network_from_bytes(blob: bytes) -> Network:
    if blob[:8] != _MAGIC:
        raise ConfigError("not a network checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen])
    sizes = header["layer_sizes"]
    data = np.frombuffer(blob, dtype="<f8", offset=12 + hlen)
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if data.size != expected:
        raise ShapeError(f"checkpoint holds {data.size} values, expected {expected}")
    weights, biases, pos = [], [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos : pos + o * i].reshape(o, i).astype(np.float64))
        pos += o * i
        biases.append(data[pos : pos + o].astype(np.float64))
        pos += o
    return Network(
        sizes, weights, biases, header["activation"], header["output_activation"], header["output_scale"]
    )


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path: str | Path) -> Network:
    return network_from_bytes(Path(path).read_bytes())


def network_to_json(net: Network) -> str:
    doc = _header(net)
    doc["weights"] = [w.tolist() for w in net.weights]
    doc["biases"] = [b.tolist() for b in net.biases]
    return json.dumps(doc)


def network_from_json(text: str) -> Network:
    doc = json.loads(text)
    return Network(
        doc["layer_sizes"],
        [np.array(w, dtype=np.float64) for w in doc["weights"]],
        [np.array(b, dtype=np.float64) for b in doc["biases"]],
        doc["activation"],
        doc["output_activation"],
        doc["output_scale"],
    )
