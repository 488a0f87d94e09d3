"""Minimal fully-connected network stack: forward, exact backward, Adam.

Everything is plain float64 numpy. Hidden layers use ReLU, the final layer
is linear. The backward pass returns gradients for every parameter *and*
for the network input; the input gradient is what lets reward terms be
differentiated through a frozen model all the way back to the action.

Functions accept either a single input vector (1-D) or a batch of rows
(2-D). Parameter gradients for a batch are summed over rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class NetworkParams:
    """Weights and biases for one MLP.

    weights[l] has shape (layer_sizes[l+1], layer_sizes[l]); biases[l] has
    shape (layer_sizes[l+1],).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class ForwardCache:
    """Intermediate activations of one forward pass.

    activations[0] is the input; activations[l+1] is the output of layer l
    after its nonlinearity (the last entry is the network output).
    preacts[l] is layer l's affine output before ReLU (final layer has no
    ReLU, so its preact equals its activation).
    """

    activations: list[np.ndarray]
    preacts: list[np.ndarray]


@dataclass
class NetworkGrads:
    """Same shapes as NetworkParams.weights / .biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkGrads":
        return NetworkGrads([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    step_count: int
    m: NetworkGrads
    v: NetworkGrads
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def mlp_init(layer_sizes: list[int], seed: int) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {layer_sizes}")
    if any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    sizes = [int(s) for s in layer_sizes]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-scale, scale, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return NetworkParams(sizes, weights, biases)


def _check_input(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} does not match network input size {params.layer_sizes[0]}"
        )
    return x


def mlp_forward(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (output, cache for the backward pass)."""
    a = _check_input(params, x)
    activations = [a]
    preacts = []
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        preacts.append(z)
        a = z if l == last else np.maximum(z, 0.0)
        activations.append(a)
    return a, ForwardCache(activations, preacts)


def mlp_backward(
    params: NetworkParams, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[NetworkGrads, np.ndarray]:
    """Exact reverse-mode pass.

    output_grad is dLoss/dOutput with the same shape as the forward output.
    Returns (parameter gradients, dLoss/dInput). Batched rows contribute
    summed parameter gradients; the input gradient keeps the batch shape.
    ReLU uses subgradient 0 at exactly 0.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    out = cache.activations[-1]
    if g.shape != out.shape:
        raise ValueError(f"output_grad shape {g.shape} does not match output {out.shape}")
    gw: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    last = params.n_layers - 1
    for l in range(last, -1, -1):
        if l != last:
            g = g * (cache.preacts[l] > 0.0)
        a_in = cache.activations[l]
        if g.ndim == 1:
            gw[l] = np.outer(g, a_in)
            gb[l] = g.copy()
        else:
            gw[l] = g.T @ a_in
            gb[l] = g.sum(axis=0)
        g = g @ params.weights[l]
    return NetworkGrads(gw, gb), g


def grads_zeros_like(params: NetworkParams) -> NetworkGrads:
    return NetworkGrads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def grads_add(a: NetworkGrads, b: NetworkGrads, scale: float = 1.0) -> NetworkGrads:
    """a + scale * b, elementwise."""
    return NetworkGrads(
        [wa + scale * wb for wa, wb in zip(a.weights, b.weights)],
        [ba + scale * bb for ba, bb in zip(a.biases, b.biases)],
    )


def grads_scale(g: NetworkGrads, scale: float) -> NetworkGrads:
    return NetworkGrads([w * scale for w in g.weights], [b * scale for b in g.biases])


def _grad_arrays(g: NetworkGrads):
    return list(g.weights) + list(g.biases)


def global_norm(grads: NetworkGrads) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in _grad_arrays(grads))))


def clip_gradients(grads: NetworkGrads, threshold: float) -> NetworkGrads:
    """Scale all gradients jointly so the global L2 norm is <= threshold."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm <= threshold:
        return grads.copy()
    return grads_scale(grads, threshold / norm)


def adam_init(
    params: NetworkParams,
    learning_rate: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(0, grads_zeros_like(params), grads_zeros_like(params),
                     learning_rate, beta1, beta2, epsilon)


def adam_step(
    state: AdamState, params: NetworkParams, grads: NetworkGrads
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Pure: returns fresh params and state."""
    for arr in _grad_arrays(grads):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_w, new_b = [], []
    new_m = NetworkGrads([], [])
    new_v = NetworkGrads([], [])
    for kind in ("weights", "biases"):
        for p, g, m, v in zip(
            getattr(params, kind), getattr(grads, kind),
            getattr(state.m, kind), getattr(state.v, kind),
        ):
            m2 = b1 * m + (1.0 - b1) * g
            v2 = b2 * v + (1.0 - b2) * g * g
            step = state.learning_rate * (m2 / c1) / (np.sqrt(v2 / c2) + state.epsilon)
            getattr(new_m, kind).append(m2)
            getattr(new_v, kind).append(v2)
            if kind == "weights":
                new_w.append(p - step)
            else:
                new_b.append(p - step)
    new_params = NetworkParams(list(params.layer_sizes), new_w, new_b)
    new_state = AdamState(t, new_m, new_v, state.learning_rate,
                          state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


def save_params(path: str, params: NetworkParams, extra: dict | None = None) -> None:
    """Write a checkpoint. float64 arrays round-trip bit-exactly through npz.

    extra is a JSON-serializable dict stored alongside the arrays (model
    input specs, head layouts and similar metadata live there).
    """
    payload = {
        "format_version": np.array([CHECKPOINT_FORMAT_VERSION], dtype=np.int64),
        "layer_sizes": np.array(params.layer_sizes, dtype=np.int64),
        "extra_json": np.array(json.dumps(extra or {})),
    }
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{l}"] = w
        payload[f"b{l}"] = b
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_params(path: str) -> tuple[NetworkParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"][0])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        sizes = [int(s) for s in data["layer_sizes"]]
        n = len(sizes) - 1
        weights = [np.array(data[f"w{l}"]) for l in range(n)]
        biases = [np.array(data[f"b{l}"]) for l in range(n)]
        extra = json.loads(str(data["extra_json"]))
    return NetworkParams(sizes, weights, biases), extra
