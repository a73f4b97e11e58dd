"""Dense-network substrate: layers, forward/backward passes, Adam.

Everything is float64 and seeded. Gradients are computed analytically
layer by layer; there is no tape. Inputs may be single vectors ``(d,)``
or batches ``(n, d)``; parameter gradients are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite losses or gradients."""


class Activation(str, Enum):
    RELU = "relu"
    SOFTPLUS = "softplus"
    IDENTITY = "identity"
    TANH = "tanh"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def act_value(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SOFTPLUS:
        return np.logaddexp(0.0, z)
    if kind is Activation.IDENTITY:
        return z
    if kind is Activation.TANH:
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def act_slope(kind: Activation, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z.

    ReLU uses the zero-side convention: slope 0 exactly at the kink.
    """
    if kind is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if kind is Activation.SOFTPLUS:
        return _sigmoid(z)
    if kind is Activation.IDENTITY:
        return np.ones_like(z)
    if kind is Activation.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """One affine map plus activation: g(W x + b)."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation = Activation.IDENTITY

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weight must be 2-d and bias 1-d")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"bias dim {self.bias.shape[0]} does not match "
                f"weight rows {self.weight.shape[0]}"
            )
        self.activation = Activation(self.activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    """Plain feed-forward stack of DenseLayers."""

    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def flat(self) -> np.ndarray:
        """All parameters as one float64 vector (layer order, W then b)."""
        parts = []
        for lyr in self.layers:
            parts.append(lyr.weight.ravel())
            parts.append(lyr.bias)
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for lyr in self.layers:
            n = lyr.weight.size
            lyr.weight = vec[pos : pos + n].reshape(lyr.weight.shape).copy()
            pos += n
            n = lyr.bias.size
            lyr.bias = vec[pos : pos + n].copy()
            pos += n
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, need {pos}")


def layer_init(
    n_in: int, n_out: int, activation: Activation, rng: np.random.Generator
) -> DenseLayer:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(n_in)
    weight = rng.uniform(-bound, bound, size=(n_out, n_in))
    bias = rng.uniform(-bound, bound, size=n_out)
    return DenseLayer(weight, bias, activation)


def mlp_init(
    dims: list[int],
    activations: list[Activation],
    rng: np.random.Generator,
) -> Mlp:
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = [
        layer_init(dims[i], dims[i + 1], activations[i], rng)
        for i in range(len(dims) - 1)
    ]
    return Mlp(layers)


def _as_batch(x: np.ndarray, dim: int, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} has shape {x.shape}, expected (..., {dim})")
    return x, single


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network. Accepts (d,) or (n, d) input."""
    h, single = _as_batch(x, net.input_dim, "x")
    for lyr in net.layers:
        h = act_value(lyr.activation, h @ lyr.weight.T + lyr.bias)
    return h[0] if single else h


def _forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    cache = []
    h = x
    for lyr in net.layers:
        z = h @ lyr.weight.T + lyr.bias
        cache.append((h, z))
        h = act_value(lyr.activation, z)
    return h, cache


def backward(
    net: Mlp, x: np.ndarray, upstream: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients of <upstream, forward(x)> w.r.t. parameters and x.

    Returns ``(param_grads, input_grad)`` where param_grads is a list of
    (dW, db) per layer. For batched input the parameter gradients are
    summed over the batch and input_grad is per-sample.
    """
    xb, single = _as_batch(x, net.input_dim, "x")
    ub, usingle = _as_batch(upstream, net.output_dim, "upstream")
    if single != usingle or (not single and xb.shape[0] != ub.shape[0]):
        raise ValueError("x and upstream batch shapes do not match")
    _, cache = _forward_cached(net, xb)
    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    delta = ub
    for i in range(len(net.layers) - 1, -1, -1):
        lyr = net.layers[i]
        h_in, z = cache[i]
        dz = delta * act_slope(lyr.activation, z)
        param_grads[i] = (dz.T @ h_in, dz.sum(axis=0))
        delta = dz @ lyr.weight
    return param_grads, (delta[0] if single else delta)


def grads_to_flat(net: Mlp, param_grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Flatten backward()'s parameter gradients in flat() order."""
    parts = []
    for (dw, db), _ in zip(param_grads, net.layers):
        parts.append(dw.ravel())
        parts.append(db)
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class AdamState:
    """Adam moments for one flat parameter vector."""

    dim: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.m is None:
            self.m = np.zeros(self.dim)
        if self.v is None:
            self.v = np.zeros(self.dim)
        if self.m.shape != (self.dim,) or self.v.shape != (self.dim,):
            raise ValueError("moment vectors must match dim")


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState
) -> np.ndarray:
    """One bias-corrected Adam update. Mutates state, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (state.dim,) or grads.shape != (state.dim,):
        raise ValueError(
            f"params/grads must have shape ({state.dim},), "
            f"got {params.shape} and {grads.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient in adam_step")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
