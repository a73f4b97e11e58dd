"""Partially input-convex network f(s, a): convex in the action input.

The action feeds every z-layer through an unconstrained affine term while
the recurrent z-weights are kept elementwise nonnegative, so the output
is convex in ``a`` (but not in ``s``, which flows through a separate
unrestricted path). Convexity survives training because the nonnegativity
projection is applied after every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Activation, DenseLayer, act_slope, act_value, layer_init

# Convex and non-decreasing: the only activations allowed on the z-path.
CONVEX_ACTIVATIONS = (Activation.RELU, Activation.SOFTPLUS, Activation.IDENTITY)


@dataclass
class ZEntryLayer:
    """First z-layer: z1 = g(W_zs s + W_za a + b)."""

    w_zs: np.ndarray  # (width, state_dim)
    w_za: np.ndarray  # (width, action_dim)
    bias: np.ndarray  # (width,)
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        self.w_zs = np.asarray(self.w_zs, dtype=np.float64)
        self.w_za = np.asarray(self.w_za, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)


@dataclass
class ZLayer:
    """Later z-layers: z_{i+1} = g(W_zu u_i + W_za a + W_zz z_i + b)."""

    w_zu: np.ndarray  # (width_out, u_width)
    w_za: np.ndarray  # (width_out, action_dim)
    w_zz: np.ndarray  # (width_out, width_in), kept >= 0
    bias: np.ndarray  # (width_out,)
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        self.w_zu = np.asarray(self.w_zu, dtype=np.float64)
        self.w_za = np.asarray(self.w_za, dtype=np.float64)
        self.w_zz = np.asarray(self.w_zz, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)


@dataclass
class Picnn:
    """Parameters of one partially input-convex network.

    ``u_layers`` is the unrestricted state path; ``z_entry`` and
    ``z_layers`` form the convex path. The number of u-layers must equal
    the number of z-layers beyond the entry, since z-layer i consumes u_i.
    ``strict`` widens the nonnegativity projection to the action weights.
    """

    u_layers: list[DenseLayer]
    z_entry: ZEntryLayer
    z_layers: list[ZLayer]
    strict: bool = False

    def __post_init__(self) -> None:
        if len(self.u_layers) != len(self.z_layers):
            raise ValueError(
                f"{len(self.u_layers)} u-layers cannot feed "
                f"{len(self.z_layers)} z-layers"
            )
        for act in [self.z_entry.activation] + [l.activation for l in self.z_layers]:
            if act not in CONVEX_ACTIVATIONS:
                raise ValueError(
                    f"z-path activation {act.value} is not convex non-decreasing"
                )
        da = self.z_entry.w_za.shape[1]
        width = self.z_entry.w_zs.shape[0]
        for i, (ul, zl) in enumerate(zip(self.u_layers, self.z_layers)):
            if zl.w_za.shape[1] != da:
                raise ValueError(f"z-layer {i}: action dim mismatch")
            if zl.w_zz.shape[1] != width:
                raise ValueError(f"z-layer {i}: w_zz does not match previous width")
            if zl.w_zu.shape[1] != ul.out_dim:
                raise ValueError(f"z-layer {i}: w_zu does not match u-path width")
            width = zl.w_zz.shape[0]

    @property
    def state_dim(self) -> int:
        return self.z_entry.w_zs.shape[1]

    @property
    def action_dim(self) -> int:
        return self.z_entry.w_za.shape[1]

    @property
    def heads(self) -> int:
        last = self.z_layers[-1] if self.z_layers else self.z_entry
        return last.bias.shape[0]

    def _arrays(self) -> list[np.ndarray]:
        out = []
        for lyr in self.u_layers:
            out += [lyr.weight, lyr.bias]
        out += [self.z_entry.w_zs, self.z_entry.w_za, self.z_entry.bias]
        for lyr in self.z_layers:
            out += [lyr.w_zu, lyr.w_za, lyr.w_zz, lyr.bias]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for arr in self._arrays():
            arr[...] = vec[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, need {pos}")


def picnn_init(
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    widths: tuple[int, ...] = (64, 64),
    heads: int = 1,
    hidden_activation: Activation = Activation.RELU,
    strict: bool = False,
) -> Picnn:
    """Seeded constrained network; the final z-layer is linear (identity).

    ``widths`` sets both hidden paths: with n widths the u-path has n
    layers and the z-path has n+1 (entry plus n), matching a two-layer
    state path feeding a three-stage convex path at the default.
    """
    if len(widths) < 1:
        raise ValueError("need at least one hidden width")
    u_layers = []
    prev = state_dim
    for w in widths:
        u_layers.append(layer_init(prev, w, hidden_activation, rng))
        prev = w
    bound0 = 1.0 / np.sqrt(state_dim + action_dim)
    z_entry = ZEntryLayer(
        rng.uniform(-bound0, bound0, size=(widths[0], state_dim)),
        rng.uniform(-bound0, bound0, size=(widths[0], action_dim)),
        rng.uniform(-bound0, bound0, size=widths[0]),
        hidden_activation,
    )
    z_layers = []
    for j in range(len(widths)):
        out = widths[j + 1] if j + 1 < len(widths) else heads
        fan_in = widths[j] * 2 + action_dim
        b = 1.0 / np.sqrt(fan_in)
        z_layers.append(
            ZLayer(
                rng.uniform(-b, b, size=(out, widths[j])),
                rng.uniform(-b, b, size=(out, action_dim)),
                rng.uniform(-b, b, size=(out, widths[j])),
                rng.uniform(-b, b, size=out),
                hidden_activation if j + 1 < len(widths) else Activation.IDENTITY,
            )
        )
    return project_constraints(Picnn(u_layers, z_entry, z_layers, strict=strict))


def project_constraints(p: Picnn) -> Picnn:
    """Clamp the recurrent z-weights at zero (and the action weights when
    strict); call after every parameter update. Mutates and returns p."""
    for lyr in p.z_layers:
        np.maximum(lyr.w_zz, 0.0, out=lyr.w_zz)
    if p.strict:
        np.maximum(p.z_entry.w_za, 0.0, out=p.z_entry.w_za)
        for lyr in p.z_layers:
            np.maximum(lyr.w_za, 0.0, out=lyr.w_za)
    return p


def _as_batch_pair(
    p: Picnn, s: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, np.ndarray, bool]:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    single = s.ndim == 1 and a.ndim == 1
    if s.ndim == 1:
        s = s[None, :]
    if a.ndim == 1:
        a = np.broadcast_to(a[None, :], (s.shape[0], a.shape[0]))
    if s.shape[1] != p.state_dim or a.shape[1] != p.action_dim:
        raise ValueError(
            f"state/action dims {s.shape[1]}/{a.shape[1]} do not match "
            f"network ({p.state_dim}/{p.action_dim})"
        )
    if s.shape[0] != a.shape[0]:
        raise ValueError("state and action batch sizes differ")
    return s, a, single


def _forward_cached(p: Picnn, s: np.ndarray, a: np.ndarray):
    """Returns (output, u_inputs, u_pre, us, z_pre, z_values)."""
    u_inputs, u_pre, us = [], [], []
    u = s
    for lyr in p.u_layers:
        u_inputs.append(u)
        z = u @ lyr.weight.T + lyr.bias
        u_pre.append(z)
        u = act_value(lyr.activation, z)
        us.append(u)
    z_pre, z_values = [], []
    zp = s @ p.z_entry.w_zs.T + a @ p.z_entry.w_za.T + p.z_entry.bias
    z_pre.append(zp)
    z = act_value(p.z_entry.activation, zp)
    z_values.append(z)
    for j, lyr in enumerate(p.z_layers):
        zp = us[j] @ lyr.w_zu.T + a @ lyr.w_za.T + z @ lyr.w_zz.T + lyr.bias
        z_pre.append(zp)
        z = act_value(lyr.activation, zp)
        z_values.append(z)
    return z, u_inputs, u_pre, us, z_pre, z_values


def picnn_forward(p: Picnn, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Evaluate the network; returns one value per head."""
    sb, ab, single = _as_batch_pair(p, s, a)
    out, *_ = _forward_cached(p, sb, ab)
    return out[0] if single else out


def picnn_grad_action(
    p: Picnn, s: np.ndarray, a: np.ndarray, head_weights: np.ndarray
) -> np.ndarray:
    """Gradient of <head_weights, f(s,a)> with respect to the action.

    Subgradients at ReLU kinks use the zero-side convention. Only the
    z-path is traversed; the state path does not touch the action.
    """
    sb, ab, single = _as_batch_pair(p, s, a)
    hw = np.asarray(head_weights, dtype=np.float64)
    if hw.ndim == 1:
        hw = np.broadcast_to(hw[None, :], (sb.shape[0], hw.shape[0]))
    _, _, _, _, z_pre, _ = _forward_cached(p, sb, ab)
    ga = np.zeros((sb.shape[0], p.action_dim))
    delta = hw
    for j in range(len(p.z_layers) - 1, -1, -1):
        lyr = p.z_layers[j]
        dz = delta * act_slope(lyr.activation, z_pre[j + 1])
        ga += dz @ lyr.w_za
        delta = dz @ lyr.w_zz
    dz = delta * act_slope(p.z_entry.activation, z_pre[0])
    ga += dz @ p.z_entry.w_za
    return ga[0] if single else ga


def picnn_value_and_grad_action(
    p: Picnn, s: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """One shared forward pass returning f(s,a) plus the per-head action
    gradients (list of (n, action_dim), one entry per head)."""
    sb, ab, single = _as_batch_pair(p, s, a)
    out, _, _, _, z_pre, _ = _forward_cached(p, sb, ab)
    grads = []
    for h in range(p.heads):
        hw = np.zeros((sb.shape[0], p.heads))
        hw[:, h] = 1.0
        ga = np.zeros((sb.shape[0], p.action_dim))
        delta = hw
        for j in range(len(p.z_layers) - 1, -1, -1):
            lyr = p.z_layers[j]
            dz = delta * act_slope(lyr.activation, z_pre[j + 1])
            ga += dz @ lyr.w_za
            delta = dz @ lyr.w_zz
        dz = delta * act_slope(p.z_entry.activation, z_pre[0])
        ga += dz @ p.z_entry.w_za
        grads.append(ga[0] if single else ga)
    return (out[0] if single else out), grads


def picnn_backward(
    p: Picnn, s: np.ndarray, a: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full reverse pass for <upstream, f(s,a)>.

    Returns ``(flat_param_grads, grad_s, grad_a)``; the flat gradient
    matches the ordering of Picnn.flat(). Parameter gradients are summed
    over the batch.
    """
    sb, ab, single = _as_batch_pair(p, s, a)
    ub = np.asarray(upstream, dtype=np.float64)
    if ub.ndim == 1:
        ub = np.broadcast_to(ub[None, :], (sb.shape[0], ub.shape[0]))
    _, u_inputs, u_pre, us, z_pre, z_values = _forward_cached(p, sb, ab)

    n = len(p.z_layers)
    du = [np.zeros_like(u) for u in us]
    ga = np.zeros((sb.shape[0], p.action_dim))
    gs = np.zeros((sb.shape[0], p.state_dim))
    z_grads: list[tuple] = [None] * n
    delta = ub
    for j in range(n - 1, -1, -1):
        lyr = p.z_layers[j]
        dz = delta * act_slope(lyr.activation, z_pre[j + 1])
        z_in = z_values[j]
        z_grads[j] = (dz.T @ us[j], dz.T @ ab, dz.T @ z_in, dz.sum(axis=0))
        ga += dz @ lyr.w_za
        du[j] += dz @ lyr.w_zu
        delta = dz @ lyr.w_zz
    dz0 = delta * act_slope(p.z_entry.activation, z_pre[0])
    entry_grads = (dz0.T @ sb, dz0.T @ ab, dz0.sum(axis=0))
    ga += dz0 @ p.z_entry.w_za
    gs += dz0 @ p.z_entry.w_zs

    u_grads: list[tuple] = [None] * len(p.u_layers)
    for i in range(len(p.u_layers) - 1, -1, -1):
        lyr = p.u_layers[i]
        dz = du[i] * act_slope(lyr.activation, u_pre[i])
        u_grads[i] = (dz.T @ u_inputs[i], dz.sum(axis=0))
        back = dz @ lyr.weight
        if i > 0:
            du[i - 1] += back
        else:
            gs += back

    parts = []
    for dw, db in u_grads:
        parts += [dw.ravel(), db]
    parts += [entry_grads[0].ravel(), entry_grads[1].ravel(), entry_grads[2]]
    for dwu, dwa, dwz, db in z_grads:
        parts += [dwu.ravel(), dwa.ravel(), dwz.ravel(), db]
    flat = np.concatenate(parts)
    return flat, (gs[0] if single else gs), (ga[0] if single else ga)


def min_wzz(p: Picnn) -> float:
    """Smallest recurrent z-weight entry; >= 0 under the invariant."""
    return min(float(lyr.w_zz.min()) for lyr in p.z_layers) if p.z_layers else 0.0
