"""Critics over the convex action landscape.

Two kinds of value estimators share the PICNN substrate. The reward
critic stores the negated action value, so that minimizing the stored
surface over actions maximizes reward; callers see the conventional sign
through reward_q. The safety critic is a two-head network whose heads
parameterize a Gaussian over the discounted cost-return; it trains by
regressing both heads onto a bootstrapped target under the squared
2-Wasserstein distance. Both critics keep Polyak-averaged target copies,
and every parameter change ends with the convexity projection so the
nonnegative-weight invariant survives optimization.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .nets import Activation, AdamState, DivergenceError, act_slope, act_value, adam_step
from .picnn import Picnn, picnn_backward, picnn_forward, picnn_init, project_constraints
from .risk import GaussianCostReturn


@dataclass
class TransitionBatch:
    """Column-stacked replay sample: row i is one stored transition."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __post_init__(self) -> None:
        n = self.s.shape[0]
        for name in ("a", "r", "c", "s_next", "done"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"batch field {name} has mismatched length")

    def __len__(self) -> int:
        return self.s.shape[0]


@dataclass
class TargetSmoothing:
    """Clipped Gaussian noise added to bootstrap actions, in action units."""

    noise_std: float
    noise_clip: float
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class RewardCritic:
    net1: Picnn
    net2: Picnn
    target1: Picnn
    target2: Picnn
    opt1: AdamState
    opt2: AdamState


@dataclass
class SafetyCritic:
    net: Picnn
    target: Picnn
    opt: AdamState
    std_floor: float
    # optional conservative twin, aggregated by elementwise max
    net2: Picnn | None = None
    target2: Picnn | None = None
    opt2: AdamState | None = None

    def __post_init__(self) -> None:
        if self.std_floor <= 0:
            raise ValueError(f"std_floor must be > 0, got {self.std_floor}")


def reward_critic_init(
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    widths: tuple[int, ...] = (64, 64),
    lr: float = 1e-3,
    strict: bool = False,
) -> RewardCritic:
    net1 = picnn_init(state_dim, action_dim, rng, widths=widths, heads=1, strict=strict)
    net2 = picnn_init(state_dim, action_dim, rng, widths=widths, heads=1, strict=strict)
    return RewardCritic(
        net1=net1,
        net2=net2,
        target1=copy.deepcopy(net1),
        target2=copy.deepcopy(net2),
        opt1=AdamState(dim=net1.flat().size, lr=lr),
        opt2=AdamState(dim=net2.flat().size, lr=lr),
    )


def safety_critic_init(
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    std_floor: float,
    widths: tuple[int, ...] = (64, 64),
    lr: float = 1e-3,
    strict: bool = False,
    twin: bool = False,
) -> SafetyCritic:
    net = picnn_init(state_dim, action_dim, rng, widths=widths, heads=2, strict=strict)
    sc = SafetyCritic(
        net=net,
        target=copy.deepcopy(net),
        opt=AdamState(dim=net.flat().size, lr=lr),
        std_floor=std_floor,
    )
    if twin:
        sc.net2 = picnn_init(state_dim, action_dim, rng, widths=widths, heads=2,
                             strict=strict)
        sc.target2 = copy.deepcopy(sc.net2)
        sc.opt2 = AdamState(dim=sc.net2.flat().size, lr=lr)
    return sc


def reward_q(
    rc: RewardCritic,
    s: np.ndarray,
    a: np.ndarray,
    use_min_of_twins: bool = True,
    use_target: bool = False,
) -> np.ndarray:
    """Action value Q_r; the stored surface is its negation."""
    n1 = rc.target1 if use_target else rc.net1
    q1 = -picnn_forward(n1, s, a)[..., 0]
    if not use_min_of_twins:
        return q1
    n2 = rc.target2 if use_target else rc.net2
    q2 = -picnn_forward(n2, s, a)[..., 0]
    return np.minimum(q1, q2)


def _head_dist(out: np.ndarray, std_floor: float) -> tuple[np.ndarray, np.ndarray]:
    mean = out[..., 0]
    std = act_value(Activation.SOFTPLUS, out[..., 1]) + std_floor
    return mean, std


def safety_dist(
    sc: SafetyCritic,
    s: np.ndarray,
    a: np.ndarray,
    use_target: bool = False,
) -> GaussianCostReturn:
    """Gaussian cost-return estimate at (s, a); std is floored away from 0."""
    net = sc.target if use_target else sc.net
    mean, std = _head_dist(picnn_forward(net, s, a), sc.std_floor)
    second = sc.target2 if use_target else sc.net2
    if second is not None:
        m2, s2 = _head_dist(picnn_forward(second, s, a), sc.std_floor)
        mean = np.maximum(mean, m2)
        std = np.maximum(std, s2)
    return GaussianCostReturn(mean, std)


def smooth_target_actions(
    a: np.ndarray,
    noise: TargetSmoothing,
    rng: np.random.Generator,
) -> np.ndarray:
    if noise.noise_std > 0.0:
        eps = rng.normal(0.0, noise.noise_std, size=a.shape)
        a = a + np.clip(eps, -noise.noise_clip, noise.noise_clip)
    return np.clip(a, noise.lo, noise.hi)


def _check_finite_loss(loss: float) -> float:
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite critic loss: {loss}")
    return loss


def reward_regression_step(
    rc: RewardCritic,
    s: np.ndarray,
    a: np.ndarray,
    y: np.ndarray,
) -> float:
    """One Adam step pulling both twins' Q_r toward y; returns summed MSE."""
    loss = 0.0
    for net, opt in ((rc.net1, rc.opt1), (rc.net2, rc.opt2)):
        q = -picnn_forward(net, s, a)[:, 0]
        err = q - y
        loss = _check_finite_loss(loss + float(np.mean(err * err)))
        # d mean(err^2) / d stored_surface = -2 err / B
        upstream = (-2.0 * err / err.size)[:, None]
        grads, _, _ = picnn_backward(net, s, a, upstream)
        net.load_flat(adam_step(net.flat(), grads, opt))
        project_constraints(net)
    return _check_finite_loss(loss)


def reward_critic_update(
    rc: RewardCritic,
    batch: TransitionBatch,
    targets_action_fn,
    gamma: float,
    noise: TargetSmoothing,
    rng: np.random.Generator,
) -> float:
    """Twin regression onto r + gamma (1-done) min-of-target-twins."""
    a_next = smooth_target_actions(targets_action_fn(batch.s_next), noise, rng)
    q_next = reward_q(rc, batch.s_next, a_next, use_min_of_twins=True, use_target=True)
    y = batch.r + gamma * (1.0 - batch.done) * q_next
    return reward_regression_step(rc, batch.s, batch.a, y)


def safety_regression_step(
    sc: SafetyCritic,
    s: np.ndarray,
    a: np.ndarray,
    target_mean: np.ndarray,
    target_std: np.ndarray,
) -> float:
    """One Adam step on the mean squared-W2 loss against a fixed target."""
    loss = 0.0
    nets = [(sc.net, sc.opt)]
    if sc.net2 is not None:
        nets.append((sc.net2, sc.opt2))
    for net, opt in nets:
        out = picnn_forward(net, s, a)
        mean = out[:, 0]
        raw = out[:, 1]
        std = act_value(Activation.SOFTPLUS, raw) + sc.std_floor
        dm = mean - target_mean
        ds = std - target_std
        loss = _check_finite_loss(loss + float(np.mean(dm * dm + ds * ds)))
        n = dm.size
        upstream = np.stack(
            [2.0 * dm / n, (2.0 * ds / n) * act_slope(Activation.SOFTPLUS, raw)],
            axis=1,
        )
        grads, _, _ = picnn_backward(net, s, a, upstream)
        net.load_flat(adam_step(net.flat(), grads, opt))
        project_constraints(net)
    return _check_finite_loss(loss)


def safety_critic_update(
    sc: SafetyCritic,
    batch: TransitionBatch,
    targets_action_fn,
    gamma: float,
) -> float:
    """W2 regression onto (c + gamma (1-done) m', gamma (1-done) std')."""
    a_next = targets_action_fn(batch.s_next)
    g_next = safety_dist(sc, batch.s_next, a_next, use_target=True)
    keep = gamma * (1.0 - batch.done)
    target_mean = batch.c + keep * g_next.mean
    target_std = keep * g_next.std
    return safety_regression_step(sc, batch.s, batch.a, target_mean, target_std)


def polyak_update(net, target, tau: float):
    """target <- tau net + (1 - tau) target, then re-project if convex."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    target.load_flat(tau * net.flat() + (1.0 - tau) * target.flat())
    if isinstance(target, Picnn):
        project_constraints(target)
    return target
