"""Cascade two-tank process simulator.

A pump feeds the upper tank; the upper tank drains into the lower tank
through a Torricelli-law outlet, and the lower tank drains out of the
system. The control objective is to hold the lower level at a goal while
the upper level stays below a critical mark:

    ds1/dt = -k_out1 * sqrt(s1) + k_pump * a
    ds2/dt =  k_out1 * sqrt(s1) - k_out2 * sqrt(s2)

integrated by the explicit Euler method at the control period. Reward is
the negative tracking error of the lower tank, cost is the upper level's
excess over the critical mark (negative while safe). Levels clamp at
zero; no upper clamp is applied during training. The 20 cm clip exists
only for evaluation traces via eval_clip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TankParams:
    k_out1: float = 0.5
    k_out2: float = 0.5
    k_pump: float = 1.0
    dt: float = 2.0
    goal: float = 7.0
    l_crit: float = 10.0
    a_max: float = 5.0
    episode_len: int = 200
    substeps: int = 1
    # init levels drawn uniformly from [lo, hi] per tank
    init_low: float = 0.0
    init_high: float = 2.0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"env.dt must be > 0, got {self.dt}")
        if self.l_crit <= 0:
            raise ValueError(f"env.l_crit must be > 0, got {self.l_crit}")
        if self.a_max <= 0:
            raise ValueError(f"env.a_max must be > 0, got {self.a_max}")
        if self.episode_len < 1:
            raise ValueError(f"env.episode_len must be >= 1, got {self.episode_len}")
        if self.substeps < 1:
            raise ValueError(f"env.substeps must be >= 1, got {self.substeps}")
        if self.init_high < self.init_low:
            raise ValueError("env.init_high must be >= env.init_low")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([0.0]), np.array([self.a_max])


@dataclass
class EnvState:
    s1: float
    s2: float
    t: int = 0

    def vector(self) -> np.ndarray:
        return np.array([self.s1, self.s2])


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    c: float
    s_next: np.ndarray
    done: bool


def reward(s2: float, p: TankParams) -> float:
    return -abs(s2 - p.goal)


def cost(s1: float, p: TankParams) -> float:
    return s1 - p.l_crit


def step(state: EnvState, a: np.ndarray, p: TankParams) -> tuple[EnvState, float, float, bool]:
    """One control period of Euler integration; levels clamp at zero."""
    a_val = float(np.asarray(a).reshape(-1)[0])
    if not 0.0 <= a_val <= p.a_max:
        raise ValueError(f"action {a_val} outside [0, {p.a_max}]")
    s1, s2 = state.s1, state.s2
    h = p.dt / p.substeps
    for _ in range(p.substeps):
        out1 = p.k_out1 * math.sqrt(max(s1, 0.0))
        out2 = p.k_out2 * math.sqrt(max(s2, 0.0))
        s1 = max(s1 + h * (-out1 + p.k_pump * a_val), 0.0)
        s2 = max(s2 + h * (out1 - out2), 0.0)
    nxt = EnvState(s1=s1, s2=s2, t=state.t + 1)
    done = nxt.t >= p.episode_len
    return nxt, reward(s2, p), cost(s1, p), done


def reset(p: TankParams, rng: np.random.Generator) -> EnvState:
    s1 = rng.uniform(p.init_low, p.init_high)
    s2 = rng.uniform(p.init_low, p.init_high)
    return EnvState(s1=s1, s2=s2, t=0)


def episode_cost_return(traj, gamma: float) -> float:
    """Discounted sum of per-step costs; accepts transitions or raw costs."""
    total = 0.0
    g = 1.0
    for item in traj:
        total += g * (item.c if isinstance(item, Transition) else float(item))
        g *= gamma
    return total


def episode_return(traj, gamma: float = 1.0) -> float:
    """Discounted sum of per-step rewards; accepts transitions or raw rewards."""
    total = 0.0
    g = 1.0
    for item in traj:
        total += g * (item.r if isinstance(item, Transition) else float(item))
        g *= gamma
    return total


def eval_clip(state: EnvState, cap: float = 20.0) -> EnvState:
    """Clamp recorded levels for evaluation traces; never used in dynamics."""
    return EnvState(s1=min(state.s1, cap), s2=min(state.s2, cap), t=state.t)


def equilibrium_action(s1: float, p: TankParams) -> float:
    """Pump setting holding the upper tank at s1 indefinitely."""
    return p.k_out1 * math.sqrt(max(s1, 0.0)) / p.k_pump
