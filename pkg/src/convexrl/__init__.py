"""Risk-sensitive safe RL with convex decision surfaces.

The policy is not a network: each action is the solution of a convex
program over the action box, assembled from input-convex critics, a
closed-form Gaussian CVaR safety measure, and an exact penalty. Training
is standard off-policy TD3-style regression; acting is optimization.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, apply_overrides, load_config, resolved_toml
from .critics import (
    RewardCritic,
    SafetyCritic,
    TargetSmoothing,
    TransitionBatch,
    reward_critic_init,
    reward_critic_update,
    reward_q,
    safety_critic_init,
    safety_critic_update,
    safety_dist,
)
from .nets import Activation, DivergenceError
from .picnn import Picnn, picnn_forward, picnn_init, project_constraints
from .risk import CoefficientMode, GaussianCostReturn, RiskConfig, cvar, wasserstein2_sq
from .solver import SolverConfig, SolverResult, act, objective, solve
from .trainer import (
    EvalReport,
    Method,
    NetsConfig,
    TrainConfig,
    evaluate,
    load_agent,
    run_experiment,
    save_agent,
    train,
    train_seed,
)
from .watertank import TankParams, reset, step

__all__ = [
    "Activation",
    "CoefficientMode",
    "ConfigError",
    "DivergenceError",
    "EvalReport",
    "GaussianCostReturn",
    "Method",
    "NetsConfig",
    "Picnn",
    "RewardCritic",
    "RiskConfig",
    "SafetyCritic",
    "SolverConfig",
    "SolverResult",
    "TankParams",
    "TargetSmoothing",
    "TrainConfig",
    "TransitionBatch",
    "act",
    "apply_overrides",
    "cvar",
    "evaluate",
    "load_agent",
    "load_checkpoint",
    "load_config",
    "objective",
    "picnn_forward",
    "picnn_init",
    "project_constraints",
    "reset",
    "resolved_toml",
    "reward_critic_init",
    "reward_critic_update",
    "reward_q",
    "run_experiment",
    "safety_critic_init",
    "safety_critic_update",
    "safety_dist",
    "save_agent",
    "save_checkpoint",
    "solve",
    "step",
    "train",
    "train_seed",
    "wasserstein2_sq",
]
