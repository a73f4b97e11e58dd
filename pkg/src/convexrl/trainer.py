"""Off-policy training loop and seeded experiment driver.

One code path serves both methods. The actor-free agent asks the convex
solver for every action, including the bootstrap action inside the TD
targets; the baseline swaps in a tanh-bounded actor network trained by
deterministic policy gradient on the identical decision surface. Critics,
risk arithmetic, environment, replay, and logging are shared, so the only
varying factor between methods is the policy mechanism.

Reproducibility contract: every random draw comes from a generator
spawned off the run seed, one independent stream per concern, and CSV
floats are written with repr so identical runs produce identical bytes.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .critics import (
    RewardCritic,
    SafetyCritic,
    TargetSmoothing,
    TransitionBatch,
    polyak_update,
    reward_critic_init,
    reward_critic_update,
    safety_critic_init,
    safety_critic_update,
)
from .nets import (
    Activation,
    AdamState,
    DivergenceError,
    Mlp,
    adam_step,
    backward,
    forward,
    grads_to_flat,
    mlp_init,
)
from .risk import RiskConfig
from .solver import SolverConfig, _objective_terms, act, solve, solve_batch
from .watertank import (
    EnvState,
    TankParams,
    episode_cost_return,
    eval_clip,
    reset,
    step,
)


class Method(str, Enum):
    ACTOR_FREE = "actor-free"
    CVAR_TD3 = "cvar-td3"


@dataclass
class NetsConfig:
    widths: tuple[int, ...] = (32, 32)
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    std_floor: float = 75.0
    safety_twin: bool = False
    strict: bool = False

    def __post_init__(self) -> None:
        self.widths = tuple(int(w) for w in self.widths)
        if any(w < 1 for w in self.widths):
            raise ValueError(f"nets.widths must be positive, got {self.widths}")
        if self.critic_lr <= 0 or self.actor_lr <= 0:
            raise ValueError("nets learning rates must be > 0")
        if self.std_floor <= 0:
            raise ValueError(f"nets.std_floor must be > 0, got {self.std_floor}")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    d: float = -250.0
    total_steps: int = 12000
    warmup_steps: int = 1000
    batch_size: int = 256
    tau: float = 0.005
    policy_delay: int = 2
    explore_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    bootstrap_iters: int = 10
    buffer_capacity: int = 100000
    eval_episodes: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    risk: RiskConfig = field(default_factory=RiskConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    env: TankParams = field(default_factory=TankParams)
    nets: NetsConfig = field(default_factory=NetsConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"trainer.gamma must lie in (0, 1), got {self.gamma}")
        for name in ("total_steps", "warmup_steps", "batch_size", "buffer_capacity",
                     "policy_delay", "bootstrap_iters", "eval_episodes"):
            if getattr(self, name) < 0 or (name in ("batch_size", "buffer_capacity",
                                                    "policy_delay", "bootstrap_iters")
                                           and getattr(self, name) < 1):
                raise ValueError(f"trainer.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"trainer.tau must lie in (0, 1], got {self.tau}")
        if self.explore_noise < 0 or self.target_noise < 0 or self.target_noise_clip < 0:
            raise ValueError("noise scales must be >= 0")
        if not self.seeds:
            raise ValueError("trainer.seeds must be nonempty")


class ReplayBuffer:
    """Fixed-capacity ring over transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int,
                 rng: np.random.Generator):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.rng = rng
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.c = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, c, s_next, done) -> None:
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.c[i] = c
        self.s_next[i] = s_next
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> TransitionBatch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return TransitionBatch(
            s=self.s[idx], a=self.a[idx], r=self.r[idx], c=self.c[idx],
            s_next=self.s_next[idx], done=self.done[idx],
        )


@dataclass
class BaselineActor:
    net: Mlp
    target: Mlp
    opt: AdamState
    lo: np.ndarray
    hi: np.ndarray

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)


def actor_init(state_dim: int, action_dim: int, rng: np.random.Generator,
               widths: tuple[int, ...], lr: float,
               lo: np.ndarray, hi: np.ndarray) -> BaselineActor:
    dims = [state_dim, *widths, action_dim]
    acts = [Activation.RELU] * len(widths) + [Activation.TANH]
    net = mlp_init(dims, acts, rng)
    return BaselineActor(net=net, target=copy.deepcopy(net),
                         opt=AdamState(dim=net.flat().size, lr=lr),
                         lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float))


def actor_forward(actor: BaselineActor, s: np.ndarray, use_target: bool = False) -> np.ndarray:
    net = actor.target if use_target else actor.net
    return actor.mid + actor.half * forward(net, s)


def actor_update(actor: BaselineActor, rc: RewardCritic, sc: SafetyCritic,
                 risk: RiskConfig, d: float, kappa: float, s: np.ndarray) -> float:
    """Descend the mean decision-surface value through the actor."""
    out = forward(actor.net, s)
    a = actor.mid + actor.half * out
    value, grad_a, _ = _objective_terms(s, a, rc, sc, risk, d, kappa)
    upstream = grad_a * actor.half / s.shape[0]
    grads, _ = backward(actor.net, s, upstream)
    flat = grads_to_flat(actor.net, grads)
    actor.net.load_flat(adam_step(actor.net.flat(), flat, actor.opt))
    loss = float(np.mean(value))
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite actor loss: {loss}")
    return loss


METRICS_COLUMNS = (
    "seed", "method", "alpha", "episode", "return", "cost_return",
    "critic_loss", "safety_loss", "solver_iters_mean", "constraint_violation_mean",
)


@dataclass
class EpisodeRow:
    seed: int
    method: str
    alpha: float
    episode: int
    ret: float
    cost_return: float
    critic_loss: float
    safety_loss: float
    solver_iters_mean: float
    constraint_violation_mean: float

    def values(self) -> tuple:
        return (self.seed, self.method, self.alpha, self.episode, self.ret,
                self.cost_return, self.critic_loss, self.safety_loss,
                self.solver_iters_mean, self.constraint_violation_mean)


@dataclass
class SeedRunResult:
    seed: int
    method: Method
    alpha: float
    rows: list[EpisodeRow]
    rc: RewardCritic
    sc: SafetyCritic
    actor: BaselineActor | None
    failed: bool = False


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "env", "explore", "sample", "target", "actor")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_agent(cfg: TrainConfig, method: Method, rngs) -> tuple[RewardCritic, SafetyCritic, BaselineActor | None]:
    lo, hi = cfg.env.bounds
    rc = reward_critic_init(2, 1, rngs["init"], widths=cfg.nets.widths,
                            lr=cfg.nets.critic_lr, strict=cfg.nets.strict)
    sc = safety_critic_init(2, 1, rngs["init"], std_floor=cfg.nets.std_floor,
                            widths=cfg.nets.widths, lr=cfg.nets.critic_lr,
                            strict=cfg.nets.strict, twin=cfg.nets.safety_twin)
    actor = None
    if method is Method.CVAR_TD3:
        actor = actor_init(2, 1, rngs["actor"], cfg.nets.widths,
                           cfg.nets.actor_lr, lo, hi)
    return rc, sc, actor


def train_seed(cfg: TrainConfig, method: Method, seed: int) -> SeedRunResult:
    """Train one seed; returns per-episode rows plus the final networks."""
    method = Method(method)
    rngs = _spawn_rngs(seed)
    rc, sc, actor = build_agent(cfg, method, rngs)
    env = cfg.env
    lo, hi = env.bounds
    half = 0.5 * (hi - lo)
    smoothing = TargetSmoothing(
        noise_std=cfg.target_noise * float(half[0]),
        noise_clip=cfg.target_noise_clip * float(half[0]),
        lo=lo, hi=hi,
    )
    buffer = ReplayBuffer(cfg.buffer_capacity, 2, 1, rngs["sample"])
    result = SeedRunResult(seed=seed, method=method, alpha=cfg.risk.alpha,
                           rows=[], rc=rc, sc=sc, actor=actor)

    state = reset(env, rngs["env"])
    warm: np.ndarray | None = None
    episode = 0
    ep_rewards: list[float] = []
    ep_costs: list[float] = []
    ep_closs: list[float] = []
    ep_sloss: list[float] = []
    ep_iters: list[float] = []
    ep_viol: list[float] = []

    def flush_episode() -> None:
        nonlocal episode
        result.rows.append(EpisodeRow(
            seed=seed, method=method.value, alpha=cfg.risk.alpha, episode=episode,
            ret=float(sum(ep_rewards)),
            cost_return=float(episode_cost_return(ep_costs, cfg.gamma)),
            critic_loss=float(np.mean(ep_closs)) if ep_closs else float("nan"),
            safety_loss=float(np.mean(ep_sloss)) if ep_sloss else float("nan"),
            solver_iters_mean=float(np.mean(ep_iters)) if ep_iters else 0.0,
            constraint_violation_mean=float(np.mean(ep_viol)) if ep_viol else 0.0,
        ))
        episode += 1
        ep_rewards.clear()
        ep_costs.clear()
        ep_closs.clear()
        ep_sloss.clear()
        ep_iters.clear()
        ep_viol.clear()

    for step_i in range(cfg.total_steps):
        s_vec = state.vector()
        if step_i < cfg.warmup_steps:
            a = rngs["explore"].uniform(lo, hi)
        elif method is Method.ACTOR_FREE:
            a, res = act(s_vec, rc, sc, cfg.risk, cfg.d, (lo, hi), cfg.solver,
                         cfg.explore_noise, rngs["explore"], warm=warm)
            ep_iters.append(float(res.iterations))
            ep_viol.append(res.constraint_violation)
        else:
            a = actor_forward(actor, s_vec)
            if cfg.explore_noise > 0:
                a = a + rngs["explore"].normal(0.0, cfg.explore_noise * half)
            a = np.clip(a, lo, hi)
        warm = a

        state_next, r, c, done = step(state, a, env)
        buffer.add(s_vec, a, r, c, state_next.vector(), done)
        ep_rewards.append(r)
        ep_costs.append(c)

        if step_i >= cfg.warmup_steps:
            batch = buffer.sample(cfg.batch_size)
            try:
                if method is Method.ACTOR_FREE:
                    a_next = solve_batch(batch.s_next, rc, sc, cfg.risk, cfg.d,
                                         (lo, hi), warm=batch.a,
                                         iters=cfg.bootstrap_iters,
                                         lr=cfg.solver.lr, kappa=cfg.solver.kappa,
                                         use_target=True)
                else:
                    a_next = actor_forward(actor, batch.s_next, use_target=True)
                bootstrap = lambda S: a_next
                ep_closs.append(reward_critic_update(
                    rc, batch, bootstrap, cfg.gamma, smoothing, rngs["target"]))
                ep_sloss.append(safety_critic_update(sc, batch, bootstrap, cfg.gamma))
                polyak_update(rc.net1, rc.target1, cfg.tau)
                polyak_update(rc.net2, rc.target2, cfg.tau)
                polyak_update(sc.net, sc.target, cfg.tau)
                if sc.net2 is not None:
                    polyak_update(sc.net2, sc.target2, cfg.tau)
                updates_done = step_i - cfg.warmup_steps
                if method is Method.CVAR_TD3 and updates_done % cfg.policy_delay == 0:
                    actor_update(actor, rc, sc, cfg.risk, cfg.d,
                                 cfg.solver.kappa, batch.s)
                    polyak_update(actor.net, actor.target, cfg.tau)
            except DivergenceError:
                result.failed = True
                result.rows.append(EpisodeRow(
                    seed=seed, method=method.value, alpha=cfg.risk.alpha,
                    episode=-1, ret=float("nan"), cost_return=float("nan"),
                    critic_loss=float("nan"), safety_loss=float("nan"),
                    solver_iters_mean=float("nan"),
                    constraint_violation_mean=float("nan"),
                ))
                return result

        if done:
            flush_episode()
            state = reset(env, rngs["env"])
            warm = None
        else:
            state = state_next

    return result


def agent_components(result: SeedRunResult) -> dict:
    comps = {
        "reward_net1": result.rc.net1, "reward_net2": result.rc.net2,
        "reward_target1": result.rc.target1, "reward_target2": result.rc.target2,
        "safety_net": result.sc.net, "safety_target": result.sc.target,
    }
    if result.sc.net2 is not None:
        comps["safety_net2"] = result.sc.net2
        comps["safety_target2"] = result.sc.target2
    if result.actor is not None:
        comps["actor_net"] = result.actor.net
        comps["actor_target"] = result.actor.target
    return comps


def save_agent(path, result: SeedRunResult, cfg: TrainConfig) -> None:
    save_checkpoint(path, agent_components(result), meta={
        "method": result.method.value,
        "alpha": cfg.risk.alpha,
        "seed": result.seed,
        "std_floor": cfg.nets.std_floor,
        "d": cfg.d,
        "gamma": cfg.gamma,
    })


def load_agent(path, cfg: TrainConfig) -> SeedRunResult:
    comps, meta = load_checkpoint(path)
    required = {"reward_net1", "reward_net2", "reward_target1", "reward_target2",
                "safety_net", "safety_target"}
    missing = required - set(comps)
    if missing:
        raise ValueError(f"checkpoint missing components: {sorted(missing)}")
    dim = comps["reward_net1"].flat().size
    rc = RewardCritic(net1=comps["reward_net1"], net2=comps["reward_net2"],
                      target1=comps["reward_target1"], target2=comps["reward_target2"],
                      opt1=AdamState(dim=dim), opt2=AdamState(dim=dim))
    sdim = comps["safety_net"].flat().size
    sc = SafetyCritic(net=comps["safety_net"], target=comps["safety_target"],
                      opt=AdamState(dim=sdim),
                      std_floor=float(meta.get("std_floor", cfg.nets.std_floor)))
    if "safety_net2" in comps:
        sc.net2 = comps["safety_net2"]
        sc.target2 = comps["safety_target2"]
        sc.opt2 = AdamState(dim=sdim)
    actor = None
    if "actor_net" in comps:
        lo, hi = cfg.env.bounds
        net = comps["actor_net"]
        actor = BaselineActor(net=net, target=comps["actor_target"],
                              opt=AdamState(dim=net.flat().size),
                              lo=lo, hi=hi)
    method = Method(meta.get("method", Method.ACTOR_FREE.value))
    return SeedRunResult(seed=int(meta.get("seed", 0)), method=method,
                         alpha=float(meta.get("alpha", cfg.risk.alpha)),
                         rows=[], rc=rc, sc=sc, actor=actor)


TRACE_COLUMNS = ("episode", "t", "s1", "s2", "a", "r", "c")
REPORT_COLUMNS = (
    "method", "alpha", "seed", "episodes", "mean_return", "std_return",
    "mean_cost_return", "std_cost_return", "mean_max_s1", "std_max_s1",
    "mean_goal_dist", "frac_steps_unsafe",
)


@dataclass
class EvalReport:
    episodes: int
    mean_return: float
    std_return: float
    mean_cost_return: float
    std_cost_return: float
    mean_max_s1: float
    std_max_s1: float
    mean_goal_dist: float
    frac_steps_unsafe: float
    traces: list[tuple] = field(default_factory=list)

    def row(self, method: str, alpha: float, seed: int) -> tuple:
        return (method, alpha, seed, self.episodes, self.mean_return,
                self.std_return, self.mean_cost_return, self.std_cost_return,
                self.mean_max_s1, self.std_max_s1, self.mean_goal_dist,
                self.frac_steps_unsafe)


def evaluate(agent: SeedRunResult, cfg: TrainConfig, episodes: int,
             seed: int = 0) -> EvalReport:
    """Noise-free rollouts; traces record clipped levels, report summarizes them."""
    env = cfg.env
    lo, hi = env.bounds
    rng = np.random.default_rng(np.random.SeedSequence([seed, 9001]))
    returns, cost_returns, max_s1s, goal_dists = [], [], [], []
    unsafe = 0
    total = 0
    traces: list[tuple] = []
    for ep in range(episodes):
        state = reset(env, rng)
        warm = None
        rewards: list[float] = []
        costs: list[float] = []
        levels: list[tuple[float, float]] = []
        for _ in range(env.episode_len):
            s_vec = state.vector()
            if agent.method is Method.ACTOR_FREE:
                res = solve(s_vec, agent.rc, agent.sc, cfg.risk, cfg.d, (lo, hi),
                            cfg.solver, warm=warm)
                a = res.action
            else:
                a = actor_forward(agent.actor, s_vec)
            warm = a
            state, r, c, done = step(state, a, env)
            clipped = eval_clip(state)
            rewards.append(r)
            costs.append(c)
            levels.append((clipped.s1, clipped.s2))
            traces.append((ep, state.t, clipped.s1, clipped.s2, float(a[0]), r, c))
            if done:
                break
        returns.append(float(sum(rewards)))
        cost_returns.append(float(episode_cost_return(costs, cfg.gamma)))
        s1s = [lv[0] for lv in levels]
        s2s = [lv[1] for lv in levels]
        max_s1s.append(max(s1s))
        goal_dists.append(float(np.mean([abs(v - env.goal) for v in s2s])))
        unsafe += sum(1 for v in s1s if v > env.l_crit)
        total += len(s1s)

    def stat(xs, f):
        return float(f(xs)) if xs else float("nan")

    return EvalReport(
        episodes=episodes,
        mean_return=stat(returns, np.mean), std_return=stat(returns, np.std),
        mean_cost_return=stat(cost_returns, np.mean),
        std_cost_return=stat(cost_returns, np.std),
        mean_max_s1=stat(max_s1s, np.mean), std_max_s1=stat(max_s1s, np.std),
        mean_goal_dist=stat(goal_dists, np.mean),
        frac_steps_unsafe=(unsafe / total) if total else float("nan"),
        traces=traces,
    )


def train(cfg: TrainConfig, method: Method, out_dir) -> list[SeedRunResult]:
    """Train every configured seed; writes metrics.csv and one checkpoint per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = [train_seed(cfg, method, seed) for seed in cfg.seeds]
    rows = [row.values() for res in results for row in res.rows]
    write_csv(out / "metrics.csv", METRICS_COLUMNS, rows)
    for res in results:
        save_agent(out / f"checkpoint_{Method(method).value}_seed{res.seed}.ckpt",
                   res, cfg)
    return results


AGGREGATE_COLUMNS = ("method", "alpha", "episode", "return_mean", "return_std",
                     "cost_return_mean", "cost_return_std", "n_seeds")


def aggregate_rows(results: list[SeedRunResult]) -> list[tuple]:
    """Per-episode mean and population std across seeds, per method and alpha."""
    groups: dict[tuple, dict[int, list[EpisodeRow]]] = {}
    for res in results:
        for row in res.rows:
            if row.episode < 0:
                continue
            key = (row.method, row.alpha)
            groups.setdefault(key, {}).setdefault(row.episode, []).append(row)
    out = []
    for (method, alpha) in sorted(groups):
        for episode in sorted(groups[(method, alpha)]):
            rows = groups[(method, alpha)][episode]
            rets = np.array([r.ret for r in rows])
            costs = np.array([r.cost_return for r in rows])
            out.append((method, alpha, episode,
                        float(rets.mean()), float(rets.std()),
                        float(costs.mean()), float(costs.std()), len(rows)))
    return out


@dataclass
class ExperimentResult:
    runs: dict
    reports: dict

    def arm(self, method: Method, alpha: float) -> list[SeedRunResult]:
        return self.runs[(Method(method).value, alpha)]

    def arm_reports(self, method: Method, alpha: float) -> list[EvalReport]:
        return self.reports[(Method(method).value, alpha)]


def run_experiment(cfg: TrainConfig, out_dir,
                   methods: tuple[Method, ...] = (Method.ACTOR_FREE, Method.CVAR_TD3),
                   alphas: tuple[float, ...] = (0.1, 0.5),
                   parallel_seeds: int = 1) -> ExperimentResult:
    """Full grid of method x alpha x seed; writes metrics, aggregate, report CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs: dict = {}
    reports: dict = {}
    jobs = [(Method(m), alpha) for m in methods for alpha in alphas]
    for method, alpha in jobs:
        arm_cfg = replace(cfg, risk=replace(cfg.risk, alpha=alpha))
        if parallel_seeds > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=parallel_seeds) as pool:
                results = list(pool.map(
                    train_seed, [arm_cfg] * len(cfg.seeds),
                    [method] * len(cfg.seeds), list(cfg.seeds)))
        else:
            results = [train_seed(arm_cfg, method, seed) for seed in cfg.seeds]
        for res in results:
            save_agent(out / f"checkpoint_{method.value}_alpha{alpha}_seed{res.seed}.ckpt",
                       res, arm_cfg)
        runs[(method.value, alpha)] = results
        reports[(method.value, alpha)] = [
            evaluate(res, arm_cfg, cfg.eval_episodes, seed=res.seed)
            for res in results
        ]
    all_rows = [row.values() for arm in runs.values() for res in arm for row in res.rows]
    write_csv(out / "metrics.csv", METRICS_COLUMNS, all_rows)
    write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS,
              aggregate_rows([res for arm in runs.values() for res in arm]))
    report_rows = []
    for (method, alpha), reps in reports.items():
        for res, rep in zip(runs[(method, alpha)], reps):
            report_rows.append(rep.row(method, alpha, res.seed))
    write_csv(out / "report.csv", REPORT_COLUMNS, report_rows)
    return ExperimentResult(runs=runs, reports=reports)
