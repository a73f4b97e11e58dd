"""The policy as an optimizer: pick actions by minimizing a convex objective.

For a fixed state the decision surface

    -Q_r(s, a) + kappa * max{0, cvar(safety_dist(s, a)) - d}

is convex in the action: the reward critics store -Q_r as a PICNN (their
max under min-of-twins is convex), both safety heads are convex, the
tail coefficient is nonnegative, and a hinge against a constant keeps
convexity. Projected Adam over the action box therefore finds the global
minimizer up to tolerance, which is checked against grid search in the
test suite. Subgradients use the zero side at every kink: inactive hinge
and flat ReLU contribute nothing, and twin ties resolve to the first net.

The same engine serves two callers: `solve` (acting; restarts plus early
stopping) and `solve_batch` (bootstrap targets; a fixed small iteration
budget, warm-started from the stored actions, one vectorized pass for a
whole replay batch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .critics import RewardCritic, SafetyCritic
from .nets import Activation, DivergenceError, act_slope, act_value
from .picnn import picnn_value_and_grad_action
from .risk import RiskConfig, risk_coefficient


@dataclass
class SolverConfig:
    kappa: float = 10.0
    max_iters: int = 100
    tol: float = 1e-5
    lr: float = 0.05
    restarts: int = 2
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ValueError(f"solver.kappa must be >= 0, got {self.kappa}")
        if self.max_iters < 1:
            raise ValueError(f"solver.max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"solver.tol must be > 0, got {self.tol}")
        if self.lr <= 0:
            raise ValueError(f"solver.lr must be > 0, got {self.lr}")
        if self.restarts < 1:
            raise ValueError(f"solver.restarts must be >= 1, got {self.restarts}")


@dataclass
class SolverResult:
    action: np.ndarray
    objective: float
    iterations: int
    converged: bool
    constraint_violation: float
    restart_objectives: list[float] = field(default_factory=list)


def _pair(s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Broadcast a single state against a batch of candidate actions."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2 and s.ndim == 1:
        s = np.broadcast_to(s, (a.shape[0], s.shape[0]))
    return s, a


def _safety_terms(
    sc: SafetyCritic, S: np.ndarray, A: np.ndarray, use_target: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """CVaR-ready head values and their action gradients, twin-aggregated."""
    net = sc.target if use_target else sc.net
    out, gs = picnn_value_and_grad_action(net, S, A)
    mean, raw = out[:, 0], out[:, 1]
    std = act_value(Activation.SOFTPLUS, raw) + sc.std_floor
    g_mean = gs[0]
    g_std = act_slope(Activation.SOFTPLUS, raw)[:, None] * gs[1]
    second = sc.target2 if use_target else sc.net2
    if second is not None:
        out2, gs2 = picnn_value_and_grad_action(second, S, A)
        m2, raw2 = out2[:, 0], out2[:, 1]
        s2 = act_value(Activation.SOFTPLUS, raw2) + sc.std_floor
        g_m2 = gs2[0]
        g_s2 = act_slope(Activation.SOFTPLUS, raw2)[:, None] * gs2[1]
        pick_m = (m2 > mean)[:, None]
        pick_s = (s2 > std)[:, None]
        g_mean = np.where(pick_m, g_m2, g_mean)
        g_std = np.where(pick_s, g_s2, g_std)
        mean = np.maximum(mean, m2)
        std = np.maximum(std, s2)
    return mean, std, g_mean, g_std


def _objective_terms(
    S: np.ndarray,
    A: np.ndarray,
    rc: RewardCritic,
    sc: SafetyCritic,
    risk: RiskConfig,
    d: float,
    kappa: float,
    use_target: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Objective value, its action gradient, and the hinge violation, rowwise."""
    n1 = rc.target1 if use_target else rc.net1
    n2 = rc.target2 if use_target else rc.net2
    f1, g1 = picnn_value_and_grad_action(n1, S, A)
    f2, g2 = picnn_value_and_grad_action(n2, S, A)
    v1, v2 = f1[:, 0], f2[:, 0]
    take1 = (v1 >= v2)[:, None]
    value = np.maximum(v1, v2)  # equals -min(Q_r1, Q_r2)
    grad = np.where(take1, g1[0], g2[0])

    mean, std, g_mean, g_std = _safety_terms(sc, S, A, use_target)
    hinge = mean + risk_coefficient(risk) * std - d
    violation = np.maximum(hinge, 0.0)
    value = value + kappa * violation
    active = (hinge > 0.0)[:, None]
    grad = grad + kappa * active * (g_mean + risk_coefficient(risk) * g_std)
    return value, grad, violation


def objective(
    s: np.ndarray,
    a: np.ndarray,
    rc: RewardCritic,
    sc: SafetyCritic,
    risk: RiskConfig,
    d: float,
    kappa: float,
) -> np.ndarray:
    """Decision-surface value at (s, a); accepts a batch of actions."""
    s, a = _pair(s, a)
    single = a.ndim == 1
    S = s[None, :] if single else s
    A = a[None, :] if single else a
    value, _, _ = _objective_terms(S, A, rc, sc, risk, d, kappa)
    return float(value[0]) if single else value


def _projected_adam(
    S: np.ndarray,
    A0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    value_grad_fn,
    max_iters: int,
    lr: float,
    tol: float | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, bool]:
    """Rowwise projected Adam keeping the best visited point per row.

    Returns (best actions, best values, violations at those actions,
    iterations run, whether every row met tol before max_iters).
    """
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    A = np.clip(A0, lo, hi)
    m = np.zeros_like(A)
    v = np.zeros_like(A)
    best_a = A.copy()
    best_val = np.full(A.shape[0], np.inf)
    best_viol = np.zeros(A.shape[0])
    converged = False
    iters = 0
    for t in range(1, max_iters + 1):
        value, grad, viol = value_grad_fn(S, A)
        if not np.all(np.isfinite(value)):
            raise DivergenceError("non-finite solver objective")
        better = value < best_val
        best_val = np.where(better, value, best_val)
        best_a = np.where(better[:, None], A, best_a)
        best_viol = np.where(better, viol, best_viol)

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        step = lr * mhat / (np.sqrt(vhat) + eps)
        A_new = np.clip(A - step, lo, hi)
        iters = t
        if tol is not None:
            pg = grad.copy()
            pg[(A <= lo) & (grad > 0)] = 0.0
            pg[(A >= hi) & (grad < 0)] = 0.0
            small_grad = np.linalg.norm(pg, axis=1) < tol
            small_step = np.linalg.norm(A_new - A, axis=1) < tol
            A = A_new
            if np.all(small_grad & small_step):
                converged = True
                break
        else:
            A = A_new
    value, _, viol = value_grad_fn(S, A)
    better = value < best_val
    best_val = np.where(better, value, best_val)
    best_a = np.where(better[:, None], A, best_a)
    best_viol = np.where(better, viol, best_viol)
    return best_a, best_val, best_viol, iters, converged


def solve(
    s: np.ndarray,
    rc: RewardCritic,
    sc: SafetyCritic,
    risk: RiskConfig,
    d: float,
    bounds: tuple[np.ndarray, np.ndarray],
    cfg: SolverConfig,
    warm: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    use_target: bool = False,
) -> SolverResult:
    """Minimize the decision surface over the action box for one state.

    Runs cfg.restarts descents in parallel rows: the first from the warm
    start (box center when none is given or cfg.warm_start is off), the
    rest from points drawn via the provided generator (a fixed internal
    seed when none is given, keeping the call deterministic). The best
    visited point across rows is returned, so the result never degrades
    the starting objective.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    s = np.asarray(s, dtype=np.float64)
    da = lo.shape[0]
    use_warm = warm is not None and cfg.warm_start
    first = np.clip(warm, lo, hi) if use_warm else 0.5 * (lo + hi)
    starts = [first]
    if cfg.restarts > 1:
        gen = rng if rng is not None else np.random.default_rng(12345)
        for _ in range(cfg.restarts - 1):
            starts.append(lo + gen.uniform(size=da) * (hi - lo))
    A0 = np.stack(starts)
    S = np.broadcast_to(s, (A0.shape[0], s.shape[0]))

    def fn(Sb, Ab):
        return _objective_terms(Sb, Ab, rc, sc, risk, d, cfg.kappa, use_target)

    best_a, best_val, best_viol, iters, converged = _projected_adam(
        S, A0, lo, hi, fn, cfg.max_iters, cfg.lr, cfg.tol)
    k = int(np.argmin(best_val))
    return SolverResult(
        action=best_a[k],
        objective=float(best_val[k]),
        iterations=iters,
        converged=converged,
        constraint_violation=float(best_viol[k]),
        restart_objectives=[float(x) for x in best_val],
    )


def solve_batch(
    S: np.ndarray,
    rc: RewardCritic,
    sc: SafetyCritic,
    risk: RiskConfig,
    d: float,
    bounds: tuple[np.ndarray, np.ndarray],
    warm: np.ndarray,
    iters: int,
    lr: float,
    kappa: float,
    use_target: bool = True,
) -> np.ndarray:
    """Cheap bootstrap solve: fixed iteration budget, one row per state."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)

    def fn(Sb, Ab):
        return _objective_terms(Sb, Ab, rc, sc, risk, d, kappa, use_target)

    best_a, _, _, _, _ = _projected_adam(S, warm, lo, hi, fn, iters, lr, None)
    return best_a


def act(
    s: np.ndarray,
    rc: RewardCritic,
    sc: SafetyCritic,
    risk: RiskConfig,
    d: float,
    bounds: tuple[np.ndarray, np.ndarray],
    cfg: SolverConfig,
    explore_noise: float,
    rng: np.random.Generator,
    warm: np.ndarray | None = None,
) -> tuple[np.ndarray, SolverResult]:
    """Solve, then jitter with clipped exploration noise (std in units of
    half the box width). Returns the action and the solver diagnostics."""
    if explore_noise < 0:
        raise ValueError(f"explore_noise must be >= 0, got {explore_noise}")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    res = solve(s, rc, sc, risk, d, (lo, hi), cfg, warm=warm)
    a = res.action
    if explore_noise > 0:
        a = a + rng.normal(0.0, explore_noise * 0.5 * (hi - lo), size=a.shape)
        a = np.clip(a, lo, hi)
    return a, res
