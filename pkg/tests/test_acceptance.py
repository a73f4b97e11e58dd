"""Acceptance gate: nine criteria, one test and one printed verdict each.

The expensive shared ingredient is a full default-scale experiment (two
methods x two tail levels x five seeds) built once per session; the
behavioral criteria (constraint tracking, risk ordering, variance
ordering) and the trained-network convexity check all read from it.
Every test prints "[criterion N] ... PASS/FAIL (...)" to the live
terminal before asserting, so a red criterion still reports its numbers.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from convexrl.checks import (
    convexity_suite,
    cvar_mc_suite,
    gradient_suite,
    solver_suite,
)
from convexrl.risk import (
    CoefficientMode,
    GaussianCostReturn,
    RiskConfig,
    cvar,
    risk_coefficient,
    wasserstein2_sq,
)
from convexrl.trainer import Method, TrainConfig, run_experiment, train


def verdict(capsys, num: int, name: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    """Default-config experiment grid; every seeded run plus its evaluation."""
    cfg = TrainConfig()
    out = tmp_path_factory.mktemp("acceptance_experiment")
    t0 = time.time()
    result = run_experiment(cfg, out, alphas=(0.1, 0.5))
    elapsed = time.time() - t0
    n_runs = sum(len(arm) for arm in result.runs.values())
    return SimpleNamespace(cfg=cfg, result=result, out=out,
                           elapsed=elapsed, n_runs=n_runs)


def final20_cost_means(results) -> list[float]:
    vals = []
    for res in results:
        rows = [r for r in res.rows if r.episode >= 0]
        tail = rows[int(0.8 * len(rows)):]
        vals.append(float(np.mean([r.cost_return for r in tail])))
    return vals


def final20_return_means(results) -> list[float]:
    vals = []
    for res in results:
        rows = [r for r in res.rows if r.episode >= 0]
        tail = rows[int(0.8 * len(rows)):]
        vals.append(float(np.mean([r.ret for r in tail])))
    return vals


def test_criterion_1_convexity_suite(experiment, capsys):
    t0 = time.time()
    at_init = convexity_suite(probes=1000, seed=7)
    trained = experiment.result.arm(Method.ACTOR_FREE, 0.5)[0]
    cfg = experiment.cfg
    after_training = convexity_suite(
        probes=1000, seed=8, rc=trained.rc, sc=trained.sc,
        risk=replace(cfg.risk, alpha=0.5), d=cfg.d, kappa=cfg.solver.kappa,
        bounds=cfg.env.bounds)
    elapsed = time.time() - t0
    updates = cfg.total_steps - cfg.warmup_steps
    ok = at_init.passed and after_training.passed and elapsed < 30.0
    verdict(capsys, 1, "convexity suite", ok,
            f"init: {at_init.detail}; after {updates} updates: "
            f"{after_training.detail}; {elapsed:.1f} s")


def test_criterion_2_gradient_suite(capsys):
    t0 = time.time()
    res = gradient_suite(configs=100, seed=11)
    elapsed = time.time() - t0
    ok = res.passed and elapsed < 60.0
    verdict(capsys, 2, "gradient suite", ok, f"{res.detail}; {elapsed:.1f} s")


def test_criterion_3_cvar_oracle(capsys):
    mc = cvar_mc_suite(samples=10_000_000, seed=13, alpha=0.1, rel_tol=5e-3)
    closed = cvar(GaussianCostReturn(0.0, 1.0), RiskConfig(alpha=0.1))
    ref_ok = abs(closed - 1.7550) < 5e-4

    from mpmath import mp

    mp.dps = 40
    worst = 0.0
    for alpha in (0.1, 0.5):
        lit = risk_coefficient(
            RiskConfig(alpha=alpha, coefficient_mode=CoefficientMode.PAPER_LITERAL))
        x = mp.mpf(alpha)
        oracle = (mp.exp(-x * x / 2) / mp.sqrt(2 * mp.pi)) / \
            ((1 + mp.erf(x / mp.sqrt(2))) / 2)
        worst = max(worst, abs(lit - float(oracle)))
    lit_ok = worst <= 1e-10
    ok = mc.passed and ref_ok and lit_ok
    verdict(capsys, 3, "CVaR oracle", ok,
            f"{mc.detail}; literal-mode worst diff {worst:.2e}")


def test_criterion_4_global_optimality(capsys):
    t0 = time.time()
    res = solver_suite(instances=100, seed=17)
    elapsed = time.time() - t0
    ok = res.passed and elapsed < 300.0
    verdict(capsys, 4, "global optimality vs grid", ok,
            f"{res.detail}; {elapsed:.1f} s")


def test_criterion_5_wasserstein_oracle(capsys):
    rng = np.random.default_rng(np.random.SeedSequence([23, 5]))
    n = 1_000_000
    worst = 0.0
    pairs = 0
    while pairs < 20:
        p = GaussianCostReturn(rng.uniform(-5, 5), rng.uniform(0.1, 3.0))
        q = GaussianCostReturn(rng.uniform(-5, 5), rng.uniform(0.1, 3.0))
        closed = wasserstein2_sq(p, q)
        # a 1% relative bound needs the target bounded away from zero
        if closed < 0.25:
            continue
        x = np.sort(p.mean + p.std * rng.standard_normal(n))
        y = np.sort(q.mean + q.std * rng.standard_normal(n))
        empirical = float(np.mean((x - y) ** 2))
        worst = max(worst, abs(closed - empirical) / closed)
        pairs += 1
    ok = worst <= 0.01
    verdict(capsys, 5, "Wasserstein oracle", ok,
            f"worst rel err {worst:.2e} over {pairs} pairs x {n} samples")


def test_criterion_6_constraint_tracking(experiment, capsys):
    cfg = experiment.cfg
    af05 = experiment.result.arm(Method.ACTOR_FREE, 0.5)
    af01 = experiment.result.arm(Method.ACTOR_FREE, 0.1)
    diverged = [res.seed for res in af05 + af01 if res.failed]
    m05 = float(np.mean(final20_cost_means(af05)))
    m01 = float(np.mean(final20_cost_means(af01)))
    threshold = cfg.d + 0.1 * abs(cfg.d)
    per_run = experiment.elapsed / experiment.n_runs
    ok = (not diverged) and m05 <= threshold and m01 < m05 and per_run <= 1800.0
    verdict(capsys, 6, "constraint tracking", ok,
            f"final-20% cost-return mean alpha=0.5: {m05:.1f} <= {threshold:.1f}, "
            f"alpha=0.1: {m01:.1f} < {m05:.1f}; diverged={diverged}; "
            f"{per_run:.0f} s/run over {experiment.n_runs} runs")


def test_criterion_7_risk_ordering(experiment, capsys):
    rep01 = experiment.result.arm_reports(Method.ACTOR_FREE, 0.1)
    rep05 = experiment.result.arm_reports(Method.ACTOR_FREE, 0.5)
    max_s1_01 = float(np.mean([r.mean_max_s1 for r in rep01]))
    max_s1_05 = float(np.mean([r.mean_max_s1 for r in rep05]))
    dist01 = float(np.mean([r.mean_goal_dist for r in rep01]))
    dist05 = float(np.mean([r.mean_goal_dist for r in rep05]))
    ok = max_s1_01 < max_s1_05 and dist01 >= dist05
    verdict(capsys, 7, "risk ordering", ok,
            f"mean max-s1 {max_s1_01:.3f} < {max_s1_05:.3f}; "
            f"mean goal distance {dist01:.3f} >= {dist05:.3f}")


def test_criterion_8_variance_ordering(experiment, capsys):
    stds = {}
    for method in (Method.ACTOR_FREE, Method.CVAR_TD3):
        for alpha in (0.1, 0.5):
            vals = final20_return_means(experiment.result.arm(method, alpha))
            stds[(method.value, alpha)] = float(np.std(vals))
    pooled_af = np.mean([stds[(Method.ACTOR_FREE.value, a)] for a in (0.1, 0.5)])
    pooled_bl = np.mean([stds[(Method.CVAR_TD3.value, a)] for a in (0.1, 0.5)])
    ratio = pooled_bl / pooled_af if pooled_af > 0 else float("inf")
    per_alpha = {a: stds[(Method.CVAR_TD3.value, a)] /
                 max(stds[(Method.ACTOR_FREE.value, a)], 1e-12)
                 for a in (0.1, 0.5)}
    ok = pooled_bl >= pooled_af
    verdict(capsys, 8, "variance ordering", ok,
            f"seed-std of final-window return, baseline/actor-free ratio "
            f"{ratio:.2f} (alpha=0.1: {per_alpha[0.1]:.2f}, "
            f"alpha=0.5: {per_alpha[0.5]:.2f})")


def test_criterion_9_determinism(tmp_path, capsys):
    cfg = TrainConfig(total_steps=3000, warmup_steps=500, seeds=[0])
    digests = []
    for name in ("first", "second"):
        out = tmp_path / name
        train(cfg, Method.ACTOR_FREE, out)
        digests.append(hashlib.sha256((out / "metrics.csv").read_bytes()).hexdigest())
    ok = digests[0] == digests[1]
    verdict(capsys, 9, "determinism", ok,
            f"metrics.csv sha256 {digests[0][:16]} == {digests[1][:16]}")
