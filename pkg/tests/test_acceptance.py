"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run on its own with ``pytest tests/test_acceptance.py -v`` (the summary lines
appear under "acceptance criteria" at the end of the run).
"""

import os
import time
from dataclasses import replace

import numpy as np
from scipy.special import softmax as scipy_softmax

from combine_bandits.baselines import LinearBanditAgent, UCBAgent
from combine_bandits.combine import VARIANTS, CombineAgent, RefereeMode
from combine_bandits.core import LinearArmModel, RefereeState, linucb_update, referee_probabilities, ridge_fit
from combine_bandits.dynamics import (
    DynamicsParams,
    c_infinity,
    integrate_dynamics,
    monte_carlo_two_policy,
    ode_rhs,
    softmax_jacobian_entry,
)
from combine_bandits.experiments import (
    ALGORITHMS,
    ExperimentSpec,
    SimulationSettings,
    StreamSettings,
    run_experiment,
    summarize,
    total_mean,
)
from combine_bandits.simulation import CyclicEnv, EnvConfig, HiddenStateEnv
from combine_bandits.streams import CorruptionMode, StreamSchema, savgol_smooth
from combine_bandits.transitions import AdjacencyMatrix, IndicatorState, adj_select, adjacency_update

WORKERS = max(1, os.cpu_count() or 1)
SEEDS = tuple(range(5))


def test_criterion_1_simulation_rank_order(criterion_report):
    spec = ExperimentSpec(
        algorithms=ALGORITHMS,
        seeds=SEEDS,
        horizon=2500,
        simulation=SimulationSettings(num_actions=(2, 5, 10), users_per_group=10),
    )
    start = time.perf_counter()
    rows = summarize(run_experiment(spec, workers=WORKERS))
    elapsed = time.perf_counter() - start

    checks = {}
    for macro in (False, True):
        mean = {(r.algorithm, r.group): (r.macro_mean if macro else r.mean) for r in rows}
        contextual_a = max(mean[("LinUCB", "A")], mean[("LinTS", "A")])
        mab_a = min(mean[("UCBBanditS", "A")], mean[("UCBBanditNS", "A")])
        contextual_b = min(mean[("LinUCB", "B")], mean[("LinTS", "B")])
        totals = {a: total_mean(rows, a, macro) for a in ALGORITHMS}
        best_softmax = min(totals["COMBINE-softmax"], totals["COMBINE-softmax common"])
        tag = "macro" if macro else "micro"
        checks[f"{tag} (a)"] = 5 * contextual_a <= mab_a
        checks[f"{tag} (b)"] = 3 * mean[("UCBBanditNS", "B")] <= contextual_b
        checks[f"{tag} (c)"] = best_softmax <= min(v for k, v in totals.items() if not k.startswith("COMBINE-softmax"))
    checks["runtime"] = elapsed < 600

    table = ", ".join(f"{a}={total_mean(rows, a):.1f}" for a in sorted(ALGORITHMS, key=lambda a: total_mean(rows, a)))
    passed = all(checks.values())
    failed = [name for name, ok in checks.items() if not ok]
    criterion_report(1, "rank order on the two-group simulation", passed,
                     f"failed {failed or 'none'}, {elapsed:.0f}s; totals {table}")
    assert passed, checks


def test_criterion_2_linucb_clean_regret(criterion_report):
    spec = ExperimentSpec(
        algorithms=("LinUCB",),
        seeds=SEEDS,
        horizon=2500,
        simulation=SimulationSettings(num_actions=(5,), groups={"A": {"step_size": 0.2, "corruption_prob": 0.0}}),
    )
    (row,) = summarize(run_experiment(spec, workers=WORKERS))
    passed = row.mean <= 100 * 3
    criterion_report(2, "LinUCB regret with clean contexts", passed,
                     f"mean per-user R(2500) = {row.mean:.1f} (bound 100, tolerance x3)")
    assert passed


def test_criterion_3_referee_dynamics(criterion_report):
    start = time.perf_counter()
    params = DynamicsParams(delta_r=0.05, r_star=1.0, gap=0.5, p0=0.5)
    mc = monte_carlo_two_policy(params, 2000, 2000, np.random.default_rng(0))
    times, ps = integrate_dynamics(params, 1999, 0.1)
    theory = np.interp(np.arange(2000), times, ps)
    gap = float(np.max(np.abs(mc.mean_pb - theory)))

    worst = 0.0
    for g in np.linspace(0.05, 1.0, 10):
        for r in np.linspace(g, 1.0, 10):
            p = DynamicsParams(0.5, float(r), float(g))
            worst = max(worst, abs(ode_rhs(c_infinity(p), p)))
    exact = c_infinity(DynamicsParams(0.5, 1.0, 0.5)) == 1.0
    elapsed = time.perf_counter() - start

    passed = gap <= 0.05 and worst <= 1e-9 and exact and elapsed < 60
    criterion_report(3, "referee ODE vs Monte-Carlo", passed,
                     f"max gap {gap:.4f}, max |rhs(C)| {worst:.1e}, C(0.5,1)==1: {exact}, {elapsed:.1f}s")
    assert passed


def _trace(agent, seed, corruption, steps=500, users=2, k=5):
    seqs = np.random.SeedSequence(seed).spawn(users)
    envs = [HiddenStateEnv(EnvConfig(k, step_size=0.2, corruption_prob=corruption, horizon=steps),
                           np.random.default_rng(s)) for s in seqs]
    out = []
    for t in range(1, steps + 1):
        for i, env in enumerate(envs):
            a = agent.select(i, env.observe(), t)
            r = env.reward(a)
            agent.update(i, r)
            out.append((i, a, r))
        agent.end_round(t)
        if t < steps:
            for env in envs:
                env.advance()
    return out


def test_criterion_4_frozen_referee_reductions(criterion_report):
    to_cb = replace(VARIANTS["COMBINE-UCB"], referee=RefereeMode.FORCE_CB)
    to_mab = replace(VARIANTS["LinUCB+UCBBanditNS"], referee=RefereeMode.FORCE_MAB)
    mismatches = 0
    for seed in range(10):
        a = _trace(CombineAgent(to_cb, 5, 5, 2, np.random.default_rng(seed)), seed, 0.0)
        b = _trace(LinearBanditAgent(5, 5, 2, np.random.default_rng(seed)), seed, 0.0)
        mismatches += a != b
        a = _trace(CombineAgent(to_mab, 5, 5, 2, np.random.default_rng(seed)), seed, 1.0)
        b = _trace(UCBAgent(5, 2, gamma=0.1), seed, 1.0)
        mismatches += a != b
    criterion_report(4, "frozen-referee reductions", mismatches == 0, f"{mismatches}/20 traces differ")
    assert mismatches == 0


def test_criterion_5_incremental_ridge(criterion_report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        d, m = int(rng.integers(1, 9)), int(rng.integers(0, 51))
        X = rng.normal(size=(m, d))
        r = rng.integers(0, 2, m).astype(float)
        model = LinearArmModel.fresh(d)
        for x, y in zip(X, r):
            linucb_update(model, x, y)
        batch = np.linalg.solve(X.T @ X + np.eye(d), X.T @ r)
        worst = max(worst, float(np.max(np.abs(ridge_fit(model) - batch), initial=0.0)))
    criterion_report(5, "incremental ridge equals batch", worst <= 1e-8, f"max abs diff {worst:.1e}")
    assert worst <= 1e-8


def test_criterion_6_adj_select_invariants(criterion_report):
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(10_000):
        k = int(rng.integers(1, 9))
        prev = None if rng.random() < 0.15 else int(rng.integers(k))
        reach = int(rng.integers(0, k + 1))
        reward = int(rng.integers(2))
        played = bool(rng.random() < 0.9)
        counts = rng.integers(1, 5, (k, k)).astype(float)
        adj = AdjacencyMatrix(counts.copy())
        cands, ind = adj_select(IndicatorState(previous=prev, reach=reach), adj, reward, played)
        if prev is None or not played:
            ok = cands == list(range(k)) and ind.reach == reach
        else:
            expected_reach = 0 if reward == 1 else min(reach + 1, k)
            order = sorted(range(k), key=lambda a: (-counts[prev, a], a))
            ok = (ind.reach == expected_reach and 0 <= ind.reach <= k
                  and len(cands) == min(ind.reach + 1, k) and cands == order[: len(cands)])
        before = adj.counts.copy()
        adjacency_update(adj, prev, int(rng.integers(k)), reward)
        ok = ok and bool(np.all(adj.counts >= before))
        violations += not ok
    criterion_report(6, "AdjSelect invariants", violations == 0, f"{violations} violations in 10000 cases")
    assert violations == 0


def test_criterion_7_softmax_transition_learning(criterion_report):
    k, dwell, horizon = 5, 100, 5000
    env = CyclicEnv(EnvConfig(k, corruption_prob=1.0, horizon=horizon), np.random.default_rng(7), dwell)
    agent = CombineAgent(VARIANTS["COMBINE-softmax"], k, k, 1, np.random.default_rng(70))
    for t in range(1, horizon + 1):
        a = agent.select(0, env.observe(), t)
        agent.update(0, env.reward(a))
        agent.end_round(t)
        if t < horizon:
            env.advance()
    probs = scipy_softmax(agent.users[0].preferences.prefs, axis=1)
    successor = np.array([probs[i, (i + 1) % k] for i in range(k)])
    passed = bool(np.all(successor >= 0.8))
    criterion_report(7, "softmax preferences learn the cyclic successor", passed,
                     "successor mass per row " + np.array2string(successor, precision=3))
    assert passed


def test_criterion_8_stream_corruption(criterion_report):
    def run(prob, algorithms):
        spec = ExperimentSpec(
            environment="stream",
            algorithms=algorithms,
            seeds=SEEDS,
            horizon=2000,
            stream=StreamSettings(schema=StreamSchema(stream_id_column="stream_id", labels=(1, 2, 3)),
                                  corruption=CorruptionMode("UniformBox", prob)),
        )
        return {r.algorithm: r.mean for r in summarize(run_experiment(spec, workers=WORKERS))}

    lin = [run(p, ("LinUCB",))["LinUCB"] for p in (0.0, 0.5, 1.0)]
    full = run(1.0, ("COMBINE-softmax",))["COMBINE-softmax"]
    monotone = lin[2] >= 0.95 * lin[1] and lin[1] >= 0.95 * lin[0]
    passed = monotone and full < lin[2]
    criterion_report(8, "stream replay corruption ordering", passed,
                     f"LinUCB p=0/0.5/1: {lin[0]:.1f}/{lin[1]:.1f}/{lin[2]:.1f}; COMBINE-softmax p=1: {full:.1f}")
    assert passed


def test_criterion_9_numerical_checks(criterion_report):
    rng = np.random.default_rng(9)
    eps = 1e-5
    jac_err = 0.0
    for _ in range(200):
        h = rng.uniform(-5, 5, 2)
        p = referee_probabilities(RefereeState(1.0, list(h)))
        for j in range(2):
            up, dn = h.copy(), h.copy()
            up[j] += eps
            dn[j] -= eps
            fd = (np.array(referee_probabilities(RefereeState(1.0, list(up))))
                  - np.array(referee_probabilities(RefereeState(1.0, list(dn))))) / (2 * eps)
            for k in range(2):
                jac_err = max(jac_err, abs(fd[k] - softmax_jacobian_entry(p, k, j)))

    norm_err = max(abs(sum(referee_probabilities(RefereeState(1.0, list(rng.uniform(-300, 300, 2))))) - 1.0)
                   for _ in range(10_000))

    sg_err = 0.0
    t = np.linspace(-1, 1, 400)
    for order in range(0, 5):
        for degree in range(order + 1):
            y = np.polynomial.polynomial.polyval(t, rng.normal(size=degree + 1))
            for window in (order + 1 + order % 2, 31, 151):
                sg_err = max(sg_err, float(np.max(np.abs(savgol_smooth(y, window, order) - y))))

    passed = jac_err <= 1e-6 and norm_err <= 1e-12 and sg_err <= 1e-8
    criterion_report(9, "numerical checks", passed,
                     f"jacobian {jac_err:.1e}, normalization {norm_err:.1e}, smoothing {sg_err:.1e}")
    assert passed
