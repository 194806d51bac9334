"""Mean-field dynamics of the two-policy referee.

The referee's probability of picking the better policy follows, for small
step sizes, the scalar ODE implemented by :func:`ode_rhs`. This module
integrates it, gives its non-trivial fixed point in closed form and checks
both against Monte-Carlo runs of the actual referee update.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import NumericalFailure, PolicyChoice, RefereeState, referee_probabilities, referee_update


@dataclass(frozen=True)
class DynamicsParams:
    """``gap`` is the mean-reward difference between the better and the worse policy."""

    delta_r: float = 0.5
    r_star: float = 1.0
    gap: float = 0.5
    p0: float = 0.5

    def __post_init__(self):
        if not self.delta_r > 0:
            raise ValueError("delta_r must be positive")
        if not 0.0 <= self.r_star <= 1.0:
            raise ValueError("r_star must lie in [0, 1]")
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        if not 0.0 <= self.r_star - self.gap <= 1.0:
            raise ValueError("r_star - gap must lie in [0, 1]")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")

    @property
    def worse_mean(self) -> float:
        return self.r_star - self.gap


def softmax_jacobian_entry(pb, k: int, j: int) -> float:
    """Derivative of softmax output ``k`` with respect to preference ``j``."""
    return float(pb[k] * ((k == j) - pb[j]))


def softmax_jacobian(pb) -> np.ndarray:
    pb = np.asarray(pb, dtype=float)
    return np.diag(pb) - np.outer(pb, pb)


def ode_rhs(p: float, params: DynamicsParams) -> float:
    d, g, r = params.delta_r, params.gap, params.r_star
    return d * p * (g - r + p * (2 * p - 3) * (g * p - r + 1) + 1)


def c_infinity(params: DynamicsParams) -> float:
    """Interior equilibrium of :func:`ode_rhs` (the long-run better-policy probability)."""
    g, r = params.gap, params.r_star
    if g == 0:
        raise ZeroDivisionError("undefined (division by zero); no preference equilibrium predicted")
    disc = 9 * g * g - 4 * g * r + 4 * g + 4 * r * r - 8 * r + 4
    c = (g + 2 * r + math.sqrt(disc) - 2) / (4 * g)
    if -1e-12 <= c < 0.0 or 1.0 < c <= 1.0 + 1e-12:
        c = min(1.0, max(0.0, c))
    if not 0.0 <= c <= 1.0:
        raise NumericalFailure(f"equilibrium {c!r} outside [0, 1]")
    return c


def _clamp(p: float) -> float:
    if 0.0 <= p <= 1.0:
        return p
    excess = -p if p < 0 else p - 1.0
    if excess >= 1e-9:
        raise NumericalFailure(f"trajectory left [0, 1]: p={p!r}")
    warnings.warn(f"clamping p={p!r} back into [0, 1]", RuntimeWarning, stacklevel=3)
    return min(1.0, max(0.0, p))


def integrate_dynamics(params: DynamicsParams, t_end: float, dt: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 from ``p0`` to ``t_end``; returns ``(times, p)``.

    The step is shrunk slightly if needed so the grid lands on ``t_end``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    n = max(1, math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n if n else 0.0
    f = lambda p: ode_rhs(p, params)  # noqa: E731

    ps = np.empty(n + 1)
    p = ps[0] = params.p0
    for i in range(n):
        k1 = f(p)
        k2 = f(p + 0.5 * h * k1)
        k3 = f(p + 0.5 * h * k2)
        k4 = f(p + h * k3)
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(p):
            raise NumericalFailure(f"non-finite state at step {i + 1}")
        p = ps[i + 1] = _clamp(p)
    return np.linspace(0.0, t_end, n + 1), ps


def expected_step_change(p: float, params: DynamicsParams) -> float:
    """Exact one-step expectation of the change in the better policy's probability.

    Enumerates which policy is picked and whether it pays out, applies the
    referee update to preferences consistent with ``p`` and averages the
    resulting probability shift.
    """
    means = (params.r_star, params.worse_mean)
    total = 0.0
    for chosen in PolicyChoice:
        pick = p if chosen is PolicyChoice.CONTEXTUAL else 1.0 - p
        for reward, w in ((1.0, means[chosen]), (0.0, 1.0 - means[chosen])):
            if pick * w == 0.0:
                continue
            state = _referee_at(p, params.delta_r)
            pb = referee_probabilities(state)[chosen]
            referee_update(state, chosen, reward, pb)
            total += pick * w * (referee_probabilities(state)[0] - p)
    return total


def _referee_at(p: float, step: float) -> RefereeState:
    return RefereeState(step, [math.log(p / (1.0 - p)), 0.0])


@dataclass
class MonteCarloResult:
    mean_pb: np.ndarray
    mean_inferior_pulls: np.ndarray


def monte_carlo_two_policy(
    params: DynamicsParams,
    horizon: int,
    replications: int,
    rng: np.random.Generator,
    vectorized: bool = True,
) -> MonteCarloResult:
    """Run the referee against two Bernoulli sources.

    Slot 0 is the better policy (mean ``r_star``), slot 1 the worse one.
    ``mean_pb[t]`` is the across-replication mean selection probability of
    the better policy at step ``t`` (before that step's draw), so
    ``mean_pb[0] == p0``. ``mean_inferior_pulls[t]`` counts worse-policy picks
    in steps ``0..t``.

    ``vectorized=False`` loops over :class:`~combine_bandits.core.RefereeState`
    objects with the library update, consuming the same random numbers.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    means = np.array([params.r_star, params.worse_mean])
    if np.any((means < 0) | (means > 1)):
        raise ValueError(f"invalid Bernoulli means {means.tolist()}")
    run = _mc_vectorized if vectorized else _mc_reference
    pb, worse = run(params, means, horizon, replications, rng)
    return MonteCarloResult(pb.mean(axis=1), np.cumsum(worse, axis=0).mean(axis=1))


def _mc_vectorized(params, means, horizon, n, rng):
    d = params.delta_r
    h = np.zeros((2, n))
    h[0] = math.log(params.p0 / (1.0 - params.p0))
    pbs = np.empty((horizon, n))
    worse = np.empty((horizon, n), dtype=np.int64)
    cols = np.arange(n)
    for t in range(horizon):
        u_pick, u_reward = rng.random((2, n))
        m = np.maximum(h[0], h[1])
        e0, e1 = np.exp(h[0] - m), np.exp(h[1] - m)
        p0 = e0 / (e0 + e1)
        pbs[t] = p0
        chosen = (u_pick >= p0).astype(np.int64)
        pb = np.where(chosen == 0, p0, 1.0 - p0)
        r = (u_reward < means[chosen]).astype(float)
        h[chosen, cols] += d * (r - pb)
        h[1 - chosen, cols] += d * (1.0 - 2.0 * r) * (1.0 - pb)
        worse[t] = chosen
    return pbs, worse


def _mc_reference(params, means, horizon, n, rng):
    states = [_referee_at(params.p0, params.delta_r) for _ in range(n)]
    pbs = np.empty((horizon, n))
    worse = np.empty((horizon, n), dtype=np.int64)
    for t in range(horizon):
        u_pick, u_reward = rng.random((2, n))
        for i, st in enumerate(states):
            p_better, p_worse = referee_probabilities(st)
            pbs[t, i] = p_better
            if u_pick[i] < p_better:
                chosen, pb = PolicyChoice.CONTEXTUAL, p_better
            else:
                chosen, pb = PolicyChoice.TRANSITION_MAB, p_worse
            r = float(u_reward[i] < means[chosen])
            referee_update(st, chosen, r, pb)
            worse[t, i] = int(chosen)
    return pbs, worse


def sublinearity_ratio(params: DynamicsParams, horizon: int, replications: int, rng: np.random.Generator) -> float:
    """``pulls(2T) / pulls(T)`` for mean cumulative worse-policy picks; < 2 means sublinear growth."""
    res = monte_carlo_two_policy(params, 2 * horizon, replications, rng)
    return float(res.mean_inferior_pulls[2 * horizon - 1] / res.mean_inferior_pulls[horizon - 1])


def theory_vs_simulation(
    params: DynamicsParams,
    horizon: int,
    replications: int,
    rng: np.random.Generator,
    dt: float = 0.1,
) -> dict[str, np.ndarray | float]:
    """Columns ``t``, ``p_theory``, ``p_empirical`` on integer steps plus the equilibrium."""
    times, ps = integrate_dynamics(params, horizon - 1, dt)
    steps = np.arange(horizon, dtype=float)
    mc = monte_carlo_two_policy(params, horizon, replications, rng)
    c_inf = c_infinity(params) if params.gap > 0 else float("nan")
    return {
        "t": steps,
        "p_theory": np.interp(steps, times, ps),
        "p_empirical": mc.mean_pb,
        "c_infinity": c_inf,
    }
