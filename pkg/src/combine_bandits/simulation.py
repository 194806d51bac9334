"""Hidden-state simulation environment.

The hidden state is a truncated random walk on ``[0, 1]``. The unit interval
is partitioned into ``K`` sub-intervals, each with one best action, and the
agent sees the one-hot encoding of the best action for the (possibly
corrupted) state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


def uniform_partition(num_actions: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, num_actions + 1)


@dataclass
class EnvConfig:
    num_actions: int
    step_size: float = 0.01
    corruption_prob: float = 0.0
    walk_up_prob: float = 0.5
    horizon: int = 2500
    partition: np.ndarray | None = None
    # Reward probabilities for (best action, any other action).
    reward_probs: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if self.num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        if not 0.0 <= self.step_size <= 1.0:
            raise ValueError("step_size must lie in [0, 1]")
        for name in ("corruption_prob", "walk_up_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.partition is None:
            self.partition = uniform_partition(self.num_actions)
        else:
            self.partition = np.asarray(self.partition, dtype=float)
            q = self.partition
            if q.shape != (self.num_actions + 1,):
                raise ValueError(f"partition needs {self.num_actions + 1} breakpoints")
            if q[0] != 0.0 or q[-1] != 1.0 or np.any(np.diff(q) <= 0):
                raise ValueError("partition must increase strictly from 0 to 1")


@dataclass
class EnvState:
    hidden: float
    time: int = 0


def step_state(s: float, c: float, z: int) -> float:
    s = s + c if z == 1 else s - c
    return min(1.0, max(0.0, s))


def best_action(s: float, partition: Sequence[float]) -> int:
    """0-based index ``k`` with ``s`` in ``[q_k, q_{k+1})``; ``s = 1`` maps to the last action."""
    q = np.asarray(partition)
    k = int(np.searchsorted(q, s, side="right")) - 1
    return min(max(k, 0), len(q) - 2)


def gen_context(s: float, partition: Sequence[float], num_actions: int) -> np.ndarray:
    x = np.zeros(num_actions)
    x[best_action(s, partition)] = 1.0
    return x


def observe_with_flag(state: EnvState, cfg: EnvConfig, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Context plus the corruption flag; the flag is for harness bookkeeping only."""
    corrupted = cfg.corruption_prob > 0.0 and rng.random() < cfg.corruption_prob
    s = rng.random() if corrupted else state.hidden
    return gen_context(s, cfg.partition, cfg.num_actions), corrupted


def observe(state: EnvState, cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    return observe_with_flag(state, cfg, rng)[0]


def reward(
    state: EnvState,
    action: int,
    partition: Sequence[float],
    reward_probs: tuple[float, float] = (1.0, 0.0),
    rng: np.random.Generator | None = None,
) -> int:
    """Reward of ``action`` in ``state``; deterministic indicator with the default probabilities."""
    q_best, q_other = reward_probs
    q = q_best if action == best_action(state.hidden, partition) else q_other
    if q in (0.0, 1.0):
        return int(q)
    if rng is None:
        raise ValueError("stochastic rewards need an rng")
    return int(rng.random() < q)


def advance(state: EnvState, cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    if state.time >= cfg.horizon:
        raise RuntimeError(f"horizon {cfg.horizon} exceeded")
    z = int(rng.random() < cfg.walk_up_prob)
    return EnvState(step_state(state.hidden, cfg.step_size, z), state.time + 1)


class HiddenStateEnv:
    """One user's environment: state, config and a private generator.

    Call :meth:`observe`, then :meth:`reward` for the chosen action, then
    :meth:`advance`. The oracle action for regret is :meth:`best`.
    """

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator, initial_state: float | None = None):
        self.cfg = cfg
        self.rng = rng
        s0 = rng.random() if initial_state is None else float(initial_state)
        self.state = EnvState(s0, 0)
        self.last_corrupted = False
        self.trace: list[tuple[int, float, int, bool]] = []

    def observe(self) -> np.ndarray:
        x, self.last_corrupted = observe_with_flag(self.state, self.cfg, self.rng)
        self.trace.append((self.state.time, self.state.hidden, self.best(), self.last_corrupted))
        return x

    def best(self) -> int:
        return best_action(self.state.hidden, self.cfg.partition)

    def reward(self, action: int) -> int:
        return reward(self.state, action, self.cfg.partition, self.cfg.reward_probs, self.rng)

    def oracle_reward(self) -> float:
        # Expected reward of the best action; 1 under the default model.
        return float(self.cfg.reward_probs[0])

    def advance(self) -> None:
        self.state = advance(self.state, self.cfg, self.rng)


class CyclicEnv(HiddenStateEnv):
    """Deterministic variant: the best action advances ``k -> k+1 (mod K)`` every ``dwell`` steps."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator, dwell: int, start: int = 0):
        super().__init__(cfg, rng, initial_state=0.0)
        self.dwell = dwell
        self.start = start
        self._set_state()

    def _set_state(self) -> None:
        q = self.cfg.partition
        k = (self.start + self.state.time // self.dwell) % self.cfg.num_actions
        self.state.hidden = 0.5 * (q[k] + q[k + 1])

    def advance(self) -> None:
        if self.state.time >= self.cfg.horizon:
            raise RuntimeError(f"horizon {self.cfg.horizon} exceeded")
        self.state = EnvState(self.state.hidden, self.state.time + 1)
        self._set_state()


def write_state_trace(path: str | Path, trace: Sequence[tuple[int, float, int, bool]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "best_action", "corrupted"])
        for t, s, a, c in trace:
            w.writerow([t, repr(float(s)), a, int(c)])


# Group presets used by the simulation experiments: group A changes fast with
# clean contexts, group B drifts slowly behind fully corrupted contexts.
GROUP_PRESETS: dict[str, dict[str, float]] = {
    "A": {"step_size": 0.2, "corruption_prob": 0.0},
    "B": {"step_size": 0.01, "corruption_prob": 1.0},
}
