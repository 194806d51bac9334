"""Base action-selection policies and the gradient-bandit referee.

All action indices are 0-based. Every argmax breaks ties towards the lowest
action index so that runs are reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class NumericalFailure(ArithmeticError):
    """Raised when a linear-algebra step produces non-finite values."""


class PolicyChoice(enum.IntEnum):
    """Which base policy the referee picked for a step."""

    CONTEXTUAL = 0
    TRANSITION_MAB = 1


# ---------------------------------------------------------------------------
# Multi-armed bandit (UCB1 / discounted UCB)
# ---------------------------------------------------------------------------


@dataclass
class MabArmState:
    mean_reward: float = 0.0
    play_count: int = 0


def ucb_score(arm: MabArmState, t: int, alpha_b: float) -> float:
    """Optimistic score ``mean + alpha_b * sqrt(2 ln t / n)``; untried arms get +inf."""
    if arm.play_count == 0:
        return math.inf
    return arm.mean_reward + alpha_b * math.sqrt(2.0 * math.log(t) / arm.play_count)


def discounted_mean_update(mean: float, reward: float, gamma: float) -> float:
    return mean + gamma * (reward - mean)


class MabArms:
    """Per-action reward means and play counts of one UCB bandit.

    Parameters
    ----------
    num_actions : int
        Number of arms ``K``.
    gamma : float or None
        Discount step for the running mean. ``None`` gives the stationary
        sample average (step ``1/n``).
    """

    def __init__(self, num_actions: int, gamma: float | None = None):
        if num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        self.num_actions = num_actions
        self.gamma = gamma
        self.means = [0.0] * num_actions
        self.counts = [0] * num_actions

    def __len__(self) -> int:
        return self.num_actions

    def __getitem__(self, a: int) -> MabArmState:
        return MabArmState(self.means[a], self.counts[a])

    def update(self, action: int, reward: float) -> None:
        self.counts[action] += 1
        step = 1.0 / self.counts[action] if self.gamma is None else self.gamma
        self.means[action] = discounted_mean_update(self.means[action], reward, step)

    def score(self, action: int, t: int, alpha_b: float) -> float:
        n = self.counts[action]
        if n == 0:
            return math.inf
        return self.means[action] + alpha_b * math.sqrt(2.0 * math.log(t) / n)


def mab_select(
    arms: MabArms | Sequence[MabArmState],
    candidates: Sequence[int],
    t: int,
    alpha_b: float,
) -> int:
    """Return the candidate with the highest UCB score (lowest index on ties)."""
    if len(candidates) == 0:
        raise ValueError("no candidates")
    if isinstance(arms, MabArms):
        score = lambda a: arms.score(a, t, alpha_b)  # noqa: E731
    else:
        score = lambda a: ucb_score(arms[a], t, alpha_b)  # noqa: E731
    best, best_score = -1, -math.inf
    for a in sorted(candidates):
        s = score(a)
        if s > best_score or best < 0:
            best, best_score = a, s
    return best


# ---------------------------------------------------------------------------
# Linear contextual bandits (disjoint ridge models)
# ---------------------------------------------------------------------------


@dataclass
class LinearArmModel:
    """Ridge statistics of one action: ``A = I + sum x x^T`` and ``b = sum r x``.

    ``design`` and ``reward_acc`` may be views into a :class:`LinearModels`
    stack, in which case in-place updates are visible there.
    """

    design: np.ndarray
    reward_acc: np.ndarray

    @classmethod
    def fresh(cls, dimension: int) -> "LinearArmModel":
        return cls(np.eye(dimension), np.zeros(dimension))

    @property
    def dimension(self) -> int:
        return self.reward_acc.shape[0]


class LinearModels:
    """Stacked per-action ridge models shared by all users of a run.

    ``design`` has shape ``(K, d, d)`` and ``reward_acc`` shape ``(K, d)``.
    Indexing returns a :class:`LinearArmModel` whose arrays are views.
    """

    def __init__(self, num_actions: int, dimension: int):
        self.num_actions = num_actions
        self.dimension = dimension
        self.design = np.broadcast_to(np.eye(dimension), (num_actions, dimension, dimension)).copy()
        self.reward_acc = np.zeros((num_actions, dimension))
        # Cached A^-1 and mu-hat, refreshed lazily by `refit`.
        self._inverse = self.design.copy()
        self._theta = self.reward_acc.copy()
        self._stale = np.zeros(num_actions, dtype=bool)

    def __len__(self) -> int:
        return self.num_actions

    def __getitem__(self, a: int) -> LinearArmModel:
        return LinearArmModel(self.design[a], self.reward_acc[a])

    def update(self, action: int, context: np.ndarray, reward: float) -> None:
        linucb_update(self[action], context, reward)
        self._stale[action] = True

    def refit(self) -> tuple[np.ndarray, np.ndarray]:
        """Recompute ``mu-hat`` and ``A^-1`` for every action touched since the last refit."""
        stale = np.flatnonzero(self._stale)
        if stale.size:
            inv = np.linalg.inv(self.design[stale])
            theta = np.einsum("kij,kj->ki", inv, self.reward_acc[stale])
            if not (np.all(np.isfinite(inv)) and np.all(np.isfinite(theta))):
                raise NumericalFailure("numerical failure")
            self._inverse[stale] = inv
            self._theta[stale] = theta
            self._stale[stale] = False
        return self._theta, self._inverse


def _check_finite(*arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure("numerical failure")


def ridge_fit(model: LinearArmModel) -> np.ndarray:
    """Ridge estimate ``mu-hat = A^-1 b`` (ridge constant 1 lives in ``A``'s identity start)."""
    _check_finite(model.design, model.reward_acc)
    try:
        mu = np.linalg.solve(model.design, model.reward_acc)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("numerical failure") from exc
    _check_finite(mu)
    return mu


def linucb_update(model: LinearArmModel, context: np.ndarray, reward: float) -> LinearArmModel:
    x = np.asarray(context, dtype=float)
    if x.shape != model.reward_acc.shape:
        raise ValueError(f"context dimension {x.shape} does not match model {model.reward_acc.shape}")
    model.design += np.outer(x, x)
    model.reward_acc += reward * x
    return model


def _as_stack(models: LinearModels | Sequence[LinearArmModel]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(theta, inverse)`` stacks for either container form."""
    if isinstance(models, LinearModels):
        return models.refit()
    design = np.stack([m.design for m in models])
    acc = np.stack([m.reward_acc for m in models])
    _check_finite(design, acc)
    inv = np.linalg.inv(design)
    theta = np.einsum("kij,kj->ki", inv, acc)
    _check_finite(inv, theta)
    return theta, inv


def _first_argmax(scores: np.ndarray) -> int:
    # np.argmax already returns the first maximum
    return int(np.argmax(scores))


def linucb_scores(context: np.ndarray, models, alpha: float) -> np.ndarray:
    theta, inv = _as_stack(models)
    x = np.asarray(context, dtype=float)
    if x.shape[0] != theta.shape[1]:
        raise ValueError(f"context dimension {x.shape[0]} does not match models ({theta.shape[1]})")
    width = np.einsum("i,kij,j->k", x, inv, x)
    return theta @ x + alpha * np.sqrt(np.maximum(width, 0.0))


def linucb_select(context: np.ndarray, models, alpha: float) -> int:
    """LinUCB choice over all actions: ``argmax x.mu_a + alpha sqrt(x A_a^-1 x)``."""
    return _first_argmax(linucb_scores(context, models, alpha))


def lints_select(context: np.ndarray, models, v: float, rng: np.random.Generator) -> int:
    """Linear Thompson sampling with posterior ``N(mu-hat_a, v^2 A_a^-1)`` per action."""
    theta, inv = _as_stack(models)
    x = np.asarray(context, dtype=float)
    if x.shape[0] != theta.shape[1]:
        raise ValueError(f"context dimension {x.shape[0]} does not match models ({theta.shape[1]})")
    try:
        chol = np.linalg.cholesky(inv)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("numerical failure") from exc
    z = rng.standard_normal(theta.shape)
    sample = theta + v * np.einsum("kij,kj->ki", chol, z)
    return _first_argmax(sample @ x)


# ---------------------------------------------------------------------------
# Referee: modified two-policy gradient bandit
# ---------------------------------------------------------------------------


@dataclass
class RefereeState:
    """Preferences ``H`` for (contextual bandit, transition MAB) and step size ``delta_r``."""

    step_size: float = 0.5
    preferences: list[float] = field(default_factory=lambda: [0.0, 0.0])


def referee_probabilities(state: RefereeState) -> tuple[float, float]:
    h0, h1 = state.preferences
    m = max(h0, h1)
    e0, e1 = math.exp(h0 - m), math.exp(h1 - m)
    p0 = e0 / (e0 + e1)
    return p0, 1.0 - p0


def referee_update(state: RefereeState, chosen: PolicyChoice, reward: float, pb_chosen: float) -> RefereeState:
    """Shift the chosen preference by ``d(r - pb)`` and the other by ``d(1 - 2r)(1 - pb)``.

    ``pb_chosen`` must be the probability the chosen policy had when it was sampled.
    """
    i = int(chosen)
    d = state.step_size
    state.preferences[i] += d * (reward - pb_chosen)
    state.preferences[1 - i] += d * (1.0 - 2.0 * reward) * (1.0 - pb_chosen)
    return state
