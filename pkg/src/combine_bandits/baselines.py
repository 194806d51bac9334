"""Single-policy reference agents with the same step-wise interface as
:class:`~combine_bandits.combine.CombineAgent`.

These are deliberately independent of the COMBINE orchestrator so that the
orchestrator can be checked against them.
"""

from __future__ import annotations

import numpy as np

from .core import LinearModels, MabArms, PolicyChoice, lints_select, linucb_select, mab_select


class LinearBanditAgent:
    """Global LinUCB or LinTS model shared by all users."""

    def __init__(self, num_actions: int, dimension: int, num_users: int, rng: np.random.Generator,
                 kind: str = "LinUCB", alpha: float = 1.0, v: float = 0.2):
        if kind not in ("LinUCB", "LinTS"):
            raise ValueError(f"unknown contextual bandit {kind!r}")
        self.kind = kind
        self.alpha = alpha
        self.v = v
        self.rng = rng
        self.models = LinearModels(num_actions, dimension)
        self._pending: dict[int, tuple[int, np.ndarray]] = {}
        self.last_choice = [PolicyChoice.CONTEXTUAL] * num_users
        self.last_pb_cb = [1.0] * num_users

    def select(self, user: int, context: np.ndarray, t: int) -> int:
        if self.kind == "LinUCB":
            action = linucb_select(context, self.models, self.alpha)
        else:
            action = lints_select(context, self.models, self.v, self.rng)
        self._pending[user] = (action, context)
        return action

    def update(self, user: int, reward: float) -> None:
        action, context = self._pending.pop(user)
        self.models.update(action, context, reward)

    def end_round(self, t: int) -> None:
        pass


class UCBAgent:
    """Per-user UCB1 over the full action set.

    ``gamma=None`` keeps sample averages (UCBBanditS); a float discounts the
    running mean (UCBBanditNS).
    """

    def __init__(self, num_actions: int, num_users: int, gamma: float | None = 0.1, alpha_b: float = 1.0):
        self.alpha_b = alpha_b
        self.arms = [MabArms(num_actions, gamma) for _ in range(num_users)]
        self.all_actions = list(range(num_actions))
        self._pending: dict[int, int] = {}
        self.last_choice = [PolicyChoice.TRANSITION_MAB] * num_users
        self.last_pb_cb = [0.0] * num_users

    def select(self, user: int, context: np.ndarray, t: int) -> int:
        action = mab_select(self.arms[user], self.all_actions, t, self.alpha_b)
        self._pending[user] = action
        return action

    def update(self, user: int, reward: float) -> None:
        self.arms[user].update(self._pending.pop(user), reward)

    def end_round(self, t: int) -> None:
        pass
