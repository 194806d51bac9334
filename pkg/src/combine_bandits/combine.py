"""COMBINE: a referee arbitrating between a global contextual bandit and
per-user transition-aware multi-armed bandits.

The functional core is :func:`combine_select` / :func:`combine_update`;
:class:`CombineAgent` wires them into the step-wise driver interface used by
the simulation and replay harnesses::

    action = agent.select(user, context, t)
    agent.update(user, reward)
    ...
    agent.end_round(t)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    LinearModels,
    MabArms,
    PolicyChoice,
    RefereeState,
    lints_select,
    linucb_select,
    mab_select,
    referee_probabilities,
    referee_update,
)
from .transitions import (
    AdjacencyMatrix,
    IndicatorState,
    PreferenceMatrix,
    adj_select,
    adjacency_update,
    common_adjacency,
    common_preference,
    indicator_update,
    preference_update,
    softmax_action_sample,
)


class CBKind(str, enum.Enum):
    LINUCB = "LinUCB"
    LINTS = "LinTS"


class MABKind(str, enum.Enum):
    DISCOUNTED_UCB = "DiscountedUCB"
    STATIONARY_UCB = "StationaryUCB"
    SOFTMAX = "SoftmaxTransition"


class Pooling(str, enum.Enum):
    PER_USER = "PerUser"
    COMMON = "Common"


class RefereeMode(str, enum.Enum):
    LEARN = "learn"
    # Frozen referees always pick one policy; used for reduction checks.
    FORCE_CB = "force_cb"
    FORCE_MAB = "force_mab"


@dataclass(frozen=True)
class Params:
    alpha: float = 1.0
    alpha_b: float = 1.0
    gamma: float = 0.1
    delta_r: float = 0.5
    alpha_s: float = 10.0
    v: float = 0.2

    def validate(self) -> None:
        for name in ("alpha", "alpha_b", "gamma", "delta_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.alpha_s < 0 or self.v < 0:
            raise ValueError("alpha_s and v must be non-negative")


@dataclass(frozen=True)
class VariantConfig:
    name: str = "COMBINE-UCB"
    cb_kind: CBKind = CBKind.LINUCB
    mab_kind: MABKind = MABKind.DISCOUNTED_UCB
    pooling: Pooling = Pooling.PER_USER
    use_reach: bool = True
    params: Params = field(default_factory=Params)
    referee: RefereeMode = RefereeMode.LEARN

    def validate(self) -> None:
        self.params.validate()

    def with_params(self, **overrides) -> "VariantConfig":
        return replace(self, params=replace(self.params, **overrides))


VARIANTS: dict[str, VariantConfig] = {
    "COMBINE-UCB": VariantConfig("COMBINE-UCB"),
    "COMBINE-UCB common": VariantConfig("COMBINE-UCB common", pooling=Pooling.COMMON),
    "COMBINE-softmax": VariantConfig("COMBINE-softmax", mab_kind=MABKind.SOFTMAX),
    "COMBINE-softmax common": VariantConfig(
        "COMBINE-softmax common", mab_kind=MABKind.SOFTMAX, pooling=Pooling.COMMON
    ),
    "LinUCB+UCBBanditNS": VariantConfig("LinUCB+UCBBanditNS", use_reach=False),
    "LinTS+UCBBanditNS": VariantConfig("LinTS+UCBBanditNS", cb_kind=CBKind.LINTS, use_reach=False),
}


@dataclass
class UserAgentState:
    mab: MabArms
    referee: RefereeState
    indicators: IndicatorState
    adjacency: AdjacencyMatrix
    preferences: PreferenceMatrix | None
    candidates: list[int]
    ever_played: bool = False

    @classmethod
    def fresh(cls, num_actions: int, cfg: VariantConfig) -> "UserAgentState":
        p = cfg.params
        gamma = None if cfg.mab_kind is MABKind.STATIONARY_UCB else p.gamma
        prefs = PreferenceMatrix.zeros(num_actions, p.alpha_s) if cfg.mab_kind is MABKind.SOFTMAX else None
        return cls(
            mab=MabArms(num_actions, gamma),
            referee=RefereeState(p.delta_r),
            indicators=IndicatorState(),
            adjacency=AdjacencyMatrix.ones(num_actions),
            preferences=prefs,
            candidates=list(range(num_actions)),
        )


@dataclass
class SharedAgentState:
    cb: LinearModels
    common_adjacency: AdjacencyMatrix | None = None
    common_preferences: PreferenceMatrix | None = None


def _ranking_matrix(user: UserAgentState, shared: SharedAgentState, cfg: VariantConfig) -> np.ndarray:
    """Matrix whose rows rank successor actions (also the softmax source)."""
    if cfg.mab_kind is MABKind.SOFTMAX:
        if cfg.pooling is Pooling.COMMON and shared.common_preferences is not None:
            return shared.common_preferences.prefs
        return user.preferences.prefs
    if cfg.pooling is Pooling.COMMON and shared.common_adjacency is not None:
        return shared.common_adjacency.counts
    return user.adjacency.counts


def combine_select(
    user: UserAgentState,
    shared: SharedAgentState,
    context: np.ndarray,
    t: int,
    cfg: VariantConfig,
    rng: np.random.Generator,
) -> tuple[PolicyChoice, int, float]:
    """Sample a base policy from the referee and let it pick an action.

    Returns the policy, the action and the probability the chosen policy had
    at sampling time (needed later by the referee update).
    """
    p_cb, p_mab = referee_probabilities(user.referee)
    if cfg.referee is RefereeMode.FORCE_CB:
        choice, pb = PolicyChoice.CONTEXTUAL, 1.0
    elif cfg.referee is RefereeMode.FORCE_MAB:
        choice, pb = PolicyChoice.TRANSITION_MAB, 1.0
    elif rng.random() < p_cb:
        choice, pb = PolicyChoice.CONTEXTUAL, p_cb
    else:
        choice, pb = PolicyChoice.TRANSITION_MAB, p_mab

    p = cfg.params
    if choice is PolicyChoice.CONTEXTUAL:
        if cfg.cb_kind is CBKind.LINUCB:
            action = linucb_select(context, shared.cb, p.alpha)
        else:
            action = lints_select(context, shared.cb, p.v, rng)
    elif cfg.mab_kind is MABKind.SOFTMAX and cfg.use_reach and user.indicators.previous is not None:
        action = softmax_action_sample(_ranking_matrix(user, shared, cfg), user.indicators.previous, user.candidates, rng)
    else:
        action = mab_select(user.mab, user.candidates, t, p.alpha_b)
    return choice, action, pb


def combine_update(
    user: UserAgentState,
    shared: SharedAgentState,
    chosen: PolicyChoice,
    action: int,
    context: np.ndarray,
    reward: float,
    pb_at_selection: float,
    t: int,
    cfg: VariantConfig,
) -> None:
    """Apply one step of feedback in the fixed order of the pseudocode.

    Transition bookkeeping uses the indicator actions from *before* this step.
    Only the base policy that acted learns from the reward.
    """
    ind = user.indicators
    adjacency_update(user.adjacency, ind.previous, action, reward)
    if user.preferences is not None:
        preference_update(user.preferences, ind.previous, action, reward)

    if chosen is PolicyChoice.CONTEXTUAL:
        shared.cb.update(action, context, reward)
    else:
        user.mab.update(action, reward)
        user.ever_played = True

    if cfg.referee is RefereeMode.LEARN:
        referee_update(user.referee, chosen, reward, pb_at_selection)

    indicator_update(ind, action, reward)

    if cfg.use_reach:
        user.candidates, _ = adj_select(ind, _ranking_matrix(user, shared, cfg), reward, user.ever_played)
    else:
        user.candidates = list(range(user.mab.num_actions))


def refresh_pooled(users: Sequence[UserAgentState], shared: SharedAgentState, cfg: VariantConfig) -> None:
    if cfg.pooling is not Pooling.COMMON or not users:
        return
    shared.common_adjacency = common_adjacency([u.adjacency for u in users])
    if cfg.mab_kind is MABKind.SOFTMAX:
        shared.common_preferences = common_preference(
            [u.preferences for u in users], [u.adjacency for u in users], shared.common_adjacency
        )


@dataclass
class StepRecord:
    user: int
    action: int
    reward: float
    choice: PolicyChoice
    pb_cb: float


def run_round(
    users: Sequence[UserAgentState],
    shared: SharedAgentState,
    contexts: Sequence[np.ndarray],
    reward_fn: Callable[[int, int], float],
    t: int,
    cfg: VariantConfig,
    rng: np.random.Generator,
) -> list[StepRecord]:
    """One time step over all users, in index order.

    ``reward_fn(user_index, action)`` supplies the environment's reward.
    Pooled transition matrices are refreshed after the last user.
    """
    if len(contexts) != len(users):
        raise ValueError("need exactly one context per user")
    records = []
    for i, (user, x) in enumerate(zip(users, contexts)):
        pb_cb = referee_probabilities(user.referee)[0]
        choice, action, pb = combine_select(user, shared, x, t, cfg, rng)
        r = reward_fn(i, action)
        combine_update(user, shared, choice, action, x, r, pb, t, cfg)
        records.append(StepRecord(i, action, r, choice, pb_cb))
    refresh_pooled(users, shared, cfg)
    return records


class CombineAgent:
    """Step-wise driver around the COMBINE state for ``num_users`` users."""

    def __init__(
        self,
        cfg: VariantConfig,
        num_actions: int,
        dimension: int,
        num_users: int,
        rng: np.random.Generator,
    ):
        cfg.validate()
        self.cfg = cfg
        self.num_actions = num_actions
        self.rng = rng
        self.users = [UserAgentState.fresh(num_actions, cfg) for _ in range(num_users)]
        self.shared = SharedAgentState(LinearModels(num_actions, dimension))
        self._pending: dict[int, tuple[PolicyChoice, int, np.ndarray, float, int]] = {}
        self.last_choice: list[PolicyChoice | None] = [None] * num_users
        self.last_pb_cb: list[float] = [float("nan")] * num_users

    def select(self, user: int, context: np.ndarray, t: int) -> int:
        state = self.users[user]
        self.last_pb_cb[user] = referee_probabilities(state.referee)[0]
        choice, action, pb = combine_select(state, self.shared, context, t, self.cfg, self.rng)
        self._pending[user] = (choice, action, context, pb, t)
        self.last_choice[user] = choice
        return action

    def update(self, user: int, reward: float) -> None:
        choice, action, context, pb, t = self._pending.pop(user)
        combine_update(self.users[user], self.shared, choice, action, context, reward, pb, t, self.cfg)

    def end_round(self, t: int) -> None:
        refresh_pooled(self.users, self.shared, self.cfg)

    def transition_matrix(self, user: int) -> np.ndarray:
        """The matrix the user's transition bandit ranks successors with."""
        return _ranking_matrix(self.users[user], self.shared, self.cfg)
