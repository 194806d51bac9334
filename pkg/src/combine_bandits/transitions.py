"""Action-to-action transition models and candidate-set selection.

A user's transition model is either a count matrix (every entry starts at 1
and only rewarded transitions add to it) or a real-valued preference matrix
whose rows are read through a softmax. Rows are indexed by the *previous
indicator action*, the last rewarded action before the most recent failure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class AdjacencyMatrix:
    counts: np.ndarray

    @classmethod
    def ones(cls, num_actions: int) -> "AdjacencyMatrix":
        return cls(np.ones((num_actions, num_actions)))

    @property
    def num_actions(self) -> int:
        return self.counts.shape[0]


@dataclass
class PreferenceMatrix:
    prefs: np.ndarray
    step_size: float = 10.0

    @classmethod
    def zeros(cls, num_actions: int, step_size: float = 10.0) -> "PreferenceMatrix":
        return cls(np.zeros((num_actions, num_actions)), step_size)

    @property
    def num_actions(self) -> int:
        return self.prefs.shape[0]


@dataclass
class IndicatorState:
    """Current (``a+``) and previous (``a-``) indicator actions plus the reach."""

    current: int | None = None
    previous: int | None = None
    reach: int = 1


def adjacency_update(adj: AdjacencyMatrix, prev_indicator: int | None, played: int, reward: float) -> AdjacencyMatrix:
    if prev_indicator is not None and prev_indicator != played:
        adj.counts[prev_indicator, played] += reward
    return adj


def indicator_update(ind: IndicatorState, played: int, reward: float) -> IndicatorState:
    if reward == 1:
        ind.current = played
    else:
        ind.previous = ind.current
    return ind


def rank_row(row: np.ndarray) -> np.ndarray:
    """Action indices sorted by descending value, ties to the lower index."""
    return np.argsort(-row, kind="stable")


def adj_select(
    ind: IndicatorState,
    ranking_source: AdjacencyMatrix | PreferenceMatrix | np.ndarray,
    reward: float,
    any_play_yet: bool,
) -> tuple[list[int], IndicatorState]:
    """Choose the candidate subset for the next step and adjust the reach.

    Returns the whole action set (reach untouched) until the transition
    bandit has played at least once and a previous indicator exists.
    Otherwise the reach is reset on success or grown (capped at ``K``) on
    failure, and the ``reach + 1`` highest entries of the previous
    indicator's row are returned in rank order.
    """
    matrix = _matrix_of(ranking_source)
    k = matrix.shape[0]
    if not any_play_yet or ind.previous is None:
        return list(range(k)), ind
    if reward == 1:
        ind.reach = 0
    else:
        ind.reach = min(ind.reach + 1, k)
    order = rank_row(matrix[ind.previous])
    return [int(a) for a in order[: ind.reach + 1]], ind


def _matrix_of(source) -> np.ndarray:
    if isinstance(source, AdjacencyMatrix):
        return source.counts
    if isinstance(source, PreferenceMatrix):
        return source.prefs
    return np.asarray(source)


def softmax(values: np.ndarray) -> np.ndarray:
    z = np.asarray(values, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def preference_update(
    pref: PreferenceMatrix, prev_indicator: int | None, played: int, reward: float
) -> PreferenceMatrix:
    """Gradient step on one entry: ``L*[a-, a] += alpha_S (r - softmax(L*[a-])[a])``."""
    if prev_indicator is None or prev_indicator == played:
        return pref
    row = pref.prefs[prev_indicator]
    prob = softmax(row)[played]
    row[played] += pref.step_size * (reward - prob)
    return pref


def softmax_action_sample(
    pref: PreferenceMatrix | np.ndarray,
    prev_indicator: int,
    candidates: Sequence[int],
    rng: np.random.Generator,
) -> int:
    """Sample from the softmax of the previous indicator's row restricted to ``candidates``.

    The distribution is renormalised over the candidates only. A singleton
    candidate set is returned without consuming randomness.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates")
    if len(candidates) == 1:
        return int(candidates[0])
    matrix = _matrix_of(pref)
    row = matrix[prev_indicator]
    vals = [row[a] for a in candidates]
    m = max(vals)
    weights = [math.exp(v - m) for v in vals]
    u = rng.random() * sum(weights)
    acc = 0.0
    for a, w in zip(candidates, weights):
        acc += w
        if u < acc:
            return int(a)
    return int(candidates[-1])


def _check_shapes(mats: Sequence[np.ndarray]) -> None:
    if not mats:
        raise ValueError("need at least one matrix")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ValueError(f"shape mismatch: {m.shape} vs {shape}")


def common_adjacency(per_user: Sequence[AdjacencyMatrix]) -> AdjacencyMatrix:
    mats = [a.counts for a in per_user]
    _check_shapes(mats)
    return AdjacencyMatrix(np.sum(mats, axis=0))


def common_preference(
    per_user_prefs: Sequence[PreferenceMatrix],
    per_user_adj: Sequence[AdjacencyMatrix],
    common_adj: AdjacencyMatrix,
) -> PreferenceMatrix:
    """Count-weighted average of user preferences: ``sum_j P_j * C_j / C_common``."""
    prefs = [p.prefs for p in per_user_prefs]
    counts = [a.counts for a in per_user_adj]
    if len(prefs) != len(counts):
        raise ValueError("need one adjacency matrix per preference matrix")
    _check_shapes(prefs + counts + [common_adj.counts])
    weighted = np.sum([p * c for p, c in zip(prefs, counts)], axis=0)
    step = per_user_prefs[0].step_size
    return PreferenceMatrix(weighted / common_adj.counts, step)


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def write_matrix_csv(path: str | Path, matrix: np.ndarray, labels: Sequence[str] | None = None) -> None:
    """Row-major CSV with a header row of action labels."""
    matrix = np.asarray(matrix)
    if labels is None:
        labels = [str(a) for a in range(matrix.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(labels)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels, body = rows[0], rows[1:]
    return np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(labels)), labels
