"""Replay labeled time series as a bandit problem with corrupted contexts.

Each row of a stream is a context; the agent's action is a predicted class
and the reward says whether it was right. Streams with a ``stream_id``
column become separate users sharing one agent.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import savgol_filter


class StreamFormatError(ValueError):
    pass


@dataclass
class LabeledStream:
    """``labels`` hold 0-based action indices into ``label_values``."""

    features: np.ndarray
    labels: np.ndarray
    stream_id: str = "0"
    label_values: tuple[int, ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be T x d with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain missing values")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def num_actions(self) -> int:
        return len(self.label_values)


@dataclass(frozen=True)
class StreamSchema:
    feature_columns: tuple[str, ...] | None = None  # None: every column named f<digits>
    label_column: str = "label"
    stream_id_column: str | None = None
    labels: tuple[int, ...] | None = None  # None: sorted distinct labels in the file


def _feature_names(header: Sequence[str], schema: StreamSchema) -> list[str]:
    if schema.feature_columns is not None:
        return list(schema.feature_columns)
    names = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    return sorted(names, key=lambda h: int(h[1:]))


def ingest(path: str | Path, schema: StreamSchema = StreamSchema()) -> list[LabeledStream]:
    """Parse a CSV into one stream per id (a single stream without an id column).

    Rows stay in file order. Row numbers in errors count the header as row 1.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        names = _feature_names(header, schema)
        required = names + [schema.label_column] + ([schema.stream_id_column] if schema.stream_id_column else [])
        missing = [c for c in required if c not in header]
        if missing or not names:
            raise StreamFormatError(f"{path}: missing column(s) {missing or ['f0']}")

        rows: dict[str, tuple[list[list[float]], list[int]]] = {}
        for rownum, row in enumerate(reader, start=2):
            try:
                x = [float(row[c]) for c in names]
            except (TypeError, ValueError):
                bad = next(c for c in names if not _is_number(row[c]))
                raise StreamFormatError(f"{path}: row {rownum}: non-numeric or missing value in {bad!r}") from None
            if not all(math.isfinite(v) for v in x):
                raise StreamFormatError(f"{path}: row {rownum}: non-finite feature value")
            try:
                y = int(row[schema.label_column])
            except (TypeError, ValueError):
                raise StreamFormatError(
                    f"{path}: row {rownum}: bad label {row[schema.label_column]!r}"
                ) from None
            if schema.labels is not None and y not in schema.labels:
                raise StreamFormatError(f"{path}: row {rownum}: unseen label {y}")
            sid = row[schema.stream_id_column] if schema.stream_id_column else "0"
            feats, labs = rows.setdefault(sid, ([], []))
            feats.append(x)
            labs.append(y)

    if not rows:
        raise StreamFormatError(f"{path}: no data rows")
    values = tuple(schema.labels) if schema.labels is not None else tuple(
        sorted({y for _, labs in rows.values() for y in labs})
    )
    index = {v: i for i, v in enumerate(values)}
    return [
        LabeledStream(np.array(f, dtype=float), np.array([index[y] for y in labs]), sid, values)
        for sid, (f, labs) in rows.items()
    ]


def _is_number(s) -> bool:
    try:
        float(s)
    except (TypeError, ValueError):
        return False
    return True


def equal_frequency_bins(values: Sequence[float], k: int) -> np.ndarray:
    """Labels ``1..k`` cut at the empirical ``j/k`` quantiles."""
    v = np.asarray(values, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if v.size < k:
        raise ValueError(f"need at least {k} values, got {v.size}")
    if np.unique(v).size < k:
        raise ValueError(f"k={k} exceeds the number of distinct values")
    edges = np.quantile(v, np.arange(1, k) / k)
    return np.searchsorted(edges, v, side="left") + 1


def savgol_smooth(series: Sequence[float], window: int, order: int) -> np.ndarray:
    """Least-squares polynomial smoothing over centered windows.

    Near the ends the window is truncated to the available samples and the
    fit is evaluated at the point itself, so the output has the input's length.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if window > n:
        raise ValueError(f"window {window} longer than series ({n})")
    if not 0 <= order < window:
        raise ValueError("order must satisfy 0 <= order < window")
    half = window // 2
    out = savgol_filter(y, window, order, mode="nearest")
    for i in [*range(min(half, n)), *range(max(half, n - half), n)]:
        lo, hi = max(0, i - half), min(n, i + half + 1)
        x = (np.arange(lo, hi) - i) / half
        deg = min(order, hi - lo - 1)
        out[i] = np.polynomial.polynomial.polyfit(x, y[lo:hi], deg)[0]
    return out


def rediscretize(smoothed: Sequence[float], label_values: Sequence[int]) -> np.ndarray:
    """Round smoothed targets to the nearest valid label value."""
    vals = np.asarray(sorted(label_values), dtype=float)
    s = np.asarray(smoothed, dtype=float)
    idx = np.abs(s[:, None] - vals[None, :]).argmin(axis=1)
    return vals[idx].astype(int)


class CorruptionKind(str, enum.Enum):
    UNIFORM_BOX = "UniformBox"
    RANDOM_ONE_HOT = "RandomOneHot"
    MIXED = "Mixed"


@dataclass(frozen=True)
class CorruptionMode:
    kind: CorruptionKind = CorruptionKind.UNIFORM_BOX
    prob: float = 0.0
    binary_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("corruption prob must lie in [0, 1]")


def corrupt_features(x: np.ndarray, mode: CorruptionMode, rng: np.random.Generator) -> np.ndarray:
    if mode.prob == 0.0 or rng.random() >= mode.prob:
        return x
    d = x.shape[0]
    if mode.kind is CorruptionKind.RANDOM_ONE_HOT:
        out = np.zeros(d)
        out[rng.integers(d)] = 1.0
        return out
    out = rng.random(d)
    if mode.kind is CorruptionKind.MIXED and mode.binary_dims:
        dims = list(mode.binary_dims)
        out[dims] = (rng.random(len(dims)) < 0.5).astype(float)
    return out


@dataclass
class ReplayRecord:
    run_id: str
    stream_id: str
    t: int
    action: int
    label: int
    reward: int
    policy_chosen: str
    pb_cb: float


RECORD_FIELDS = ["run_id", "stream_id", "t", "action", "label", "reward", "policy_chosen", "pb_cb"]


def _policy_name(choice) -> str:
    return "" if choice is None else choice.name


def bandit_replay(
    streams: Sequence[LabeledStream],
    mode: CorruptionMode,
    agent,
    start_offsets: Sequence[int],
    horizon: int,
    rng: np.random.Generator,
    run_id: str = "run",
) -> list[ReplayRecord]:
    """Drive ``agent`` over aligned windows of the streams.

    Stream ``i`` is user ``i``; at step ``t`` it shows row ``start_offsets[i] + t``.
    ``action`` and ``label`` in the records are 0-based class indices.
    The best reward is always 1, so regret is the count of zero rewards.
    """
    if len(start_offsets) != len(streams):
        raise ValueError("need one start offset per stream")
    for s, off in zip(streams, start_offsets):
        if off < 0 or off + horizon > len(s):
            raise ValueError(f"stream {s.stream_id!r} exhausted: offset {off} + horizon {horizon} > {len(s)}")
    records = []
    for t in range(horizon):
        for u, (s, off) in enumerate(zip(streams, start_offsets)):
            x = corrupt_features(s.features[off + t], mode, rng)
            a = agent.select(u, x, t + 1)
            label = int(s.labels[off + t])
            r = int(a == label)
            agent.update(u, r)
            records.append(
                ReplayRecord(run_id, s.stream_id, t, a, label, r,
                             _policy_name(agent.last_choice[u]), float(agent.last_pb_cb[u]))
            )
        agent.end_round(t + 1)
    return records


def write_records(path: str | Path, records: Sequence[ReplayRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.run_id, r.stream_id, r.t, r.action, r.label, r.reward, r.policy_chosen, repr(r.pb_cb)])


# ---------------------------------------------------------------------------
# Bundled synthetic data
# ---------------------------------------------------------------------------

BUNDLED_STREAM = "drifting3.csv"


def bundled_stream_path() -> Path:
    return Path(str(resources.files("combine_bandits") / "data" / BUNDLED_STREAM))


def make_drifting_stream(
    rows: int = 5000,
    num_streams: int = 2,
    num_classes: int = 3,
    seed: int = 20240,
    mean_dwell: float = 120.0,
) -> list[dict[str, str]]:
    """Synthetic regime-switching classification data.

    Classes follow a cycle ``1 -> 2 -> ... -> K -> 1`` with geometric dwell
    times. The first ``K`` features are a noisy class indicator whose offset
    drifts slowly; a last feature is pure drift. All features lie in [0, 1].
    """
    rng = np.random.default_rng(seed)
    out = []
    for sid in range(num_streams):
        label = int(rng.integers(num_classes))
        phase = rng.random() * 2 * np.pi
        for t in range(rows):
            if rng.random() < 1.0 / mean_dwell:
                label = (label + 1) % num_classes
            drift = 0.5 + 0.15 * np.sin(2 * np.pi * t / 1500.0 + phase)
            x = 0.2 + 0.1 * (drift - 0.5) + rng.normal(0.0, 0.08, num_classes)
            x[label] += 0.5
            feats = np.clip(np.append(x, drift + rng.normal(0.0, 0.05)), 0.0, 1.0)
            row = {f"f{j}": f"{v:.6f}" for j, v in enumerate(feats)}
            row.update(label=str(label + 1), stream_id=f"s{sid}")
            out.append(row)
    return out


def write_drifting_stream(path: str | Path, **kwargs) -> None:
    rows = make_drifting_stream(**kwargs)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
