"""Seeded batch experiments: multi-user simulations, stream replays, sweeps.

A run is one (algorithm, setting, seed, replication) tuple. Environments for
a given (setting, seed, replication) are identical across algorithms, while
each algorithm draws from its own generator, so changing one algorithm's
configuration never perturbs another's trace.
"""

from __future__ import annotations

import csv
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .baselines import LinearBanditAgent, UCBAgent
from .combine import VARIANTS, CombineAgent, Params
from .simulation import GROUP_PRESETS, EnvConfig, HiddenStateEnv
from .streams import CorruptionMode, LabeledStream, StreamSchema, bandit_replay, bundled_stream_path, ingest
from .transitions import write_matrix_csv

BASELINES = ("UCBBanditS", "UCBBanditNS", "LinUCB", "LinTS")
ALGORITHMS = BASELINES + tuple(VARIANTS)
SWEEPABLE = ("alpha", "alpha_b", "gamma", "delta_r", "alpha_s", "v", "corruption_prob", "step_size", "instability")
MAX_STEP_SIZE = 0.5


class ConfigError(ValueError):
    pass


def dynamic_regret(agent_rewards: Sequence[float], oracle_rewards: Sequence[float]) -> np.ndarray:
    a = np.asarray(agent_rewards, dtype=float)
    o = np.asarray(oracle_rewards, dtype=float)
    if a.shape != o.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {o.shape}")
    return np.cumsum(o - a)


def instability_to_step_size(x: float) -> float:
    """Map instability in [0, 1] linearly onto random-walk step sizes in [0, 0.5]."""
    if not 0.0 <= x <= 1.0:
        raise ConfigError("instability must lie in [0, 1]")
    return MAX_STEP_SIZE * x


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationSettings:
    num_actions: tuple[int, ...] = (2, 5, 10)
    users_per_group: int = 10
    walk_up_prob: float = 0.5
    groups: dict[str, dict[str, float]] = field(default_factory=lambda: {k: dict(v) for k, v in GROUP_PRESETS.items()})


@dataclass(frozen=True)
class StreamSettings:
    path: str = "bundled"
    name: str = "drifting3"
    schema: StreamSchema = StreamSchema(stream_id_column="stream_id")
    corruption: CorruptionMode = CorruptionMode()
    offset_range: int = 3000

    def resolved_path(self) -> Path:
        return bundled_stream_path() if self.path == "bundled" else Path(self.path)


@dataclass(frozen=True)
class ExperimentSpec:
    environment: str = "simulation"
    algorithms: tuple[str, ...] = ("LinUCB",)
    seeds: tuple[int, ...] = (0,)
    replications: int = 1
    horizon: int = 2500
    params: Params = Params()
    simulation: SimulationSettings = SimulationSettings()
    stream: StreamSettings = StreamSettings()
    sweep: tuple[str, tuple[float, ...]] | None = None

    def validate(self) -> None:
        if self.environment not in ("simulation", "stream"):
            raise ConfigError(f"unknown environment {self.environment!r}")
        if not self.algorithms:
            raise ConfigError("need at least one algorithm")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {list(ALGORITHMS)}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.replications < 1 or self.horizon < 1:
            raise ConfigError("replications and horizon must be >= 1")
        try:
            self.params.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.environment == "simulation":
            sim = self.simulation
            if not sim.num_actions or min(sim.num_actions) < 1:
                raise ConfigError("num_actions must be a non-empty list of positive integers")
            if sim.users_per_group < 1 or not sim.groups:
                raise ConfigError("need at least one group with at least one user")
            for name, g in sim.groups.items():
                bad = set(g) - {"step_size", "corruption_prob"}
                if bad:
                    raise ConfigError(f"group {name!r}: unknown key(s) {sorted(bad)}")
                try:
                    EnvConfig(1, walk_up_prob=sim.walk_up_prob, horizon=self.horizon, **g)
                except ValueError as exc:
                    raise ConfigError(f"group {name!r}: {exc}") from None
        else:
            path = self.stream.resolved_path()
            if not path.exists():
                raise ConfigError(f"stream file not found: {path}")
        if self.sweep is not None:
            name, values = self.sweep
            if name not in SWEEPABLE:
                raise ConfigError(f"cannot sweep {name!r}; choose from {list(SWEEPABLE)}")
            if not values:
                raise ConfigError("sweep grid is empty")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentSpec":
        raw = dict(raw or {})
        known = {"environment", "algorithms", "seeds", "replications", "horizon", "params", "simulation", "stream", "sweep"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown top-level key(s) {sorted(extra)}")
        kw: dict[str, Any] = {}
        for key in ("environment", "replications", "horizon"):
            if key in raw:
                kw[key] = raw[key]
        if "algorithms" in raw:
            kw["algorithms"] = tuple(raw["algorithms"])
        if "seeds" in raw:
            kw["seeds"] = parse_seeds(raw["seeds"])
        try:
            kw["params"] = Params(**(raw.get("params") or {}))
        except TypeError as exc:
            raise ConfigError(f"params: {exc}") from None
        if "simulation" in raw:
            sim = dict(raw["simulation"] or {})
            if "num_actions" in sim:
                na = sim["num_actions"]
                sim["num_actions"] = tuple(na) if isinstance(na, (list, tuple)) else (na,)
            try:
                kw["simulation"] = SimulationSettings(**sim)
            except TypeError as exc:
                raise ConfigError(f"simulation: {exc}") from None
        if "stream" in raw:
            kw["stream"] = _stream_settings(dict(raw["stream"] or {}))
        if raw.get("sweep"):
            sw = raw["sweep"]
            try:
                kw["sweep"] = (str(sw["parameter"]), tuple(float(v) for v in sw["values"]))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"sweep needs 'parameter' and 'values': {exc}") from None
        spec = cls(**kw)
        spec.validate()
        return spec

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        return cls.from_dict(raw)


def _stream_settings(raw: dict[str, Any]) -> StreamSettings:
    schema_kw = {}
    for key in ("feature_columns", "labels"):
        if raw.get(key) is not None:
            schema_kw[key] = tuple(raw.pop(key))
        else:
            raw.pop(key, None)
    for key in ("label_column", "stream_id_column"):
        if key in raw:
            schema_kw[key] = raw.pop(key)
    corr = raw.pop("corruption", None) or {}
    try:
        corruption = CorruptionMode(
            corr.get("kind", "UniformBox"), float(corr.get("prob", 0.0)), tuple(corr.get("binary_dims", ()))
        )
        return StreamSettings(schema=StreamSchema(**{"stream_id_column": "stream_id", **schema_kw}),
                              corruption=corruption, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"stream: {exc}") from None


def parse_seeds(value) -> tuple[int, ...]:
    """Accepts a list, an int, ``"0,1,2"`` or an inclusive range ``"0-4"``."""
    if isinstance(value, int):
        return (value,)
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    seeds: list[int] = []
    for part in str(value).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(part)])
        except ValueError:
            raise ConfigError(f"bad seed list {value!r}") from None
    if not seeds:
        raise ConfigError(f"bad seed list {value!r}")
    return tuple(seeds)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def make_agent(name: str, params: Params, num_actions: int, dimension: int, num_users: int, rng):
    if name in VARIANTS:
        return CombineAgent(VARIANTS[name].with_params(**vars(params)), num_actions, dimension, num_users, rng)
    if name in ("LinUCB", "LinTS"):
        return LinearBanditAgent(num_actions, dimension, num_users, rng, name, params.alpha, params.v)
    if name == "UCBBanditS":
        return UCBAgent(num_actions, num_users, None, params.alpha_b)
    if name == "UCBBanditNS":
        return UCBAgent(num_actions, num_users, params.gamma, params.alpha_b)
    raise ConfigError(f"unknown algorithm {name!r}")


@dataclass(frozen=True, order=True)
class RunKey:
    algorithm: str
    setting: str  # "K=5" for simulations, the dataset name for replays
    seed: int
    replication: int

    @property
    def run_id(self) -> str:
        slug = "".join(c if c.isalnum() else "_" for c in self.algorithm)
        return f"{slug}.{self.setting}.s{self.seed}.r{self.replication}"


@dataclass
class RegretTrace:
    """Per-user instantaneous regret (users x T) plus referee probabilities.

    ``pb_cb`` is NaN for algorithms without a referee.
    """

    key: RunKey
    regret: np.ndarray
    pb_cb: np.ndarray
    user_groups: list[str]
    transition_matrices: list[np.ndarray] = field(default_factory=list)

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(self.user_groups))

    def group_mask(self, group: str) -> np.ndarray:
        return np.array([g == group for g in self.user_groups])

    def cumulative(self, group: str | None = None) -> np.ndarray:
        """Mean per-user cumulative regret over the users of ``group`` (all users if None)."""
        rows = self.regret if group is None else self.regret[self.group_mask(group)]
        return np.cumsum(rows, axis=1).mean(axis=0)

    def final(self, group: str | None = None) -> float:
        return float(self.cumulative(group)[-1])


def _seed_sequence(*parts: int | str) -> np.random.SeedSequence:
    ints = [p if isinstance(p, int) else zlib.crc32(p.encode()) for p in parts]
    return np.random.SeedSequence(ints)


def _settings(spec: ExperimentSpec) -> list[str]:
    if spec.environment == "simulation":
        return [f"K={k}" for k in spec.simulation.num_actions]
    return [spec.stream.name]


def run_keys(spec: ExperimentSpec) -> list[RunKey]:
    return [
        RunKey(a, s, seed, rep)
        for a in spec.algorithms
        for s in _settings(spec)
        for seed in spec.seeds
        for rep in range(spec.replications)
    ]


def simulate_run(spec: ExperimentSpec, key: RunKey) -> RegretTrace:
    sim = spec.simulation
    k = int(key.setting.removeprefix("K="))
    env_seq = _seed_sequence("env", key.setting, key.seed, key.replication)
    groups = list(sim.groups)
    n = sim.users_per_group
    env_rngs = [np.random.default_rng(s) for s in env_seq.spawn(len(groups) * n)]
    envs, user_groups = [], []
    for g, name in enumerate(groups):
        for u in range(n):
            cfg = EnvConfig(k, walk_up_prob=sim.walk_up_prob, horizon=spec.horizon, **sim.groups[name])
            envs.append(HiddenStateEnv(cfg, env_rngs[g * n + u]))
            user_groups.append(name)
    agent_rng = np.random.default_rng(_seed_sequence("agent", key.algorithm, key.setting, key.seed, key.replication))
    agent = make_agent(key.algorithm, spec.params, k, k, len(envs), agent_rng)

    T = spec.horizon
    regret = np.zeros((len(envs), T), dtype=np.int8)
    pb = np.full((len(envs), T), np.nan)
    tracks_referee = isinstance(agent, CombineAgent)
    for t in range(T):
        for i, env in enumerate(envs):
            x = env.observe()
            a = agent.select(i, x, t + 1)
            r = env.reward(a)
            agent.update(i, r)
            regret[i, t] = env.oracle_reward() - r
            if tracks_referee:
                pb[i, t] = agent.last_pb_cb[i]
        agent.end_round(t + 1)
        if t + 1 < T:
            for env in envs:
                env.advance()
    return RegretTrace(key, regret, pb, user_groups, _transition_dump(agent))


def _transition_dump(agent) -> list[np.ndarray]:
    if not isinstance(agent, CombineAgent):
        return []
    return [agent.transition_matrix(u).copy() for u in range(len(agent.users))]


def load_streams(settings: StreamSettings) -> list[LabeledStream]:
    return ingest(settings.resolved_path(), settings.schema)


def replay_run(spec: ExperimentSpec, key: RunKey, streams: Sequence[LabeledStream] | None = None) -> RegretTrace:
    st = spec.stream
    streams = load_streams(st) if streams is None else streams
    env_rng = np.random.default_rng(_seed_sequence("env", key.setting, key.seed, key.replication))
    limit = min(st.offset_range, min(len(s) for s in streams) - spec.horizon + 1)
    if limit < 1:
        raise ConfigError(f"streams too short for horizon {spec.horizon}")
    offsets = env_rng.integers(0, limit, len(streams))
    agent_rng = np.random.default_rng(_seed_sequence("agent", key.algorithm, key.setting, key.seed, key.replication))
    agent = make_agent(key.algorithm, spec.params, streams[0].num_actions, streams[0].dimension, len(streams), agent_rng)
    records = bandit_replay(streams, st.corruption, agent, offsets, spec.horizon, env_rng, key.run_id)
    n = len(streams)
    regret = np.array([1 - r.reward for r in records], dtype=np.int8).reshape(spec.horizon, n).T
    pb = np.array([r.pb_cb for r in records]).reshape(spec.horizon, n).T
    if not isinstance(agent, CombineAgent):
        pb[:] = np.nan
    return RegretTrace(key, regret, pb, [st.name] * n, _transition_dump(agent))


def _run_one(args: tuple[ExperimentSpec, RunKey]) -> RegretTrace:
    spec, key = args
    return simulate_run(spec, key) if spec.environment == "simulation" else replay_run(spec, key)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[RegretTrace]:
    """All runs of ``spec``, sorted by run key. Output is independent of ``workers``."""
    spec.validate()
    if spec.environment == "stream":
        streams = load_streams(spec.stream)
        dims = {(s.num_actions, s.dimension) for s in streams}
        if len(dims) != 1:
            raise ConfigError("all streams must share the label set and feature dimension")
        if min(len(s) for s in streams) < spec.horizon:
            raise ConfigError(f"horizon {spec.horizon} exceeds the shortest stream")
    keys = sorted(run_keys(spec))
    jobs = [(spec, k) for k in keys]
    if workers <= 1:
        traces = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, jobs, chunksize=1))
    return sorted(traces, key=lambda tr: tr.key)


# ---------------------------------------------------------------------------
# Aggregation and sweeps
# ---------------------------------------------------------------------------


@dataclass
class SummaryRow:
    algorithm: str
    group: str
    mean: float
    std: float
    macro_mean: float
    macro_std: float
    runs: int


def summarize(traces: Iterable[RegretTrace]) -> list[SummaryRow]:
    """Mean and std of per-user final regret across runs, per (algorithm, group).

    ``mean``/``std`` pool every run (micro average); ``macro_*`` first average
    within each setting (e.g. each action count) and then across settings.
    """
    finals: dict[tuple[str, str], dict[str, list[float]]] = {}
    for tr in traces:
        for g in tr.groups:
            finals.setdefault((tr.key.algorithm, g), {}).setdefault(tr.key.setting, []).append(tr.final(g))
    rows = []
    for (alg, g), by_setting in finals.items():
        pooled = np.concatenate([np.asarray(v) for v in by_setting.values()])
        per_setting = np.array([np.mean(v) for v in by_setting.values()])
        rows.append(SummaryRow(alg, g, float(pooled.mean()), float(pooled.std()),
                               float(per_setting.mean()), float(per_setting.std()), int(pooled.size)))
    return rows


def total_mean(rows: Sequence[SummaryRow], algorithm: str, macro: bool = False) -> float:
    """Average of an algorithm's group means."""
    vals = [r.macro_mean if macro else r.mean for r in rows if r.algorithm == algorithm]
    if not vals:
        raise KeyError(algorithm)
    return float(np.mean(vals))


def apply_sweep_value(spec: ExperimentSpec, name: str, value: float) -> ExperimentSpec:
    if name in ("alpha", "alpha_b", "gamma", "delta_r", "alpha_s", "v"):
        return replace(spec, params=replace(spec.params, **{name: value}), sweep=None)
    if name == "corruption_prob":
        if spec.environment == "stream":
            return replace(spec, stream=replace(spec.stream, corruption=replace(spec.stream.corruption, prob=value)),
                           sweep=None)
        return replace(spec, simulation=_set_groups(spec.simulation, corruption_prob=value), sweep=None)
    if spec.environment != "simulation":
        raise ConfigError(f"{name!r} sweeps need the simulation environment")
    step = instability_to_step_size(value) if name == "instability" else value
    return replace(spec, simulation=_set_groups(spec.simulation, step_size=step), sweep=None)


def _set_groups(sim: SimulationSettings, **kw) -> SimulationSettings:
    return replace(sim, groups={name: {**g, **kw} for name, g in sim.groups.items()})


@dataclass
class SweepRow:
    parameter: str
    value: float
    algorithm: str
    group: str
    mean: float
    std: float


def sweep(spec: ExperimentSpec, workers: int = 1) -> list[SweepRow]:
    if spec.sweep is None:
        raise ConfigError("spec has no sweep section")
    name, values = spec.sweep
    if not values:
        raise ConfigError("sweep grid is empty")
    rows = []
    for v in values:
        point = apply_sweep_value(spec, name, v)
        point.validate()
        for s in summarize(run_experiment(point, workers)):
            rows.append(SweepRow(name, float(v), s.algorithm, s.group, s.mean, s.std))
    return rows


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

REGRET_FIELDS = ["run_id", "algorithm", "seed", "replication", "setting", "group", "t", "cum_regret"]
REFEREE_FIELDS = ["run_id", "algorithm", "seed", "replication", "setting", "group", "t", "pb_cb"]
SUMMARY_FIELDS = ["algorithm", "group", "mean", "std", "macro_mean", "macro_std", "runs"]
SWEEP_FIELDS = ["parameter", "value", "algorithm", "group", "mean", "std"]


def _open_csv(path: Path, header: Sequence[str]):
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def emit_outputs(traces: Sequence[RegretTrace], out_dir: str | Path) -> dict[str, Path]:
    """Write the CSV artifacts; returns their paths by name.

    - ``regret_curves.csv``: mean per-user cumulative regret of each group, per run and step (t from 1).
    - ``referee_trace.csv``: mean referee probability of the contextual bandit, referee algorithms only.
    - ``summary.csv``: one row per (algorithm, group), see :func:`summarize`.
    - ``adjacency/<run_id>/adjacency_<user>.csv``: final transition matrices.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    paths = {"regret_curves": out / "regret_curves.csv", "referee_trace": out / "referee_trace.csv",
             "summary": out / "summary.csv"}

    fh, w = _open_csv(paths["regret_curves"], REGRET_FIELDS)
    with fh:
        for tr in traces:
            k = tr.key
            for g in tr.groups:
                for t, c in enumerate(tr.cumulative(g), start=1):
                    w.writerow([k.run_id, k.algorithm, k.seed, k.replication, k.setting, g, t, repr(float(c))])

    fh, w = _open_csv(paths["referee_trace"], REFEREE_FIELDS)
    with fh:
        for tr in traces:
            if np.all(np.isnan(tr.pb_cb)):
                continue
            k = tr.key
            for g in tr.groups:
                pb = tr.pb_cb[tr.group_mask(g)].mean(axis=0)
                for t, p in enumerate(pb, start=1):
                    w.writerow([k.run_id, k.algorithm, k.seed, k.replication, k.setting, g, t, repr(float(p))])

    fh, w = _open_csv(paths["summary"], SUMMARY_FIELDS)
    with fh:
        for r in summarize(traces):
            w.writerow([r.algorithm, r.group, repr(r.mean), repr(r.std), repr(r.macro_mean), repr(r.macro_std), r.runs])

    for tr in traces:
        if tr.transition_matrices:
            run_dir = out / "adjacency" / tr.key.run_id
            run_dir.mkdir(parents=True, exist_ok=True)
            for u, m in enumerate(tr.transition_matrices):
                write_matrix_csv(run_dir / f"adjacency_{u}.csv", m)
    return paths


def write_sweep(rows: Sequence[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh, w = _open_csv(path, SWEEP_FIELDS)
    with fh:
        for r in rows:
            w.writerow([r.parameter, repr(r.value), r.algorithm, r.group, repr(r.mean), repr(r.std)])
    return path


def read_regret_curves(path: str | Path) -> dict[tuple[str, str], np.ndarray]:
    """``(run_id, group) -> cumulative regret`` as written by :func:`emit_outputs`."""
    curves: dict[tuple[str, str], list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault((row["run_id"], row["group"]), []).append(float(row["cum_regret"]))
    return {k: np.array(v) for k, v in curves.items()}

