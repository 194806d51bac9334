import csv
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from combine_bandits.cli import main
from combine_bandits.experiments import (
    ALGORITHMS,
    ConfigError,
    ExperimentSpec,
    RunKey,
    SimulationSettings,
    apply_sweep_value,
    dynamic_regret,
    emit_outputs,
    instability_to_step_size,
    parse_seeds,
    read_regret_curves,
    run_experiment,
    simulate_run,
    summarize,
    sweep,
    total_mean,
)
from combine_bandits.transitions import read_matrix_csv


def small_spec(**kw):
    base = ExperimentSpec(
        algorithms=("LinUCB", "COMBINE-softmax"),
        seeds=(0, 1),
        horizon=60,
        simulation=SimulationSettings(num_actions=(3,), users_per_group=2),
    )
    return replace(base, **kw)


def test_dynamic_regret_examples():
    np.testing.assert_array_equal(dynamic_regret([1, 0, 1], [1, 0, 1]), [0, 0, 0])
    np.testing.assert_array_equal(dynamic_regret([1, 0, 1, 0], [1, 1, 1, 1]), [0, 1, 1, 2])
    with pytest.raises(ValueError):
        dynamic_regret([1, 0], [1])


def test_final_regret_counts_suboptimal_pulls():
    tr = simulate_run(small_spec(), RunKey("COMBINE-UCB", "K=3", 0, 0))
    assert set(np.unique(tr.regret)) <= {0, 1}
    for u in range(tr.regret.shape[0]):
        cum = dynamic_regret(1 - tr.regret[u], np.ones(tr.regret.shape[1]))
        assert cum[-1] == tr.regret[u].sum()
        assert np.all(np.diff(cum) >= 0)


def test_single_action_has_no_regret():
    spec = small_spec(algorithms=("COMBINE-softmax",), seeds=(0,),
                      simulation=SimulationSettings(num_actions=(1,), users_per_group=2))
    (tr,) = run_experiment(spec)
    assert tr.final() == 0


def test_runs_are_deterministic_and_worker_independent():
    spec = small_spec()
    a = run_experiment(spec)
    b = run_experiment(spec, workers=2)
    assert [t.key for t in a] == [t.key for t in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.regret, y.regret)
        np.testing.assert_array_equal(x.pb_cb, y.pb_cb)


def test_seed_isolation_between_algorithms():
    one = run_experiment(small_spec(algorithms=("LinTS", "COMBINE-UCB")))
    other = run_experiment(small_spec(algorithms=("LinTS", "COMBINE-softmax common")))
    pick = lambda traces: next(t for t in traces if t.key.algorithm == "LinTS")  # noqa: E731
    np.testing.assert_array_equal(pick(one).regret, pick(other).regret)


def test_environment_shared_across_algorithms():
    spec = small_spec()
    key = RunKey("UCBBanditS", "K=3", 0, 0)
    a = simulate_run(replace(spec, algorithms=("UCBBanditS",)), key)
    b = simulate_run(replace(spec, algorithms=("UCBBanditS",), params=replace(spec.params, alpha=3.0)), key)
    np.testing.assert_array_equal(a.regret, b.regret)


def test_summary_mean_is_mean_of_final_regrets():
    traces = run_experiment(small_spec(simulation=SimulationSettings(num_actions=(2, 3), users_per_group=2)))
    rows = summarize(traces)
    assert len(rows) == 2 * 2
    for r in rows:
        finals = [t.final(r.group) for t in traces if t.key.algorithm == r.algorithm]
        assert abs(r.mean - np.mean(finals)) <= 1e-10
        assert r.runs == 4
        per_k = [np.mean([t.final(r.group) for t in traces if t.key.algorithm == r.algorithm and t.key.setting == s])
                 for s in ("K=2", "K=3")]
        assert abs(r.macro_mean - np.mean(per_k)) <= 1e-10
    lin = [r.mean for r in rows if r.algorithm == "LinUCB"]
    assert total_mean(rows, "LinUCB") == pytest.approx(np.mean(lin))


def test_emit_outputs_round_trip(tmp_path):
    traces = run_experiment(small_spec())
    paths = emit_outputs(traces, tmp_path)
    curves = read_regret_curves(paths["regret_curves"])
    for tr in traces:
        for g in tr.groups:
            np.testing.assert_array_equal(curves[(tr.key.run_id, g)], tr.cumulative(g))
    summary = list(csv.DictReader(open(paths["summary"])))
    assert len(summary) == 2 * 2
    referee = list(csv.DictReader(open(paths["referee_trace"])))
    assert {r["algorithm"] for r in referee} == {"COMBINE-softmax"}
    assert float(referee[0]["pb_cb"]) == 0.5
    combine_run = next(t for t in traces if t.key.algorithm == "COMBINE-softmax")
    m, labels = read_matrix_csv(tmp_path / "adjacency" / combine_run.key.run_id / "adjacency_0.csv")
    np.testing.assert_array_equal(m, combine_run.transition_matrices[0])


def test_emit_outputs_empty(tmp_path):
    paths = emit_outputs([], tmp_path)
    for p in paths.values():
        assert len(open(p).read().strip().splitlines()) == 1


def test_emit_outputs_unwritable(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs([], target)


def test_stream_experiment_runs():
    spec = ExperimentSpec.from_dict({
        "environment": "stream", "horizon": 100, "seeds": [0], "algorithms": ["UCBBanditNS", "COMBINE-UCB"],
        "stream": {"labels": [1, 2, 3], "corruption": {"kind": "UniformBox", "prob": 0.5}},
    })
    traces = run_experiment(spec)
    assert [t.regret.shape for t in traces] == [(2, 100), (2, 100)]
    assert traces[1].user_groups == ["drifting3", "drifting3"]


def test_spec_yaml_loading(tmp_path):
    p = tmp_path / "spec.yaml"
    p.write_text(
        "environment: simulation\nhorizon: 50\nseeds: 0-2\nalgorithms: [LinUCB]\n"
        "params: {alpha_s: 5}\nsimulation: {num_actions: [2, 5], users_per_group: 3}\n"
        "sweep: {parameter: alpha_s, values: [0, 10]}\n"
    )
    spec = ExperimentSpec.from_yaml(p)
    assert spec.seeds == (0, 1, 2) and spec.params.alpha_s == 5
    assert spec.simulation.num_actions == (2, 5) and spec.sweep == ("alpha_s", (0.0, 10.0))


@pytest.mark.parametrize(
    "raw, msg",
    [
        ({"algorithms": ["Nope"]}, "unknown algorithm"),
        ({"algorithms": []}, "at least one algorithm"),
        ({"seeds": []}, "at least one seed"),
        ({"bogus": 1}, "unknown top-level"),
        ({"params": {"gamma": 2}}, "gamma"),
        ({"params": {"zeta": 2}}, "params"),
        ({"simulation": {"groups": {"A": {"step_size": 2}}}}, "group 'A'"),
        ({"sweep": {"parameter": "nope", "values": [1]}}, "cannot sweep"),
        ({"sweep": {"parameter": "alpha_s", "values": []}}, "empty"),
        ({"environment": "stream", "stream": {"path": "/nonexistent.csv"}}, "not found"),
    ],
)
def test_spec_errors_before_running(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentSpec.from_dict(raw)


def test_parse_seeds():
    assert parse_seeds("0-3") == (0, 1, 2, 3)
    assert parse_seeds("1,5, 7") == (1, 5, 7)
    assert parse_seeds(4) == (4,)
    with pytest.raises(ConfigError):
        parse_seeds("a-b")


def test_instability_mapping():
    assert instability_to_step_size(0.0) == 0.0
    assert instability_to_step_size(1.0) == 0.5
    assert instability_to_step_size(0.4) == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        instability_to_step_size(1.5)


def test_apply_sweep_values():
    spec = small_spec()
    assert apply_sweep_value(spec, "alpha_s", 3.0).params.alpha_s == 3.0
    groups = apply_sweep_value(spec, "corruption_prob", 0.25).simulation.groups
    assert all(g["corruption_prob"] == 0.25 for g in groups.values())
    groups = apply_sweep_value(spec, "instability", 0.5).simulation.groups
    assert all(g["step_size"] == 0.25 for g in groups.values())


def test_sweep_grid_of_one_equals_single_run():
    spec = replace(small_spec(), sweep=("alpha_b", (1.0,)))
    rows = sweep(spec)
    direct = summarize(run_experiment(replace(spec, sweep=None)))
    assert [(r.algorithm, r.group, r.mean, r.std) for r in rows] == [(d.algorithm, d.group, d.mean, d.std) for d in direct]


@pytest.mark.slow
def test_alpha_s_sweep_direction_on_slow_group():
    spec = ExperimentSpec(
        algorithms=("COMBINE-softmax",), seeds=tuple(range(5)), horizon=2500,
        simulation=SimulationSettings(num_actions=(5,), groups={"B": {"step_size": 0.01, "corruption_prob": 1.0}}),
        sweep=("alpha_s", (0.0, 5.0, 10.0, 20.0)),
    )
    means = {r.value: r.mean for r in sweep(spec)}
    for v in (5.0, 10.0, 20.0):
        assert means[v] <= means[0.0]


@pytest.mark.slow
def test_corruption_sweep_linucb_monotone():
    spec = ExperimentSpec(
        algorithms=("LinUCB",), seeds=tuple(range(5)), horizon=2500,
        simulation=SimulationSettings(num_actions=(5,), groups={"A": {"step_size": 0.2, "corruption_prob": 0.0}}),
        sweep=("corruption_prob", (0.0, 0.25, 0.5, 0.75, 1.0)),
    )
    means = [r.mean for r in sorted(sweep(spec), key=lambda r: r.value)]
    for lo, hi in zip(means, means[1:]):
        assert hi >= 0.95 * lo


def test_full_table_configuration_structure():
    spec = ExperimentSpec(algorithms=ALGORITHMS, seeds=(0,), horizon=5,
                          simulation=SimulationSettings(num_actions=(2, 5, 7, 9, 12, 15)))
    rows = summarize(run_experiment(spec))
    assert len(rows) == len(ALGORITHMS) * 2
    assert {r.group for r in rows} == {"A", "B"}
    assert all(r.runs == 6 for r in rows)


# -- CLI -------------------------------------------------------------------


def _spec_file(tmp_path, text):
    p = tmp_path / "spec.yaml"
    p.write_text(text)
    return p


def test_cli_simulate(tmp_path, capsys):
    spec = _spec_file(tmp_path, "horizon: 30\nalgorithms: [LinUCB, COMBINE-UCB]\nsimulation: {num_actions: [3], users_per_group: 2}\n")
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "o"), "--seeds", "0-1"]) == 0
    assert (tmp_path / "o" / "summary.csv").exists()
    assert "COMBINE-UCB" in capsys.readouterr().out


def test_cli_replay_and_sweep(tmp_path):
    spec = _spec_file(tmp_path, "environment: stream\nhorizon: 40\nalgorithms: [LinUCB]\n"
                                "stream: {corruption: {prob: 1.0}}\nsweep: {parameter: corruption_prob, values: [0, 1]}\n")
    assert main(["replay", "--spec", str(spec), "--out", str(tmp_path / "r")]) == 0
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "s")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
    assert [r["value"] for r in rows] == ["0.0", "1.0"]


def test_cli_dynamics(tmp_path):
    spec = _spec_file(tmp_path, "dynamics: {horizon: 200, replications: 100}\n")
    assert main(["dynamics", "--spec", str(spec), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "dynamics.csv")))
    assert len(rows) == 200 and list(rows[0]) == ["t", "p_theory", "p_empirical", "C_infinity"]


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    bad = _spec_file(tmp_path, "algorithms: [Nope]\n")
    assert main(["simulate", "--spec", str(bad)]) == 2
    assert "unknown algorithm" in capsys.readouterr().err
    assert main(["sweep", "--out", str(tmp_path)]) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "combine_bandits.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
