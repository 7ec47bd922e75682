import json

import numpy as np
import pytest

from ctxzoom.environments import (
    EnvironmentInstance,
    make_adversarial_env,
    make_needle_instance,
    make_peak_instance,
    save_instance,
)
from ctxzoom.harness import (
    CSV_COLUMNS,
    ConfigError,
    DoublingWrapper,
    ExperimentConfig,
    OraclePolicy,
    audit,
    cell_regret,
    contextual_regret,
    make_policy,
    merge_reports,
    output_dir,
    phase_lengths,
    read_csv,
    run,
    run_config,
    streams,
    sweep,
    worker_count,
)
from ctxzoom.metric import discrete_space, line_grid
from ctxzoom.zooming import ContextualZooming


def peak(T=500, seed=0):
    return make_peak_instance(7, 7, T=T, rng=np.random.default_rng(seed))


def needle_config(tmp_path, algorithm="zooming", T=300, **extra):
    d = {"environment": {"generator": "needle", "params": {"n_x": 2, "n_y": 3, "r": 0.25}, "seed": 1},
         "algorithm": algorithm, "T": T, "seeds": [0, 1], "output_dir": str(tmp_path / "out")}
    d.update(extra)
    return ExperimentConfig.from_dict(d, base_dir=tmp_path)


# -- streams and the round loop ------------------------------------------------------------------


def test_streams_are_independent_and_repeatable():
    a, b = streams(3), streams(3)
    assert a["noise"].random() == b["noise"].random()
    draws = {name: g.random() for name, g in streams(3).items()}
    assert len(set(draws.values())) == 3
    assert streams(4)["noise"].random() != streams(3)["noise"].random()


def test_single_round_single_arm_has_no_regret():
    env = EnvironmentInstance(line_grid(1, kind="context"), line_grid(1, kind="arms"),
                              np.array([[0.3]]), np.ones((1, 1), bool), [0])
    log = run(env, ContextualZooming(env.similarity_space(), 1), 1, np.random.default_rng(0))
    assert len(log) == 1 and log.total_regret == 0.0


def test_oracle_policy_has_zero_regret():
    env = peak()
    log = run(env, OraclePolicy(env), 500, np.random.default_rng(0))
    assert log.total_regret == 0.0
    assert (log.cum_regret == 0).all()


def test_run_rejects_bad_horizon_and_infeasible_choices():
    env = peak()
    with pytest.raises(ConfigError):
        run(env, OraclePolicy(env), 0, np.random.default_rng(0))

    class Bad:
        structure_size = last_cell = 0

        def choose(self, x):
            return 0

        def update(self, *a):
            pass

    env.feasible = env.feasible.copy()
    env.feasible[:, 0] = False
    env._best = None
    with pytest.raises(ValueError):
        run(env, Bad(), 5, np.random.default_rng(0))


def test_log_fields_and_cumulative_regret():
    env = peak()
    pol = make_policy("zooming", env, 500, np.random.default_rng(0))
    log = run(env, pol, 500, np.random.default_rng(1))
    assert len(log) == 500
    assert (np.diff(log.cum_regret) >= -1e-15).all()
    np.testing.assert_allclose(contextual_regret(log, env), log.cum_regret)
    assert set(np.unique(log.payoff)) <= {0.0, 1.0}
    assert log.structure_size[-1] == pol.structure_size


def test_regret_replay_by_hand():
    env = peak()
    pairs = ([0, 3, 6], [3, 3, 0])
    star = env.mu.max(axis=1)
    want = np.cumsum([star[x] - env.mu[x, y] for x, y in zip(*pairs)])
    np.testing.assert_allclose(contextual_regret(pairs, env), want)


def test_constant_payoffs_give_zero_regret():
    env = EnvironmentInstance(line_grid(3, kind="context"), line_grid(4, kind="arms"),
                              np.full((3, 4), 0.5), np.ones((3, 4), bool), np.arange(20) % 3)
    log = run(env, make_policy("exp3", env, 20, np.random.default_rng(0)), 20, np.random.default_rng(0))
    assert (log.cum_regret == 0).all()


def test_adversarial_benchmark_is_exhaustive():
    rng = np.random.default_rng(2)
    T = 60
    tables = rng.random((T, 3, 4))
    arrivals = rng.integers(0, 3, T)
    env = make_adversarial_env(discrete_space(3, kind="context"), discrete_space(4), tables, arrivals)
    log = run(env, make_policy("exp3", env, T, rng), T, rng)
    want = 0.0
    for x in range(3):
        rounds = np.flatnonzero(arrivals == x)
        best = max(range(4), key=lambda y: (tables[:, x, y].sum(), -y))
        want += sum(tables[t, x, best] - tables[t, x, log.arm[t]] for t in rounds)
    assert log.total_regret == pytest.approx(want)


@pytest.mark.parametrize("name", ["zooming", "uniform", "meta"])
def test_regret_splits_over_cells(name):
    env = peak(800)
    log = run(env, make_policy(name, env, 800, np.random.default_rng(0)), 800, np.random.default_rng(0))
    assert sum(cell_regret(log).values()) == pytest.approx(log.total_regret)


def test_taxonomy_policy_needs_a_tree():
    with pytest.raises(ConfigError):
        make_policy("taxonomy", peak(), 10, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        make_policy("nope", peak(), 10, np.random.default_rng(0))


# -- doubling ---------------------------------------------------------------------------------------


def test_phase_lengths():
    assert phase_lengths(7) == [2, 4, 1]
    assert phase_lengths(14) == [2, 4, 8]
    assert phase_lengths(1) == [1]


def test_doubling_annotates_phases():
    env = peak()
    pol = make_policy("zooming", env, 7, np.random.default_rng(0), doubling=True)
    log = run(env, pol, 7, np.random.default_rng(0))
    assert log.phase.tolist() == [1, 1, 2, 2, 2, 2, 3]


@pytest.mark.parametrize("name", ["zooming", "exp3", "meta"])
def test_first_phase_matches_fixed_horizon_two(name):
    env = peak()
    wrapped = run(env, make_policy(name, env, 50, np.random.default_rng(5), doubling=True), 50,
                  np.random.default_rng(6))
    fixed = run(env, make_policy(name, env, 2, np.random.default_rng(5)), 2, np.random.default_rng(6))
    assert wrapped.arm[:2].tolist() == fixed.arm.tolist()
    assert wrapped.payoff[:2].tolist() == fixed.payoff.tolist()


def test_doubling_regret_within_factor_four():
    T = 4000
    env = make_peak_instance(9, 9, T=T, rng=np.random.default_rng(0))
    wrapped, fixed = [], []
    for seed in range(5):
        s = streams(seed)
        wrapped.append(run(env, DoublingWrapper(lambda h: ContextualZooming(env.similarity_space(), h)),
                           T, s["noise"]).total_regret)
        s = streams(seed)
        fixed.append(run(env, ContextualZooming(env.similarity_space(), T), T, s["noise"]).total_regret)
    assert np.median(wrapped) <= 4 * np.median(fixed)


# -- configs, determinism and output ---------------------------------------------------------------------


def test_config_validation(tmp_path):
    base = {"environment": {"generator": "needle", "params": {"n_x": 1, "n_y": 2, "r": 0.25}},
            "algorithm": "zooming", "T": 10}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(base, T=0))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(base, seeds=[]))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(base, colour="red"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(base, algorithm="nope"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(base, environment={"file": "missing.json"}), base_dir=tmp_path)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"algorithm": "zooming", "T": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "nothing.json")
    assert ExperimentConfig.from_dict(dict(base, T="1e3")).T == 1000


def test_environment_from_file_and_inline(tmp_path):
    env = make_needle_instance(2, 2, 0.25, needle=[0, 1])
    save_instance(env, tmp_path / "inst.json")
    cfg = ExperimentConfig.from_dict({"environment": {"file": "inst.json"}, "algorithm": "ucb1", "T": 20},
                                     base_dir=tmp_path)
    res = run_config(cfg, 0)
    inline = ExperimentConfig.from_dict({"environment": env.to_dict(), "algorithm": "ucb1", "T": 20})
    assert run_config(inline, 0)["log"].to_csv() == res["log"].to_csv()


@pytest.mark.parametrize("algorithm", ["zooming", "uniform", "meta", "exp3", "ucb1"])
def test_rerun_is_byte_identical(tmp_path, algorithm):
    cfg = needle_config(tmp_path, algorithm)
    a = run_config(cfg, 3)["log"].to_csv()
    b = run_config(cfg, 3)["log"].to_csv()
    assert a == b
    assert a.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_written_outputs(tmp_path):
    cfg = needle_config(tmp_path, audit=True)
    res = run_config(cfg, 0, write=True)
    out = tmp_path / "out"
    data = read_csv(out / "zooming_seed0.csv")
    assert len(data["round"]) == 300
    np.testing.assert_allclose(data["cum_regret"], res["log"].cum_regret)
    snap = json.loads((out / "zooming_seed0_snapshot.json").read_text())
    assert all(r["passed"] for r in audit(snap).values())
    report = json.loads((out / "zooming_seed0_audit.json").read_text())
    assert report["selection"]["events"] == 300
    assert res["summary"]["audit_passed"]


def test_output_dir_and_workers_from_environment(tmp_path, monkeypatch):
    cfg = needle_config(tmp_path)
    monkeypatch.setenv("CTXZOOM_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert output_dir(cfg) == tmp_path / "elsewhere"
    monkeypatch.setenv("CTXZOOM_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CTXZOOM_WORKERS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_sweep_rows_sorted_and_complete(tmp_path):
    cfg = needle_config(tmp_path, "ucb1")
    rows = sweep(cfg, {"T": [50, 100]}, workers=1)
    assert [(r["point"], r["seed"], r["T"]) for r in rows] == [(0, 0, 50), (0, 1, 50), (1, 0, 100), (1, 1, 100)]


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = needle_config(tmp_path, "exp3", T=100)
    grid = {"environment.params.r": [0.25, 0.125]}
    assert sweep(cfg, grid, workers=2) == sweep(cfg, grid, workers=1)


def test_snapshot_audit_dispatch():
    env = peak()
    pol = make_policy("zooming", env, 200, np.random.default_rng(0))
    run(env, pol, 200, np.random.default_rng(0))
    rep = audit(pol.snapshot(), ["covering"])
    assert list(rep) == ["covering"] and rep["covering"]["passed"]
    with pytest.raises(ConfigError):
        audit(pol.snapshot(), ["nonsense"])
    with pytest.raises(ConfigError):
        audit({"algorithm": "mystery"})


def test_merge_reports():
    a = {"x": {"passed": True, "violations": 0, "events": 3, "first_round": None, "detail": ""}}
    b = {"x": {"passed": False, "violations": 1, "events": 2, "first_round": 7, "detail": "bad"}}
    m = merge_reports([a, b])
    assert m["x"] == {"passed": False, "violations": 1, "events": 5, "first_round": 7, "detail": "bad"}
