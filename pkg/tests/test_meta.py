import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from ctxzoom.environments import make_peak_instance, make_random_lipschitz
from ctxzoom.harness import cell_regret, run
from ctxzoom.meta import (
    ContextualBandit,
    MetaAuditor,
    ProtocolError,
    audit_meta_snapshot,
    full_ball_report,
    rk_covering_number,
    t0,
)
from ctxzoom.metric import ProductSpace, SimilaritySpace, covering_number, line_grid


def space(n_x=9, n_y=3):
    return ProductSpace(line_grid(n_x, kind="context"), line_grid(n_y, kind="arms"))


def play(policy, x, payoff=0.5):
    y = policy.choose(x)
    policy.update(x, y, payoff)
    return y


# -- budgets ---------------------------------------------------------------------------------


def test_t0_values():
    assert t0(1.0, 3.0, 0.0) == 3
    assert t0(1.0, 0.2, 1.0) == 1
    assert t0(1 / math.e, 1.0, 0.0) == 8


@given(st.integers(0, 15), st.floats(0.01, 50), st.floats(0, 3))
def test_t0_increases_as_radius_halves(level, c_y, d_y):
    r = 2.0 ** -level
    assert t0(r / 2, c_y, d_y) >= t0(r, c_y, d_y)
    # once the unclamped value reaches 1 the floor no longer binds
    if c_y * r ** -(2 + d_y) >= 1:
        assert t0(r / 2, c_y, d_y) > t0(r, c_y, d_y)


def test_t0_rejects_bad_input():
    with pytest.raises(ValueError):
        t0(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        t0(0.5, 0.0, 0.0)


# -- routing ---------------------------------------------------------------------------------


def test_fresh_state_hits_root():
    m = ContextualBandit(space(), 100, np.random.default_rng(0))
    assert m.route(4) == 0


def test_full_root_spawns_child_at_context():
    m = ContextualBandit(space(), 100, np.random.default_rng(0), c_y=2.0)
    budget = m.budget(0)
    for _ in range(budget):
        play(m, 0)
    assert m.full(0)
    play(m, 6)
    assert m.structure_size == 2
    assert m.centers[1] == 6 and m.radius(1) == 0.5 and m.parents[1] == 0
    assert m.last_cell == 1 and m.hits[1] == 1


def test_full_ball_is_never_hit_again():
    m = ContextualBandit(space(5), 10_000, np.random.default_rng(1), c_y=1.0)
    for t in range(3000):
        play(m, t % 5)
        for i in range(m.structure_size):
            assert m.hits[i] <= m.budget(m.levels[i])


def test_subroutine_samples_every_arm():
    m = ContextualBandit(space(1, 3), 10_000, np.random.default_rng(2))
    seen = {play(m, 0) for _ in range(300)}
    assert seen == {0, 1, 2}


def test_feedback_for_wrong_ball_is_a_protocol_error():
    m = ContextualBandit(space(), 100, np.random.default_rng(0))
    y = m.choose(0)
    with pytest.raises(ProtocolError):
        m.feedback(5, y, 0.5)
    with pytest.raises(ProtocolError):
        m.update(1, y, 0.5)
    m.update(0, y, 0.5)
    with pytest.raises(ProtocolError):
        m.feedback(0, y, 0.5)


def test_arm_net_option():
    m = ContextualBandit(space(3, 17), 100, np.random.default_rng(0), arm_radius=0.25)
    assert len(m.arms) < 17
    assert m.c_y == len(m.arms)


# -- (r, k)-covering -----------------------------------------------------------------------------


def test_rk_covering_k_one_is_plain_covering():
    X = line_grid(41)
    arr = np.array([0, 3, 3, 10, 20, 21, 40])
    assert rk_covering_number(X, arr, 0.1, 1) == covering_number(X, 0.1, np.unique(arr))


def test_rk_covering_heavy_filter_empty():
    X = line_grid(11)
    assert rk_covering_number(X, [1, 2, 3], 0.1, 4) == 0
    assert rk_covering_number(X, [], 0.1, 1) == 0


def test_rk_covering_two_clusters():
    rng = np.random.default_rng(0)
    coords = np.concatenate([0.2 + 0.01 * rng.random(20), 0.7 + 0.01 * rng.random(20),
                             [0.0, 0.4, 0.5, 0.9, 1.0]])
    X = SimilaritySpace(coords, kind="context")
    arrivals = np.arange(len(coords))
    assert rk_covering_number(X, arrivals, 0.1, 10) == 2
    assert rk_covering_number(X, arrivals, 0.1, 10, exact=True) == oracles.min_cover(
        oracles.distance_matrix(X, range(40)), 0.1)


# -- replay audits ---------------------------------------------------------------------------------


def test_audited_run_satisfies_claims():
    env = make_peak_instance(17, 5, T=10_000, rng=np.random.default_rng(0))
    T = 10_000
    policy = ContextualBandit(env.similarity_space(), T, np.random.default_rng(1), c_y=0.5)
    auditor = MetaAuditor(env, T)
    run(env, policy, T, np.random.default_rng(2), [auditor])
    rep = auditor.report()
    for check, res in rep.items():
        assert res["passed"], (check, res)
    assert rep["one_hit"]["events"] == T
    assert policy.structure_size > 3
    snap_checks = audit_meta_snapshot(policy.snapshot(), env.arrivals_for(T))
    assert all(ok for ok, _ in snap_checks.values()), snap_checks


@given(st.integers(0, 2 ** 32 - 1))
def test_random_runs_have_one_hit_ball(seed):
    rng = np.random.default_rng(seed)
    env = make_random_lipschitz(int(rng.integers(2, 12)), 3, T=600, rng=rng)
    policy = ContextualBandit(env.similarity_space(), 600, rng, c_y=0.2)
    auditor = MetaAuditor(env, 600)
    run(env, policy, 600, rng, [auditor])
    rep = auditor.report()
    for check in ("one_hit", "hit_budget", "separation", "activation", "children"):
        assert rep[check]["passed"], (check, rep[check])


def test_full_ball_report_rows():
    env = make_peak_instance(9, 3, T=2000, rng=np.random.default_rng(0))
    policy = ContextualBandit(env.similarity_space(), 2000, np.random.default_rng(0), c_y=0.5)
    run(env, policy, 2000, np.random.default_rng(0))
    rows = full_ball_report(policy.snapshot(), env.arrivals_for(2000), env.context_space)
    assert rows[0]["radius"] == 1.0 and rows[0]["full"] == 1
    for row in rows:
        assert row["full"] <= row["bound"] <= row["bound_dbl"]


def test_regret_decomposes_over_balls():
    env = make_peak_instance(9, 5, T=3000, rng=np.random.default_rng(4))
    policy = ContextualBandit(env.similarity_space(), 3000, np.random.default_rng(4), c_y=0.5)
    log = run(env, policy, 3000, np.random.default_rng(5))
    per_ball = cell_regret(log)
    assert set(per_ball) <= set(range(policy.structure_size))
    assert sum(per_ball.values()) == pytest.approx(log.total_regret)
