import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctxzoom.baselines import (
    UCB1,
    Exp3,
    UniformPartition,
    choose_granularity,
    exp3_gamma,
    predicted_uniform_regret,
    uniform_granularity,
)
from ctxzoom.metric import ProductSpace, SimilaritySpace, build_r_net, line_grid


# -- EXP3 ----------------------------------------------------------------------------------------


def test_exp3_single_arm():
    b = Exp3(1, 100, np.random.default_rng(0))
    for _ in range(10):
        assert b.choose() == 0
        b.update(0, 0.3)


def test_exp3_gamma_one_is_uniform():
    b = Exp3(4, 100, np.random.default_rng(0), gamma=1.0)
    b.logw[:] = [5.0, 0.0, -3.0, 1.0]
    np.testing.assert_allclose(b.probabilities(), 0.25)


def test_exp3_default_gamma():
    assert exp3_gamma(5, 1000) == pytest.approx(math.sqrt(5 * math.log(5) / ((math.e - 1) * 1000)))
    assert exp3_gamma(1, 10) == 1.0


def test_exp3_rejects_bad_payoff():
    b = Exp3(3, 10, np.random.default_rng(0))
    b.choose()
    with pytest.raises(ValueError):
        b.update(0, -0.1)


@given(st.integers(2, 8), st.integers(1, 10 ** 5),
       st.lists(st.floats(-30, 30), min_size=8, max_size=8))
def test_exp3_probabilities_valid(k, T, logw):
    b = Exp3(k, T, np.random.default_rng(0))
    b.logw[:] = logw[:k]
    p = b.probabilities()
    assert p.sum() == pytest.approx(1.0)
    assert (p >= b.gamma / k - 1e-12).all()


def test_exp3_respects_allowed_arms():
    b = Exp3(4, 100, np.random.default_rng(1))
    allowed = np.array([False, True, False, True])
    assert {b.choose(allowed) for _ in range(200)} <= {1, 3}


def test_exp3_adversarial_regret_bound():
    k, T = 2, 10_000
    seq = np.zeros((T, k))
    seq[::3, 0] = 1.0
    seq[1::3, 1] = 1.0
    seq[2::3, 1] = 1.0
    seq[T // 2:] = seq[T // 2:, ::-1]
    best = seq.sum(axis=0).max()
    regrets = []
    for seed in range(10):
        b = Exp3(k, T, np.random.default_rng(seed))
        got = 0.0
        for t in range(T):
            a = b.choose()
            b.update(a, seq[t, a])
            got += seq[t, a]
        regrets.append(best - got)
    assert np.mean(regrets) <= 2.7 * math.sqrt(k * T * math.log(k))


# -- UCB1 ----------------------------------------------------------------------------------------


def test_ucb1_tries_untried_arms_in_order():
    b = UCB1(3)
    order = []
    for _ in range(3):
        a = b.choose()
        order.append(a)
        b.update(a, 0.0)
    assert order == [0, 1, 2]


def test_ucb1_single_arm_has_no_regret():
    b = UCB1(1)
    for _ in range(50):
        assert b.choose() == 0
        b.update(0, 1.0)


def test_ucb1_suboptimal_pulls():
    mu = np.array([0.9, 0.1])
    pulls = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        b = UCB1(2)
        draws = rng.random(10_000)
        for t in range(10_000):
            a = b.choose()
            b.update(a, float(draws[t] < mu[a]))
        pulls.append(b.n[1])
    assert np.median(pulls) <= 200


def test_ucb1_respects_allowed_arms():
    b = UCB1(3)
    allowed = np.array([False, True, True])
    for _ in range(20):
        a = b.choose(allowed)
        assert a in (1, 2)
        b.update(a, 0.5)


# -- uniform algorithm --------------------------------------------------------------------------------


def test_single_context_reduces_to_exp3():
    space = ProductSpace(line_grid(1, kind="context"), line_grid(17, kind="arms"))
    u = UniformPartition(space, 1000, np.random.default_rng(0))
    assert len(u.context_net) == 1
    u.update(0, u.choose(0), 0.5)
    assert u.structure_size == 1
    assert u.cells[0].k == len(u.arm_net)


def test_power_rule_granularity():
    assert uniform_granularity(10 ** 4, 1, 1) == pytest.approx(0.1)
    space = ProductSpace(line_grid(50, kind="context"), line_grid(50, kind="arms"))
    u = UniformPartition(space, 10 ** 4, np.random.default_rng(0), granularity="power")
    assert u.r == pytest.approx(0.1)
    with pytest.raises(ValueError):
        UniformPartition(space, 100, np.random.default_rng(0), granularity="bogus")


def test_predicted_granularity_is_a_scan_minimum():
    X, Y = line_grid(33, kind="context"), line_grid(65, scale=4.0, kind="arms")
    T = 10 ** 4
    r, cx, cy = choose_granularity(X, Y, T)
    chosen = predicted_uniform_regret(r, len(cx), len(cy), T)
    for j in range(0, 40):
        q = 2.0 ** (-j / 4)
        other = predicted_uniform_regret(q, len(build_r_net(X, q)), len(build_r_net(Y, q)), T)
        assert chosen <= other + 1e-9


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(10, 10 ** 5))
def test_routing_stays_within_r(xs, T):
    X = SimilaritySpace(np.array(xs), kind="context")
    space = ProductSpace(X, line_grid(9, kind="arms"))
    u = UniformPartition(space, T, np.random.default_rng(0))
    for x in range(len(X)):
        assert X.dist(x, u.route(x)) <= u.r + 1e-12


def test_uniform_plays_feasible_arms():
    feas = np.zeros((5, 9), dtype=bool)
    feas[:, 4] = True
    feas[0, :] = True
    space = ProductSpace(line_grid(5, kind="context"), line_grid(9, kind="arms"), feas)
    u = UniformPartition(space, 100, np.random.default_rng(3), r=0.3)
    for t in range(50):
        x = t % 5
        y = u.choose(x)
        assert feas[x, y]
        u.update(x, y, 0.5)
