
import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from ctxzoom.environments import check_lipschitz
from ctxzoom.harness import run
from ctxzoom.taxonomy import (
    PhasedTaxonomyBandit,
    Taxonomy,
    TaxonomyAuditor,
    TaxonomyBandit,
    TaxonomyError,
    all_weights,
    clustered_payoffs,
    k_a,
    load_taxonomy,
    make_taxonomy_env,
    node_index,
    node_means,
    save_taxonomy,
    tax_confidence_radius,
    true_quality,
    true_weight,
    weight_estimate_pairs,
)

# root 0 -> {1, 2}; 1 -> {3, 4}; 2 -> {5, 6}
TWO_CLUSTERS = [-1, 0, 0, 1, 1, 2, 2]


def random_tree(seed, depth=3, d_T=3):
    rng = np.random.default_rng(seed)
    tax = Taxonomy.random(rng, depth=depth, d_T=d_T, leaf_prob=0.3)
    return tax, rng.random(tax.n_arms)


def seeded_stats(bandit, rng):
    bandit.n[:] = rng.integers(0, 200, len(bandit.n))
    bandit.payoff_sum[:] = rng.random(len(bandit.n)) * bandit.n
    for leaf in bandit.tax.leaves:
        bandit._refresh(int(leaf))


# -- tree structure ------------------------------------------------------------------------------


def test_tree_validation():
    with pytest.raises(TaxonomyError):
        Taxonomy([-1, 0])
    with pytest.raises(TaxonomyError):
        Taxonomy([-1, -1, 0, 0])
    with pytest.raises(TaxonomyError):
        Taxonomy([-1, 0, 0, 0], d_T=2)
    with pytest.raises(TaxonomyError):
        Taxonomy([-1, 2, 1, 0, 0])
    with pytest.raises(TaxonomyError):
        Taxonomy([])


def test_leaves_are_arms_in_id_order():
    tax = Taxonomy(TWO_CLUSTERS)
    assert tax.leaves.tolist() == [3, 4, 5, 6]
    assert tax.arm_of[5] == 2
    assert sorted(tax.subtree(1).tolist()) == [1, 3, 4]
    assert tax.path_up(6) == [6, 2, 0]


def test_balanced_tree_shape():
    tax = Taxonomy.balanced(3, 2)
    assert len(tax) == 13 and tax.n_arms == 9 and tax.d_T == 3


def test_round_trip(tmp_path):
    tax, mu = random_tree(4)
    save_taxonomy(tax, mu, tmp_path / "t.json")
    back, mu2 = load_taxonomy(tmp_path / "t.json")
    assert back.parent.tolist() == tax.parent.tolist()
    np.testing.assert_array_equal(mu, mu2)


# -- oracles -------------------------------------------------------------------------------------


def test_constant_payoffs_have_no_weight():
    tax = Taxonomy.balanced(2, 3)
    mu = np.full(tax.n_arms, 0.4)
    assert all_weights(tax, mu).max() == 0.0
    assert true_quality(tax, mu) == 1.0


def test_two_leaf_root_weight():
    tax = Taxonomy([-1, 0, 0])
    assert true_weight(tax, [0.2, 0.8], 0) == pytest.approx(0.6)
    # the only internal node cannot witness a gap
    assert true_quality(tax, [0.2, 0.8]) == 0.0


def test_weights_on_31_node_tree():
    tax = Taxonomy.balanced(2, 4)
    assert len(tax) == 31
    mu = np.random.default_rng(0).random(tax.n_arms)
    for v in range(31):
        assert true_weight(tax, mu, v) == pytest.approx(oracles.weight(tax.parent, mu, v))


@pytest.mark.parametrize("seed", range(20))
def test_quality_matches_definition(seed):
    tax, mu = random_tree(seed)
    if seed % 2:
        mu = clustered_payoffs(tax, np.random.default_rng(seed))
    assert true_quality(tax, mu) == pytest.approx(oracles.quality(tax.parent, mu), abs=1e-12)


def test_node_means_are_descent_averages():
    tax, mu = random_tree(7)
    got = node_means(tax, mu)
    for v in range(len(tax)):
        assert got[v] == pytest.approx(oracles.mean_payoff(tax.parent, mu, v))


def test_leaf_distance_is_lca_weight():
    tax = Taxonomy(TWO_CLUSTERS)
    mu = [0.9, 0.7, 0.2, 0.1]
    D = tax.leaf_distance(mu)
    assert D[0, 1] == pytest.approx(0.2)
    assert D[0, 3] == pytest.approx(0.8)
    assert D[2, 2] == 0.0
    env = make_taxonomy_env(tax, mu, 10)
    assert check_lipschitz(env) == []


# -- random descent --------------------------------------------------------------------------------


def test_descent_from_leaf_is_identity():
    tax = Taxonomy(TWO_CLUSTERS)
    assert tax.random_descend(4, np.random.default_rng(0)) == 4


def test_descent_frequencies_on_binary_tree():
    tax = Taxonomy.balanced(2, 2)
    rng = np.random.default_rng(1)
    counts = np.bincount([tax.random_descend(0, rng) for _ in range(100_000)], minlength=len(tax))
    np.testing.assert_allclose(counts[tax.leaves] / 100_000, 0.25, atol=0.02)


def test_reach_probabilities_match_visits():
    tax = Taxonomy([-1, 0, 0, 0, 1, 1, 2, 2, 2, 4, 4, 6, 6, 6, 6])
    assert len(tax) == 15
    rng = np.random.default_rng(2)
    visits = np.zeros(len(tax))
    draws = 60_000
    for _ in range(draws):
        for u in tax.path_up(tax.random_descend(0, rng)):
            visits[u] += 1
    P = tax.reach_probabilities(0)
    np.testing.assert_allclose(visits / draws, P, atol=0.01)
    for u in range(len(tax)):
        assert P[u] == pytest.approx(oracles.reach(tax.parent, 0, u))


# -- formulas -------------------------------------------------------------------------------------


def test_confidence_radius_values():
    assert tax_confidence_radius(30, 0, log_T=4.0) == pytest.approx(1.0)
    assert tax_confidence_radius(0, 0, log_T=1.0) == pytest.approx(2.0)


@given(st.integers(0, 10 ** 6), st.floats(2, 1e9))
def test_confidence_radius_decreasing(n, T):
    assert tax_confidence_radius(n + 1, T) < tax_confidence_radius(n, T)


def test_index_values():
    assert k_a(0.5) == pytest.approx(8.0)
    assert node_index(0, 0.0, 0, 0.5, log_T=1.0) == pytest.approx(34.0)
    assert node_index(10 ** 12, 0.3 * 10 ** 12, 100, 0.5) == pytest.approx(0.3, abs=1e-3)
    with pytest.raises(ValueError):
        k_a(0.0)


@given(st.integers(0, 10 ** 4), st.floats(0, 1), st.floats(0.05, 1), st.floats(0.1, 20))
def test_index_at_least_mean(n, frac, q_hat, log_T):
    mean = frac if n else 0.0
    assert node_index(n, frac * n, 0, q_hat, log_T=log_T) >= mean


def test_weight_estimate_pair_example():
    log_T = 0.125
    n = np.array([98.0, 98.0])
    assert tax_confidence_radius(98, 0, log_T=log_T) == pytest.approx(0.1)
    assert weight_estimate_pairs(n, [0.9 * 98, 0.3 * 98], [0, 1], log_T) == pytest.approx(0.4)


def test_weight_estimate_unsampled_is_zero():
    b = TaxonomyBandit(Taxonomy.balanced(2, 3), 1000, np.random.default_rng(0))
    assert b.weight_estimate(0) == 0.0
    with pytest.raises(TaxonomyError):
        b.weight_estimate(int(b.tax.leaves[0]))


@given(st.integers(0, 2 ** 32 - 1))
def test_weight_estimate_matches_pair_scan(seed):
    tax, _ = random_tree(seed % 1000)
    b = TaxonomyBandit(tax, 5000, np.random.default_rng(seed))
    seeded_stats(b, np.random.default_rng(seed))
    for v in tax.internal:
        want = weight_estimate_pairs(b.n, b.payoff_sum, tax.subtree(v), b.log_T)
        assert b.weight_estimate(v) == pytest.approx(want, abs=1e-12)


# -- S1 to S3 -------------------------------------------------------------------------------------------


def test_rebalance_noop_when_invariant_holds():
    b = TaxonomyBandit(Taxonomy(TWO_CLUSTERS), 1000, np.random.default_rng(0))
    assert b.rebalance() == []
    assert b.active.tolist() == [True] + [False] * 6


def test_rebalance_splits_violating_node():
    b = TaxonomyBandit(Taxonomy(TWO_CLUSTERS), 1000, np.random.default_rng(0), q_hat=1.0)
    b.n[:] = 10 ** 6
    b.payoff_sum[:] = 0.5 * 10 ** 6
    b.payoff_sum[[1, 3, 4]] = 0.95 * 10 ** 6
    b.payoff_sum[[2, 5, 6]] = 0.05 * 10 ** 6
    for leaf in b.tax.leaves:
        b._refresh(int(leaf))
    b._check = [0]
    assert b.rebalance() == [0]
    assert b.active.tolist() == [False, True, True, False, False, False, False]
    assert b.retired[0]


def test_first_round_selects_root():
    b = TaxonomyBandit(Taxonomy(TWO_CLUSTERS), 100, np.random.default_rng(0))
    v, leaf = b.step()
    assert v == 0 and b.tax.is_leaf[leaf]
    b.feedback(v, leaf, 1.0)
    assert sorted(np.flatnonzero(b.n).tolist()) == sorted(b.tax.path_up(leaf))


def test_leaf_selection_updates_only_the_leaf():
    b = TaxonomyBandit(Taxonomy(TWO_CLUSTERS), 100, np.random.default_rng(0))
    b.active[:] = False
    b.active[[3, 4, 2]] = True
    b.n[[2, 3]] = 50
    b.payoff_sum[2] = 0.0
    b.payoff_sum[3] = 0.0
    b._check = []
    v, leaf = b.step()
    assert v == leaf == 4
    b.feedback(v, leaf, 0.5)
    assert np.flatnonzero(b.n).tolist() == [2, 3, 4] and b.n[4] == 1


def test_feedback_mismatch_is_rejected():
    b = TaxonomyBandit(Taxonomy(TWO_CLUSTERS), 100, np.random.default_rng(0))
    v, leaf = b.step()
    with pytest.raises(TaxonomyError):
        b.feedback(v, leaf + 1 if leaf < 6 else 3, 0.5)
    with pytest.raises(ValueError):
        b.feedback(v, leaf, 2.0)


def test_audited_run_passes():
    tax = Taxonomy.balanced(2, 4)
    mu = clustered_payoffs(tax, np.random.default_rng(3))
    env = make_taxonomy_env(tax, mu, 10_000)
    b = TaxonomyBandit(tax, 10_000, np.random.default_rng(4))
    auditor = TaxonomyAuditor(env, 10_000)
    run(env, b, 10_000, np.random.default_rng(5), [auditor])
    rep = auditor.report()
    for check, res in rep.items():
        assert res["passed"], (check, res)
    assert rep["path"]["events"] == 10_000


def test_deactivations_satisfy_lemma():
    tax = Taxonomy(TWO_CLUSTERS)
    mu = [0.95, 0.95, 0.05, 0.05]
    T = 20_000
    env = make_taxonomy_env(tax, mu, T)
    b = TaxonomyBandit(tax, T, np.random.default_rng(0), q_hat=1.0)
    auditor = TaxonomyAuditor(env, T)
    log = run(env, b, T, np.random.default_rng(1), [auditor])
    rep = auditor.report()
    assert [v for v, _ in b.deactivations] == [0]
    assert rep["lemma3b"]["events"] == 1
    for check, res in rep.items():
        assert res["passed"], (check, res)
    # after the split the good cluster takes over
    assert log.inst_regret[-1000:].mean() < 0.1


def test_phased_variant_restarts():
    tax = Taxonomy.balanced(2, 2)
    env = make_taxonomy_env(tax, [0.1, 0.2, 0.3, 0.9], 30)
    p = PhasedTaxonomyBandit(tax, 30, np.random.default_rng(0))
    run(env, p, 30, np.random.default_rng(0))
    # 2 + 4 + 8 + 16 >= 30: four phases, the last one with q_hat = 1/4
    assert p.phase == 4
    assert p.inner.q_hat == pytest.approx(0.25)
