import math

import numpy as np
import pytest
from scipy.stats import binom

from poseconsensus.grouping import (
    EmptySequenceError,
    GroupingConfig,
    GroupSelector,
    NonTerminationError,
    group_weights,
    random_groups,
    sample_group,
    select_groups,
    similarity_matrix,
    trajectory_similarity,
)
from poseconsensus.rng import make_rng


def test_similarity_identity_and_single_frame():
    seq = np.zeros((1, 2, 3))
    seq[0, 1] = (1, 0, 0)
    assert trajectory_similarity(seq, 0, 0) == 0.0
    assert trajectory_similarity(seq, 0, 1) == 1.0


def test_similarity_sums_squared_frame_distances():
    seq = np.zeros((3, 2, 3))
    seq[:, 1, 0] = [1, 2, 3]
    # oracle: 1^2 + 2^2 + 3^2
    assert trajectory_similarity(seq, 0, 1) == 14.0
    assert trajectory_similarity(seq, 1, 0) == 14.0


def test_similarity_empty():
    with pytest.raises(EmptySequenceError):
        trajectory_similarity(np.zeros((0, 2, 3)), 0, 1)


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    seq = rng.normal(size=(7, 5, 3))
    S = similarity_matrix(seq, normalize=False)
    for i in range(5):
        for j in range(5):
            assert S[i, j] == pytest.approx(trajectory_similarity(seq, i, j))
    Sn = similarity_matrix(seq)
    off = Sn[~np.eye(5, dtype=bool)]
    assert off.mean() == pytest.approx(1.0)
    np.testing.assert_allclose(Sn, Sn.T)


def test_group_weights_examples():
    S = np.zeros((3, 3))
    S[2, 1] = S[1, 2] = 0.1
    w = group_weights(S, [1], 10.0, 2)
    assert w[1] == 0.0
    assert w[2] == pytest.approx(np.exp(-0.25))
    assert w[2] == pytest.approx(0.778801, abs=1e-6)
    np.testing.assert_array_equal(group_weights(np.ones((4, 4)), [0], 0.0, 3), [0, 1, 1, 1])


def test_weight_monotone_in_similarity():
    rng = np.random.default_rng(1)
    S = rng.random((6, 6))
    S = S + S.T
    w0 = group_weights(S, [0, 3], 5.0, 4)
    S2 = S.copy()
    S2[1, 3] += 0.7
    S2[3, 1] += 0.7
    w1 = group_weights(S2, [0, 3], 5.0, 4)
    assert w1[1] < w0[1]
    np.testing.assert_array_equal(np.delete(w1, 1), np.delete(w0, 1))


def test_full_group_when_ng_equals_n():
    g = sample_group(np.ones((5, 5)), GroupingConfig(n_g=5), make_rng(0))
    assert sorted(g.indices) == list(range(5))


def test_single_joint_groups_are_uniform():
    n, draws = 6, 100_000
    rng = make_rng(3)
    cfg = GroupingConfig(n_g=1)
    S = np.zeros((n, n))
    counts = np.bincount([sample_group(S, cfg, rng).indices[0] for _ in range(draws)], minlength=n)
    lo, hi = binom.ppf([0.00135, 0.99865], draws, 1 / n)  # 3 sigma
    assert ((counts >= lo) & (counts <= hi)).all(), counts


def test_second_member_distribution_matches_weights():
    # fix the first member by giving a one-joint head start: draw many 2-groups and
    # condition on the first index
    rng = make_rng(11)
    S = np.array([[0, .2, 1., 2.], [.2, 0, .5, 1.], [1., .5, 0, .3], [2., 1., .3, 0]])
    cfg = GroupingConfig(n_g=2, lambda_=4.0)
    firsts, seconds = [], []
    for _ in range(200_000):
        g = sample_group(S, cfg, rng).indices
        firsts.append(g[0])
        seconds.append(g[1])
    firsts, seconds = np.array(firsts), np.array(seconds)
    sel = seconds[firsts == 0]
    w = group_weights(S, [0], 4.0, 2)
    p = w / w.sum()
    counts = np.bincount(sel, minlength=4)
    m = len(sel)
    sd = np.sqrt(m * p * (1 - p))
    assert counts[0] == 0
    assert (np.abs(counts - m * p) <= 4 * sd + 1e-9).all()


def test_two_clusters_limit():
    S = np.full((6, 6), 50.0)
    S[:3, :3] = 1e-3
    S[3:, 3:] = 1e-3
    np.fill_diagonal(S, 0)
    rng = make_rng(0)
    same = 0
    for _ in range(500):
        g = sample_group(S, GroupingConfig(n_g=2, lambda_=10.0), rng).indices
        same += (g[0] < 3) == (g[1] < 3)
    assert same == 500


def test_zero_weight_fallback():
    S = np.full((4, 4), 1e6)
    np.fill_diagonal(S, 0)
    g = sample_group(S, GroupingConfig(n_g=4, lambda_=10.0), make_rng(0))
    assert sorted(g.indices) == [0, 1, 2, 3]


def test_select_groups_counts_and_coverage():
    gs = select_groups(np.ones((5, 5)), GroupingConfig(n_g=5, m_g=1))
    assert gs.n_t == 1
    rng = np.random.default_rng(0)
    seq = rng.normal(size=(20, 17, 3))
    S = similarity_matrix(seq)
    gs = select_groups(S, GroupingConfig(n_g=10, m_g=10, lambda_=10.0, seed=4))
    assert gs.n_t >= math.ceil(10 * 17 / 10)
    assert min(gs.coverage) >= 10


def test_select_groups_deterministic():
    S = similarity_matrix(np.random.default_rng(2).normal(size=(10, 8, 3)))
    cfg = GroupingConfig(n_g=4, m_g=3, lambda_=10.0, seed=9)
    assert select_groups(S, cfg).to_dict() == select_groups(S, cfg).to_dict()


def test_max_groups_guard():
    with pytest.raises(ValueError):
        GroupingConfig(n_g=2, m_g=5, max_groups=3).validate(4)
    # a joint that can never be chosen: n_g = 1 and coverage on 4 joints with a tiny cap
    with pytest.raises(NonTerminationError):
        select_groups(np.zeros((4, 4)), GroupingConfig(n_g=1, m_g=50, max_groups=200, seed=0))


def test_hard_group_count():
    gs = select_groups(np.zeros((17, 17)), GroupingConfig(n_g=17, m_g=10, n_t=1))
    assert gs.n_t == 1


def test_dedup_rejects_exact_duplicates():
    gs = select_groups(np.zeros((4, 4)), GroupingConfig(n_g=3, m_g=2, dedup=True, seed=1))
    keys = [frozenset(g.indices) for g in gs.groups]
    assert len(keys) == len(set(keys))


def test_random_groups_coverage():
    gs = random_groups(9, GroupingConfig(n_g=4, m_g=3, seed=0))
    assert min(gs.coverage) >= 3


def test_selector_estimator():
    seq = np.random.default_rng(0).normal(size=(30, 6, 3))
    sel = GroupSelector(n_g=3, m_g=2, seed=1).fit(seq)
    assert min(sel.groups_.coverage) >= 2
    assert sel.get_params()["n_g"] == 3
    assert GroupSelector(n_g=3, m_g=2, seed=1, strategy="random").fit(seq).similarity_ is None
