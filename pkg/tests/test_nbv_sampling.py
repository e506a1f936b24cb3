"""Tests for candidate weighting and scene-realization sampling."""

import numpy as np
import pytest
from scipy import stats

from edgepose.errors import ConfigError
from edgepose.nbv.sampling import (
    aabbs_intersect,
    candidate_probability,
    sample_combinations,
)


def boxes_apart(n, gap=1.0):
    """n unit boxes spaced far apart: every combination is plausible."""
    return [
        (np.array([i * (1 + gap), 0, 0]), np.array([i * (1 + gap) + 1, 1, 1]))
        for i in range(n)
    ]


class TestCandidateProbability:
    def test_perfect_score(self):
        assert candidate_probability(1.0) == 1.0

    def test_zero_score(self):
        assert candidate_probability(0.0) == pytest.approx(np.exp(-1.0))

    def test_normalized_pair(self):
        a = candidate_probability(1.0)
        b = candidate_probability(0.5)
        total = a + b
        assert abs(a / total - 0.5622) < 1e-3
        assert abs(b / total - 0.4378) < 1e-3

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            candidate_probability(1.2)


class TestAabbIntersect:
    def test_disjoint(self):
        a = (np.zeros(3), np.ones(3))
        b = (np.ones(3) * 2, np.ones(3) * 3)
        assert not aabbs_intersect(a, b)

    def test_inflation_bridges_gap(self):
        a = (np.zeros(3), np.ones(3))
        b = (np.array([1.003, 0, 0]), np.array([2.0, 1, 1]))
        assert not aabbs_intersect(a, b, inflate=0.001)
        assert aabbs_intersect(a, b, inflate=0.002)


class TestSampleCombinations:
    def test_single_candidate_binomial_split(self):
        rng = np.random.default_rng(0)
        out = sample_combinations([1.0], boxes_apart(1), 10_000, rng)
        sizes = np.array([len(r) for r in out])
        counts = np.array([(sizes == 0).sum(), (sizes == 1).sum()])
        assert stats.chisquare(counts, [5000, 5000]).pvalue > 0.01

    def test_size_distribution_matches_binomial(self):
        n_obj = 6
        rng = np.random.default_rng(1)
        out = sample_combinations(
            np.full(n_obj, 0.9), boxes_apart(n_obj), 10_000, rng
        )
        sizes = np.array([len(r) for r in out])
        observed = np.bincount(sizes, minlength=n_obj + 1)
        expected = stats.binom.pmf(np.arange(n_obj + 1), n_obj, 0.5) * 10_000
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_overlapping_pair_never_together(self):
        box = (np.zeros(3), np.ones(3))
        rng = np.random.default_rng(2)
        out = sample_combinations([0.9, 0.9], [box, box], 5000, rng)
        assert all(len(r) <= 1 for r in out)
        assert any(len(r) == 1 for r in out)

    def test_no_realization_violates_plausibility(self):
        rng = np.random.default_rng(3)
        boxes = boxes_apart(4)
        boxes[2] = boxes[1]  # candidates 1 and 2 collide
        out = sample_combinations(np.full(4, 0.8), boxes, 5000, rng)
        for r in out:
            assert not (1 in r.members and 2 in r.members)
            for i, a in enumerate(r.members):
                for b in r.members[i + 1 :]:
                    assert not aabbs_intersect(boxes[a], boxes[b], 0.002)

    def test_high_score_included_more_often(self):
        rng = np.random.default_rng(4)
        out = sample_combinations([1.0, 0.1], boxes_apart(2), 10_000, rng)
        inc0 = sum(0 in r.members for r in out)
        inc1 = sum(1 in r.members for r in out)
        assert inc0 > inc1

    def test_members_sorted_and_unique(self):
        rng = np.random.default_rng(5)
        out = sample_combinations(np.full(5, 0.7), boxes_apart(5), 1000, rng)
        for r in out:
            assert list(r.members) == sorted(set(r.members))

    def test_deterministic_given_seed(self):
        a = sample_combinations([0.8, 0.6], boxes_apart(2), 50, np.random.default_rng(9))
        b = sample_combinations([0.8, 0.6], boxes_apart(2), 50, np.random.default_rng(9))
        assert [r.members for r in a] == [r.members for r in b]
