from __future__ import annotations

import numpy as np
import pytest

from mocat.data import PopularSet
from mocat.metrics import (
    MetricReport,
    accuracy,
    auc,
    auc_defined,
    average_reports,
    coverage,
    coverage_curve,
    exposure_rates,
    exposure_tail,
    mean_overlap,
)
from mocat.rewards import (
    RewardVector,
    ScalarizationWeights,
    diversity_reward,
    novelty_reward,
    quality_reward,
    reward_vector,
)

import oracles


class TestAuc:
    def test_hand_example(self):
        assert auc([1, 0, 1, 0], [0.9, 0.1, 0.4, 0.5]) == 0.75

    def test_ties_count_half(self):
        assert auc([1, 0], [0.5, 0.5]) == 0.5
        assert auc([1, 1, 0], [0.7, 0.5, 0.5]) == 0.75

    def test_eight_item_meta_set_matches_pairs(self):
        labels = [1, 0, 0, 1, 1, 0, 1, 0]
        scores = [0.3, 0.3, 0.8, 0.9, 0.1, 0.2, 0.5, 0.5]
        assert auc(labels, scores) == pytest.approx(oracles.auc_pairs(labels, scores), abs=1e-15)

    def test_single_class(self):
        assert not auc_defined([1, 1])
        assert auc([1, 1], [0.2, 0.3]) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            auc([1, 0], [0.1])

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_pairs_random(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        scores = rng.integers(0, 5, n) / 4.0
        assert auc(labels, scores) == pytest.approx(oracles.auc_pairs(labels, scores), abs=1e-12)


class TestAccuracyCoverage:
    def test_accuracy_threshold_inclusive(self):
        assert accuracy([1, 0, 1], [0.5, 0.49, 0.2]) == pytest.approx(2 / 3)
        with pytest.raises(ValueError):
            accuracy([], [])

    def test_coverage(self):
        assert coverage([(0, 1), (1,), (3,)], 4) == 0.75
        assert coverage([], 4) == 0.0
        with pytest.raises(ValueError):
            coverage([], 0)

    def test_curve_is_monotone_and_ends_at_coverage(self):
        sel = [(0,), (0, 1), (1,), (2, 3)]
        curve = coverage_curve(sel, 5)
        assert curve.tolist() == [0.2, 0.4, 0.4, 0.8]
        assert curve[-1] == coverage(sel, 5)


class TestExposureOverlap:
    def test_exposure(self):
        rates = exposure_rates([[0, 1], [1, 2], [1]], 4)
        np.testing.assert_allclose(rates, [1 / 3, 1.0, 1 / 3, 0.0])
        assert exposure_tail(rates, 0.2) == 0.75

    def test_overlap_hand(self):
        # pairs: (A,B) share 1, (A,C) share 1, (B,C) share 1
        assert mean_overlap([[0, 1], [1, 2], [1]]) == 1.0

    def test_overlap_needs_two(self):
        with pytest.raises(ValueError):
            mean_overlap([[0]])

    @pytest.mark.parametrize("seed", range(20))
    def test_overlap_matches_pairs(self, seed):
        rng = np.random.default_rng(seed)
        sets = [rng.choice(15, size=int(rng.integers(0, 8)), replace=False).tolist() for _ in range(int(rng.integers(2, 12)))]
        assert mean_overlap(sets) == pytest.approx(oracles.overlap_pairs(sets), abs=1e-12)


class TestReport:
    def make(self, **kw):
        base = dict(selector="x", checkpoints=[5, 20], auc={5: 0.6, 20: 0.7}, acc={5: 0.6, 20: 0.65},
                    auc_student_mean={5: 0.55, 20: 0.6}, cov_curve=[0.1 * t for t in range(1, 11)],
                    exposure=[0.1], exposure_over_02=0.0, overlap=2.0, overlap_rate=0.1,
                    popular_fraction=0.2, mean_return=[0.1, 3.0, 15.0], sessions=4, seed=0)
        base.update(kw)
        return MetricReport(**base)

    def test_cov_at_clamps(self):
        r = self.make()
        assert r.cov_at(3) == pytest.approx(0.3)
        assert r.cov_at(20) == pytest.approx(1.0)

    def test_round_trip(self, tmp_path):
        r = self.make()
        back = MetricReport.load(r.save(tmp_path / "r.json"))
        assert back == r

    def test_schema_version_checked(self):
        d = self.make().to_dict()
        d["schema_version"] = 99
        with pytest.raises(ValueError):
            MetricReport.from_dict(d)

    def test_average(self):
        out = average_reports([self.make(), self.make(auc={5: 0.8, 20: 0.9})])
        assert out["runs"] == 2
        assert out["metrics"]["auc@20"] == pytest.approx((0.8, 0.1))


class TestRewards:
    def test_quality_is_accuracy_gain(self):
        assert quality_reward(0.75, 0.5) == 0.25
        assert quality_reward(0.5, 0.75) == -0.25

    def test_diversity(self):
        assert diversity_reward(set(), [1]) == 1
        assert diversity_reward({1, 2}, [2, 1]) == 0
        assert diversity_reward({1}, [1, 3]) == 1
        with pytest.raises(ValueError):
            diversity_reward(set(), [])

    def test_novelty(self):
        pop = PopularSet(frozenset({3}))
        assert novelty_reward(3, pop) == 0 and novelty_reward(4, pop) == 1
        assert novelty_reward(3, {5}) == 1

    def test_vector(self):
        r = reward_vector(0.6, 0.5, {0}, (0, 1), 7, {7})
        assert r == RewardVector(pytest.approx(0.1), 1, 0)
        np.testing.assert_allclose(r.as_array(), [0.1, 1.0, 0.0])

    def test_weights(self):
        w = ScalarizationWeights((1, 0, 2))
        assert w.scalarize([0.5, 1, 1]) == 2.5
        assert w.array.tolist() == [1.0, 0.0, 2.0]
        for bad in [(1, 1), (-1, 1, 1), (0, 0, 0), (float("inf"), 1, 1)]:
            with pytest.raises(ValueError):
                ScalarizationWeights(bad)
