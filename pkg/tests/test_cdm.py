from __future__ import annotations

import math

import numpy as np
import pytest

from mocat.cdm import (
    IRTConfig,
    IRTModel,
    ItemParams,
    KliConfig,
    calibrate,
    eval_meta,
    fisher_info,
    kl_info,
    predict_prob,
    update_ability,
)
from mocat.data import DataError
from mocat.synthetic import simulate_responses

import oracles


class TestResponseModel:
    def test_probability_matches_logistic(self):
        for theta, a, b in [(0.0, 1.0, 0.0), (1.3, 0.7, -0.4), (-2.0, 2.5, 1.0)]:
            assert predict_prob(theta, a, b) == pytest.approx(oracles.sigmoid(a * (theta - b)), abs=1e-15)

    def test_fisher_closed_form(self):
        theta, a, b = 0.4, np.array([0.5, 1.0, 2.0]), np.array([0.0, 0.4, -1.0])
        p = [oracles.sigmoid(ai * (theta - bi)) for ai, bi in zip(a, b)]
        want = [ai * ai * pi * (1 - pi) for ai, pi in zip(a, p)]
        np.testing.assert_allclose(fisher_info(theta, a, b), want, rtol=1e-12)

    def test_fisher_peaks_at_difficulty(self):
        grid = np.linspace(-3, 3, 601)
        assert grid[np.argmax(fisher_info(grid, 1.5, 0.7))] == pytest.approx(0.7, abs=0.01)

    @pytest.mark.parametrize("theta,a,b,t", [(0.0, 1.0, 0.0, 1), (0.8, 2.0, 0.1, 4), (-1.5, 0.4, 1.2, 9)])
    def test_kl_matches_fine_trapezoid(self, theta, a, b, t):
        cfg = KliConfig()
        got = float(kl_info(theta, np.array([a]), np.array([b]), t, cfg)[0])
        want = oracles.kl_integral(theta, a, b, cfg.delta(t))
        assert got == pytest.approx(want, rel=1e-6)

    def test_kl_delta_schedule(self):
        cfg = KliConfig(c=3.0)
        assert cfg.delta(1) == 3.0 and cfg.delta(4) == 1.5
        with pytest.raises(ValueError):
            cfg.delta(0)
        with pytest.raises(ValueError):
            KliConfig(points=100)

    def test_kl_is_non_negative(self):
        v = kl_info(0.3, np.linspace(0.2, 3, 20), np.linspace(-2, 2, 20), 2)
        assert np.all(v >= 0)


class TestAbility:
    def test_no_responses_gives_zero(self):
        items = ItemParams([1.0], [0.0])
        assert update_ability([], [], items).theta == 0.0

    def test_map_stationarity(self):
        rng = np.random.default_rng(0)
        items = ItemParams(np.exp(rng.normal(0, 0.3, 10)), rng.normal(size=10))
        qs, ys = list(range(10)), rng.integers(0, 2, 10).tolist()
        th = update_ability(qs, ys, items).theta
        grad = sum(items.a[q] * (y - oracles.sigmoid(items.a[q] * (th - items.b[q]))) for q, y in zip(qs, ys)) - th
        assert abs(grad) < 1e-8

    def test_warm_start_reaches_same_optimum(self):
        items = ItemParams([1.0, 2.0, 0.5], [0.0, 1.0, -1.0])
        a = update_ability([0, 1, 2], [1, 0, 1], items, prior_theta=0.0).theta
        b = update_ability([0, 1, 2], [1, 0, 1], items, prior_theta=2.5).theta
        assert a == pytest.approx(b, abs=1e-9)

    def test_weights_equal_repetition(self):
        items = ItemParams([1.0, 1.5], [0.0, 0.5])
        a = update_ability([0, 1, 1], [1, 0, 0], items).theta
        b = update_ability([0, 1], [1, 0], items, weights=[1, 2]).theta
        assert a == pytest.approx(b, abs=1e-10)

    def test_all_correct_moves_up_and_stays_bounded(self):
        items = ItemParams(np.full(30, 4.0), np.zeros(30))
        est = update_ability(list(range(30)), [1] * 30, items, cfg=IRTConfig(prior_var=1e6, theta_max=3.0))
        assert est.theta == 3.0 and est.clamped

    def test_one_correct_answer_raises_ability(self):
        assert update_ability([0], [1], ItemParams([1.0], [0.0])).theta > 0

    def test_monotone_in_responses(self):
        items = ItemParams([1.0] * 4, [-1.0, 0.0, 0.5, 1.0])
        thetas = [update_ability([0, 1, 2, 3], [1] * k + [0] * (4 - k), items).theta for k in range(5)]
        assert thetas == sorted(thetas)


class TestCalibration:
    def test_recovers_difficulty_on_small_sample(self):
        logs, a, b, _ = simulate_responses(students=300, questions=20, seed=1)
        items = calibrate(logs, 20)
        assert np.mean(np.abs(items.b - b)) < 0.35
        assert np.corrcoef(items.a, a)[0, 1] > 0.3

    def test_bounds_respected(self):
        logs, *_ = simulate_responses(students=50, questions=10, seed=2, log_a_sd=1.5)
        cfg = IRTConfig(a_bounds=(0.5, 2.0), b_bounds=(-1.0, 1.0))
        items = calibrate(logs, 10, cfg)
        assert np.all((items.a >= 0.5) & (items.a <= 2.0))
        assert np.all((items.b >= -1.0) & (items.b <= 1.0))

    def test_unseen_question_gets_neutral_params(self):
        logs, *_ = simulate_responses(students=30, questions=5, seed=0)
        items = calibrate(logs, 7)
        assert items.a[5:].tolist() == [1.0, 1.0] and items.b[5:].tolist() == [0.0, 0.0]

    def test_all_correct_item_is_clamped(self):
        logs, *_ = simulate_responses(students=80, questions=6, seed=4)
        for log in logs:
            log.records[0] = type(log.records[0])(0, (0,), 1, 0)
        items = calibrate(logs, 6)
        assert np.all(np.isfinite(items.a)) and np.all(np.isfinite(items.b))
        assert items.b[0] == IRTConfig().b_bounds[0]

    def test_identical_items_get_identical_params(self):
        logs, *_ = simulate_responses(students=100, questions=5, seed=6)
        for log in logs:
            log.records.append(type(log.records[0])(5, (0,), log.records[2].correct, 5))
        items = calibrate(logs, 6)
        assert items.a[5] == pytest.approx(items.a[2], abs=1e-6)
        assert items.b[5] == pytest.approx(items.b[2], abs=1e-6)

    def test_deterministic(self):
        logs, *_ = simulate_responses(students=60, questions=8, seed=5)
        x, y = calibrate(logs, 8), calibrate(logs, 8)
        assert np.array_equal(x.a, y.a) and np.array_equal(x.b, y.b)


class TestItemParams:
    def test_save_load(self, tmp_path):
        items = ItemParams([0.5, 1.25], [-0.3, 2.0])
        back = ItemParams.load(items.save(tmp_path / "items.csv"))
        np.testing.assert_allclose(back.a, items.a)
        np.testing.assert_allclose(back.b, items.b)

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError):
            ItemParams([0.0], [0.0])
        with pytest.raises(ValueError):
            ItemParams([1.0], [math.nan])
        with pytest.raises(ValueError):
            ItemParams([1.0, 1.0], [0.0])
        p = tmp_path / "x.csv"
        p.write_text("question_id,a,b\n1,1.0,0.0\n")
        with pytest.raises(DataError):
            ItemParams.load(p)


class TestMetaEvaluation:
    def test_accuracy_and_auc(self):
        items = ItemParams([1.0, 1.0, 1.0], [-1.0, 0.0, 2.0])
        ev = eval_meta(0.5, [0, 1, 2], [1, 1, 0], items)
        assert ev.acc == 1.0
        assert ev.auc_defined and ev.auc == 1.0

    def test_single_class_auc_undefined(self):
        ev = eval_meta(0.0, [0], [1], ItemParams([1.0], [0.0]))
        assert not ev.auc_defined

    def test_empty_meta_rejected(self):
        with pytest.raises(ValueError):
            eval_meta(0.0, [], [], ItemParams([1.0], [0.0]))

    def test_model_wrapper(self):
        logs, *_ = simulate_responses(students=40, questions=6, seed=3)
        m = IRTModel.fit(logs, 6)
        assert m.supports_information
        assert m.fisher(0.0).shape == (6,) and m.kl(0.0, 1).shape == (6,)
        assert m.kl(0.0, 1, [2]).shape == (1,)
        np.testing.assert_allclose(m.predict(0.3, [1, 2]), predict_prob(0.3, m.items.a[[1, 2]], m.items.b[[1, 2]]))
