from __future__ import annotations

import numpy as np
import pytest

from mocat.encoder import StateEncoder, concept_mean_matrix, record_embed
from mocat.nn import Adam, DivergenceError, layer_norm, layer_norm_backward, softmax, softmax_backward

import oracles


def encoder(seed: int, dim: int = 3, dropout: float = 0.0) -> StateEncoder:
    rng = np.random.default_rng(seed)
    enc = StateEncoder(dim, rng, dropout)
    enc.params["ln_g"] += rng.normal(0, 0.2, enc.D)
    enc.params["ln_b"] += rng.normal(0, 0.2, enc.D)
    enc.params["start"] += rng.normal(0, 0.2, enc.D)
    return enc


class TestForward:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        enc = encoder(seed)
        n = 1 + seed % 5
        X = np.random.default_rng(100 + seed).normal(size=(1, n, enc.D))
        S, _ = enc.forward(X)
        p = enc.params
        want = oracles.attention_state(X[0], p["W_Q"], p["W_K"], p["W_V"], p["ln_g"], p["ln_b"])
        np.testing.assert_allclose(S[0], want, atol=1e-12)

    def test_empty_history_returns_start(self):
        enc = encoder(0)
        S, _ = enc.forward(np.zeros((2, 0, enc.D)))
        np.testing.assert_array_equal(S, np.tile(enc.params["start"], (2, 1)))

    def test_batch_rows_independent(self):
        enc = encoder(1)
        X = np.random.default_rng(0).normal(size=(3, 4, enc.D))
        S, _ = enc.forward(X)
        for i in range(3):
            np.testing.assert_allclose(enc.forward(X[i : i + 1])[0][0], S[i], atol=1e-14)

    def test_attention_rows_sum_to_one(self):
        enc = encoder(2)
        A = enc.attention(np.random.default_rng(0).normal(size=(2, 5, enc.D)))
        np.testing.assert_allclose(A.sum(axis=-1), 1.0)

    def test_permutation_invariant(self):
        # no positional signal: reordering the history leaves the pooled state unchanged
        enc = encoder(3)
        X = np.random.default_rng(1).normal(size=(1, 5, enc.D))
        S1, _ = enc.forward(X)
        S2, _ = enc.forward(X[:, ::-1])
        np.testing.assert_allclose(S1, S2, atol=1e-12)

    def test_dropout_only_in_train_mode(self):
        enc = encoder(4, dropout=0.5)
        X = np.random.default_rng(2).normal(size=(1, 4, enc.D))
        ev1, _ = enc.forward(X)
        ev2, _ = enc.forward(X, train=False, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(ev1, ev2)
        tr, cache = enc.forward(X, train=True, rng=np.random.default_rng(9))
        assert not np.allclose(tr, ev1)
        assert set(np.unique(cache.mask)) <= {0.0, 2.0}
        with pytest.raises(ValueError):
            enc.forward(X, train=True)

    def test_input_checks(self):
        enc = encoder(5)
        with pytest.raises(ValueError):
            enc.forward(np.zeros((1, 2, enc.D + 1)))
        with pytest.raises(DivergenceError):
            enc.forward(np.full((1, 2, enc.D), np.nan))
        with pytest.raises(ValueError):
            StateEncoder(2, np.random.default_rng(0), dropout=1.0)


class TestBackward:
    def test_input_gradient_matches_fd(self):
        enc = encoder(6)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(2, 3, enc.D))
        G = rng.normal(size=(2, enc.D))
        S, cache = enc.forward(X)
        dX = enc.backward(cache, G)
        for idx in [(0, 0, 0), (1, 2, 5), (0, 1, 8)]:
            fd = oracles.central_difference(lambda: float(np.sum(enc.forward(X)[0] * G)), X, idx, 1e-5)
            assert dX[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_dropout_gradient_matches_fd_with_fixed_mask(self):
        enc = encoder(7, dropout=0.3)
        X = np.random.default_rng(4).normal(size=(1, 3, enc.D))
        G = np.random.default_rng(5).normal(size=(1, enc.D))
        f = lambda: float(np.sum(enc.forward(X, True, np.random.default_rng(11))[0] * G))
        _, cache = enc.forward(X, True, np.random.default_rng(11))
        enc.zero_grad()
        enc.backward(cache, G)
        W = enc.params["W_V"]
        for idx in [(0, 0), (3, 7), (8, 2)]:
            fd = oracles.central_difference(f, W, idx, 1e-5)
            assert enc.grads["W_V"][idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_empty_history_gradient_goes_to_start(self):
        enc = encoder(8)
        _, cache = enc.forward(np.zeros((3, 0, enc.D)))
        enc.zero_grad()
        enc.backward(cache, np.ones((3, enc.D)))
        np.testing.assert_array_equal(enc.grads["start"], np.full(enc.D, 3.0))


class TestRecords:
    def test_concept_mean_rows(self):
        M = concept_mean_matrix([(0,), (0, 2), (2, 2)], 3).toarray()
        np.testing.assert_allclose(M, [[1, 0, 0], [0.5, 0, 0.5], [0, 0, 1]])

    def test_record_embed_layout(self):
        Eq = np.arange(6.0).reshape(3, 2)
        Cm = -np.arange(6.0).reshape(3, 2)
        Ey = np.array([[9.0, 9.0], [7.0, 7.0]])
        np.testing.assert_array_equal(record_embed(1, 0, Eq, Cm, Ey), [2, 3, -2, -3, 9, 9])


class TestBlocks:
    def test_softmax_backward(self):
        x = np.array([0.3, -1.0, 2.0])
        g = np.array([1.0, 2.0, -0.5])
        p = softmax(x)
        fd = [oracles.central_difference(lambda: float(softmax(x) @ g), x, i, 1e-6) for i in range(3)]
        np.testing.assert_allclose(softmax_backward(p, g), fd, rtol=1e-7)

    def test_layer_norm_backward(self):
        rng = np.random.default_rng(0)
        y, gain, bias, G = rng.normal(size=(2, 5)), rng.normal(size=5), rng.normal(size=5), rng.normal(size=(2, 5))
        _, cache = layer_norm(y, gain, bias)
        dy, dg, db = layer_norm_backward(G, gain, cache)
        f = lambda: float(np.sum(layer_norm(y, gain, bias)[0] * G))
        for idx in [(0, 0), (1, 3)]:
            assert dy[idx] == pytest.approx(oracles.central_difference(f, y, idx, 1e-6), rel=1e-6)
        assert dg[2] == pytest.approx(oracles.central_difference(f, gain, (2,), 1e-6), rel=1e-6)
        np.testing.assert_allclose(db, G.sum(axis=0))

    def test_adam_first_step_is_lr_times_sign(self):
        p = {"x": np.array([1.0, -2.0, 0.5])}
        opt = Adam(p, lr=0.1)
        opt.step({"x": np.array([3.0, -0.01, 0.0])})
        np.testing.assert_allclose(p["x"], [0.9, -1.9, 0.5], atol=1e-6)
        assert opt.state()["t"] == 1
