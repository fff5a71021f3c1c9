from __future__ import annotations

import math

import numpy as np
import pytest

from mocat.nn import ContractError
from mocat.policy import (
    Agent,
    AgentConfig,
    DivergenceError,
    TrainConfig,
    act,
    actor_loss,
    compute_returns_advantages,
    critic_loss,
    masked_log_softmax,
)

from gradcheck import gradient_errors, random_instance, tiny_agent, tiny_traces
import oracles


class TestPieces:
    def test_masked_probability_is_exactly_zero(self):
        logits = np.array([50.0, 0.0, -3.0, 1.0])
        mask = np.array([False, True, True, False])
        p = np.exp(masked_log_softmax(logits, mask))
        assert p[0] == 0.0 and p[3] == 0.0
        assert p.sum() == pytest.approx(1.0)

    def test_act_modes(self):
        logits = np.array([0.0, 5.0, 1.0])
        mask = np.array([True, False, True])
        q, lp = act(logits, mask, "argmax")
        assert q == 2 and lp == pytest.approx(math.log(math.e / (1 + math.e)))
        draws = {act(logits, mask, "sample", np.random.default_rng(s))[0] for s in range(50)}
        assert draws == {0, 2}
        assert act(logits, np.zeros(3, bool)) == (None, None)
        with pytest.raises(ValueError):
            act(logits, mask, "sample")
        with pytest.raises(ValueError):
            act(logits, mask, "greedy")

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
    def test_returns_match_oracle(self, gamma):
        R = np.random.default_rng(0).normal(size=(5, 3))
        V = np.random.default_rng(1).normal(size=(5, 3))
        G, A = compute_returns_advantages(R, V, gamma)
        np.testing.assert_allclose(G, oracles.discounted_returns(list(R), gamma), atol=1e-12)
        np.testing.assert_allclose(A, G - V)

    def test_actor_loss_matches_loop(self):
        rng = np.random.default_rng(2)
        logp, old = rng.normal(size=8) * 0.3 - 1, rng.normal(size=8) * 0.3 - 1
        adv, w = rng.normal(size=(8, 3)), np.array([1.0, 0.5, 2.0])
        loss, grad = actor_loss(logp, old, adv, w, 0.2)
        want = 0.0
        for i in range(8):
            a = float(adv[i] @ w)
            r = math.exp(logp[i] - old[i])
            want -= min(r * a, min(max(r, 0.8), 1.2) * a) / 8
        assert loss == pytest.approx(want, abs=1e-12)
        for i in range(8):
            fd = oracles.central_difference(lambda: actor_loss(logp, old, adv, w, 0.2)[0], logp, (i,), 1e-7)
            assert grad[i] == pytest.approx(fd, abs=1e-7)

    def test_clipping_stops_gradient(self):
        # ratio 2 with positive advantage: the clipped branch wins, no gradient
        loss, grad = actor_loss(np.array([math.log(2.0)]), np.array([0.0]), np.array([[1.0, 0, 0]]), np.ones(3), 0.2)
        assert loss == pytest.approx(-1.2) and grad[0] == 0.0

    def test_critic_loss(self):
        V, G, w = np.array([[1.0, 2.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 2.0]]), np.array([1.0, 3.0])
        loss, grad = critic_loss(V, G, w)
        assert loss == pytest.approx(0.5 * (1 * 0.5 + 3 * 4.0))
        np.testing.assert_allclose(grad, [[0.5, 3.0], [0.0, -3.0]])

    def test_config_validation(self):
        for bad in [dict(gamma=1.5), dict(clip=0), dict(weights=(1, 1)), dict(weights=(0, 0, 0)), dict(batch_size=0)]:
            with pytest.raises(ValueError):
                TrainConfig(**bad)
        assert AgentConfig(scalar_reward=True).objectives == 1


class TestAgent:
    def test_step_outputs_match_batched_encode(self):
        agent = tiny_agent(0)
        hist = ([2, 0, 5], [1, 0, 1])
        logits, values = agent.step_outputs(hist)
        S, _ = agent.encode([hist, ([1], [0])])
        l2, v2 = agent.head.forward(S)
        np.testing.assert_allclose(logits, l2[0], atol=1e-12)
        np.testing.assert_allclose(values, v2[0], atol=1e-12)

    def test_output_shapes(self):
        agent = tiny_agent(1, scalar=True)
        logits, values = agent.step_outputs(([], []))
        assert logits.shape == (agent.Q,) and values.shape == (1,)

    def test_inference_cache_follows_parameters(self):
        agent = tiny_agent(2)
        a = agent.step_outputs(([1], [1]))[0].copy()
        agent.tables.params["E_q"][1] += 1.0
        agent.bump()
        b = agent.step_outputs(([1], [1]))[0]
        assert not np.allclose(a, b)

    @pytest.mark.parametrize("seed", [0, 3, 7])
    def test_gradients_match_finite_differences(self, seed):
        agent, traces, cfg = random_instance(seed)
        errors = gradient_errors(agent, traces, cfg, max_entries=5, seed=seed)
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-4, (worst, errors[worst])

    def test_without_relation_aggregator(self):
        agent = tiny_agent(4, relagg=False)
        assert "relagg" not in agent.modules
        traces = tiny_traces(agent, 4)
        errors = gradient_errors(agent, traces, TrainConfig(), max_entries=5)
        assert max(errors.values()) < 1e-4

    def test_train_step_lowers_loss_on_fixed_batch(self):
        agent = tiny_agent(5)
        traces = tiny_traces(agent, 5, n_traces=4)
        cfg = TrainConfig(lr=1e-2, ppo_epochs=1)
        opt = agent.make_optimizer(cfg)
        first = agent.loss_and_grads(traces, cfg, train=False).total
        for _ in range(20):
            agent.train_step(traces, cfg, opt)
        assert agent.loss_and_grads(traces, cfg, train=False).total < first

    def test_divergence_detected(self):
        agent = tiny_agent(6)
        traces = tiny_traces(agent, 6)
        traces[0].rewards[0] = np.full(3, np.inf)
        with pytest.raises(DivergenceError):
            agent.train_step(traces, TrainConfig(), agent.make_optimizer(TrainConfig()))

    def test_stale_record_rejected(self):
        agent = tiny_agent(7)
        _, cache = agent.encode([([0], [1])])
        agent.bump()
        with pytest.raises(ContractError):
            agent.backward_states(cache, np.zeros((1, agent.encoder.D)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        agent = tiny_agent(0)
        path = agent.save(tmp_path / "c.npz", "cfg1")
        other = tiny_agent(0)
        for v in other.parameters().values():
            v += 1.0
        other.bump()
        assert other.param_hash() != agent.param_hash()
        other.load(path, "cfg1")
        assert other.param_hash() == agent.param_hash()
        np.testing.assert_array_equal(other.step_outputs(([1], [0]))[0], agent.step_outputs(([1], [0]))[0])

    def test_mismatches_rejected(self, tmp_path):
        path = tiny_agent(0).save(tmp_path / "c.npz", "cfg1")
        with pytest.raises(ContractError):
            tiny_agent(0).load(path, "cfg2")
        with pytest.raises(ContractError):
            tiny_agent(0, dim=6).load(path)
        with pytest.raises(ContractError):
            tiny_agent(0, scalar=True).load(path)
        with pytest.raises(ContractError, match="structure"):
            tiny_agent(1).load(path)
