"""Actor-critic question recommender trained with multi-objective PPO.

The actor is one affine layer from the state to per-question logits, masked
to the remaining candidates. The critic is one affine layer to a value per
objective (or a single value in scalar-reward mode). Losses:

* actor: clipped surrogate on the scalarized advantage ``w . A``
* critic: ``0.5 * sum_k w_k * mean_t (V_k - G_k)^2``
* total: ``actor + alpha * critic``

Returns are plain discounted Monte Carlo sums inside an episode.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EmbeddingTables, StateEncoder, concept_mean_matrix
from .graphs import CorrelationGraph, PrerequisiteGraph
from .nn import Adam, ContractError, DivergenceError, Module, uniform
from .relagg import RelationAggregator


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.5
    clip: float = 0.2
    alpha: float = 1.0
    lr: float = 1e-3
    batch_size: int = 32
    ppo_epochs: int = 2
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    normalize_advantage: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.clip <= 0 or self.alpha <= 0 or self.lr <= 0:
            raise ValueError("clip, alpha and lr must be positive")
        if self.batch_size < 1 or self.ppo_epochs < 0:
            raise ValueError("batch_size must be >= 1 and ppo_epochs >= 0")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3 or any(x < 0 for x in w) or not any(w):
            raise ValueError(f"weights must be three non-negative numbers, not all zero: {w}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class AgentConfig:
    dim: int = 32
    dropout: float = 0.1
    relation_aggregator: bool = True
    scalar_reward: bool = False
    slope: float = 0.2

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.slope <= 0:
            raise ValueError("LeakyReLU slope must be positive")

    @property
    def objectives(self) -> int:
        return 1 if self.scalar_reward else 3


@dataclass
class EpisodeTrace:
    """One rollout. ``rewards`` is (T, 3), or (T, 1) already scalarized."""

    student_id: int
    questions: list[int] = field(default_factory=list)
    responses: list[int] = field(default_factory=list)
    logp_old: list[float] = field(default_factory=list)
    values_old: list[np.ndarray] = field(default_factory=list)
    rewards: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.questions)


@dataclass
class LossReport:
    total: float
    actor: float
    critic: float
    steps: int
    grad_norm: float = 0.0


# -- pure loss pieces -------------------------------------------------------


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with disallowed entries at -inf (probability exactly 0)."""
    z = np.where(mask, logits, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def act(logits: np.ndarray, mask: np.ndarray, mode: str = "sample", rng: np.random.Generator | None = None):
    """Pick a question from the masked softmax. Returns ``(None, None)`` when nothing is allowed."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None, None
    logp = masked_log_softmax(logits, mask)
    if mode == "argmax":
        q = int(np.argmax(logp))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an rng")
        q = int(rng.choice(len(logp), p=np.exp(logp)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return q, float(logp[q])


def compute_returns_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns ``G_t = sum_{t'>=t} gamma^(t'-t) r_t'`` and ``A_t = G_t - V(s_t)``."""
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    G = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[1])
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        G[t] = acc
    return G, G - np.asarray(values, dtype=np.float64).reshape(G.shape)


def actor_loss(logp: np.ndarray, logp_old: np.ndarray, adv: np.ndarray, w: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Clipped surrogate on ``w . A``; returns the loss and dL/dlogp."""
    scal = np.atleast_2d(adv) @ np.asarray(w, dtype=np.float64)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    unclipped_term = ratio * scal
    clipped_term = clipped * scal
    n = len(logp)
    loss = -float(np.mean(np.minimum(unclipped_term, clipped_term)))
    # the min picks the unclipped branch unless clipping binds
    use_unclipped = unclipped_term <= clipped_term
    dlogp = np.where(use_unclipped, -unclipped_term / n, 0.0)
    return loss, dlogp


def critic_loss(values: np.ndarray, returns: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """``0.5 * sum_k w_k mean_t (V - G)^2`` and its gradient in ``values``."""
    diff = np.asarray(values) - np.asarray(returns)
    w = np.asarray(w, dtype=np.float64)
    n = len(diff)
    loss = 0.5 * float(np.sum(w * np.mean(diff**2, axis=0)))
    return loss, w * diff / n


# -- trainable parts --------------------------------------------------------


class ActorCritic(Module):
    def __init__(self, state_dim: int, question_count: int, objectives: int, rng: np.random.Generator):
        super().__init__()
        s = 1.0 / np.sqrt(state_dim)
        self.add("actor_W", uniform(rng, (state_dim, question_count), s))
        self.add("actor_b", np.zeros(question_count))
        self.add("critic_W", uniform(rng, (state_dim, objectives), s))
        self.add("critic_b", np.zeros(objectives))

    def forward(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        return S @ p["actor_W"] + p["actor_b"], S @ p["critic_W"] + p["critic_b"]

    def backward(self, S: np.ndarray, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        p, g = self.params, self.grads
        g["actor_W"] += S.T @ dlogits
        g["actor_b"] += dlogits.sum(axis=0)
        g["critic_W"] += S.T @ dvalues
        g["critic_b"] += dvalues.sum(axis=0)
        return dlogits @ p["actor_W"].T + dvalues @ p["critic_W"].T


@dataclass
class _StateCache:
    rel: object
    groups: list
    Eq_t: np.ndarray
    Ec_t: np.ndarray
    Cm: np.ndarray
    version: int


class Agent:
    """Embedding tables, relation aggregator, state encoder and actor-critic head."""

    def __init__(
        self,
        question_concepts: Sequence[Sequence[int]],
        correlation: CorrelationGraph,
        prerequisite: PrerequisiteGraph,
        cfg: AgentConfig = AgentConfig(),
        seed: int = 0,
    ):
        self.cfg = cfg
        self.Q = correlation.question_count
        self.K = correlation.concept_count
        rng = np.random.default_rng(seed)
        self.tables = EmbeddingTables(self.Q, self.K, cfg.dim, rng)
        self.relagg = RelationAggregator(correlation, prerequisite, cfg.dim, rng, cfg.slope) if cfg.relation_aggregator else None
        self.encoder = StateEncoder(cfg.dim, rng, cfg.dropout)
        self.head = ActorCritic(self.encoder.D, self.Q, cfg.objectives, rng)
        self.question_concepts = [tuple(int(c) for c in cs) for cs in question_concepts]
        self.prerequisite_edges = np.asarray(prerequisite.edges, dtype=np.int64).tolist()
        self.concept_mean = concept_mean_matrix(self.question_concepts, self.K)
        self._frozen = None

    # -- parameter plumbing --------------------------------------------
    @property
    def modules(self) -> dict[str, Module]:
        mods = {"tables": self.tables, "encoder": self.encoder, "head": self.head}
        if self.relagg is not None:
            mods["relagg"] = self.relagg
        return mods

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, mod in self.modules.items() for k, v in mod.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, mod in self.modules.items() for k, v in mod.grads.items()}

    def zero_grad(self) -> None:
        for mod in self.modules.values():
            mod.zero_grad()

    def bump(self) -> None:
        for mod in self.modules.values():
            mod.bump()
        self._frozen = None

    def fingerprint(self) -> str:
        spec = {"cfg": asdict(self.cfg), "Q": self.Q, "K": self.K,
                "shapes": {k: list(v.shape) for k, v in sorted(self.parameters().items())},
                "question_concepts": self.question_concepts, "prerequisites": self.prerequisite_edges}
        return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.parameters().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    # -- forward pieces ------------------------------------------------
    def relation_tables(self, questions=None, concepts=None):
        E_q, E_c = self.tables.params["E_q"], self.tables.params["E_c"]
        if self.relagg is None:
            return E_q, E_c, None
        out, cache = self.relagg.forward(E_q, E_c, questions, concepts)
        return out.questions, out.concepts, cache

    def _concept_rows(self, questions: np.ndarray) -> np.ndarray:
        sub = self.concept_mean[questions]
        return np.unique(sub.indices)

    def encode(self, histories: Sequence[tuple[Sequence[int], Sequence[int]]], train: bool = False, rng=None):
        """States for a list of ``(questions, responses)`` histories; returns (N, D) and a cache."""
        used = np.unique(np.concatenate([np.asarray(h[0], dtype=np.int64) for h in histories] + [np.zeros(0, np.int64)]))
        Eq_t, Ec_t, rel = self.relation_tables(used, self._concept_rows(used))
        Cm = self.concept_mean @ Ec_t
        E_y = self.tables.params["E_y"]
        lengths = np.array([len(h[0]) for h in histories])
        S = np.zeros((len(histories), self.encoder.D))
        groups = []
        for n in np.unique(lengths):
            idx = np.flatnonzero(lengths == n)
            qs = np.array([histories[i][0] for i in idx], dtype=np.int64).reshape(len(idx), n)
            ys = np.array([histories[i][1] for i in idx], dtype=np.int64).reshape(len(idx), n)
            X = np.concatenate([Eq_t[qs], Cm[qs], E_y[ys]], axis=-1)
            S_g, enc_cache = self.encoder.forward(X, train=train, rng=rng)
            S[idx] = S_g
            groups.append((idx, qs, ys, enc_cache))
        return S, _StateCache(rel, groups, Eq_t, Ec_t, Cm, self.tables.version)

    def backward_states(self, cache: _StateCache, dS: np.ndarray) -> None:
        self.tables.check(cache.version)
        d = self.cfg.dim
        dEq_t = np.zeros_like(cache.Eq_t)
        dCm = np.zeros_like(cache.Cm)
        dE_y = self.tables.grads["E_y"]
        for idx, qs, ys, enc_cache in cache.groups:
            dX = self.encoder.backward(enc_cache, dS[idx])
            if qs.size == 0:
                continue
            np.add.at(dEq_t, qs.ravel(), dX[..., :d].reshape(-1, d))
            np.add.at(dCm, qs.ravel(), dX[..., d : 2 * d].reshape(-1, d))
            np.add.at(dE_y, ys.ravel(), dX[..., 2 * d :].reshape(-1, d))
        dEc_t = self.concept_mean.T @ dCm
        if self.relagg is None:
            self.tables.grads["E_q"] += dEq_t
            self.tables.grads["E_c"] += dEc_t
        else:
            dE_q, dE_c = self.relagg.backward(cache.rel, dEq_t, dEc_t)
            self.tables.grads["E_q"] += dE_q
            self.tables.grads["E_c"] += dE_c

    def _inference_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Full relation-aware tables, cached until the parameters change."""
        v = self.tables.version
        if self._frozen is None or self._frozen[0] != v:
            Eq_t, Ec_t, _ = self.relation_tables()
            self._frozen = (v, Eq_t, self.concept_mean @ Ec_t)
        return self._frozen[1], self._frozen[2]

    def step_outputs(self, history: tuple[Sequence[int], Sequence[int]], train: bool = False, rng=None):
        """Logits and critic values for a single history (no gradient record)."""
        Eq_t, Cm = self._inference_tables()
        qs = np.asarray(history[0], dtype=np.int64)
        ys = np.asarray(history[1], dtype=np.int64)
        X = np.concatenate([Eq_t[qs], Cm[qs], self.tables.params["E_y"][ys]], axis=-1)[None]
        S, _ = self.encoder.forward(X, train=train, rng=rng)
        logits, values = self.head.forward(S)
        return logits[0], values[0]

    # -- training ------------------------------------------------------
    def loss_and_grads(self, traces: Sequence[EpisodeTrace], cfg: TrainConfig, train: bool = True, rng=None) -> LossReport:
        """Total MOPPO loss over a batch with gradients left in ``gradients()``."""
        self.zero_grad()
        histories, actions, masks, logp_old, advs, rets = [], [], [], [], [], []
        for tr in traces:
            R = np.asarray(tr.rewards, dtype=np.float64).reshape(len(tr), -1)
            V = np.asarray(tr.values_old, dtype=np.float64).reshape(len(tr), -1)
            G, A = compute_returns_advantages(R, V, cfg.gamma)
            for t in range(len(tr)):
                histories.append((tr.questions[:t], tr.responses[:t]))
                actions.append(tr.questions[t])
                masks.append(tr.masks[t])
            logp_old.extend(tr.logp_old)
            advs.append(A)
            rets.append(G)
        if not histories:
            raise ValueError("empty batch")
        actions = np.asarray(actions)
        masks = np.asarray(masks, dtype=bool)
        logp_old = np.asarray(logp_old)
        A = np.concatenate(advs)
        G = np.concatenate(rets)
        w = np.ones(1) if self.cfg.scalar_reward else np.asarray(cfg.weights)
        if cfg.normalize_advantage and len(A) > 1:
            A = (A - A.mean(axis=0)) / (A.std(axis=0) + 1e-8)

        S, cache = self.encode(histories, train=train, rng=rng)
        logits, values = self.head.forward(S)
        logp_all = masked_log_softmax(logits, masks)
        rows = np.arange(len(actions))
        logp = logp_all[rows, actions]
        l1, dlogp = actor_loss(logp, logp_old, A, w, cfg.clip)
        l2, dvalues = critic_loss(values, G, w)
        total = l1 + cfg.alpha * l2
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss (actor={l1}, critic={l2})")
        probs = np.exp(logp_all)
        dlogits = -probs * dlogp[:, None]
        dlogits[rows, actions] += dlogp
        dS = self.head.backward(S, dlogits, cfg.alpha * dvalues)
        self.backward_states(cache, dS)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in self.gradients().values())))
        return LossReport(total, l1, l2, len(actions), gnorm)

    def make_optimizer(self, cfg: TrainConfig) -> Adam:
        return Adam(self.parameters(), lr=cfg.lr)

    def train_step(self, traces: Sequence[EpisodeTrace], cfg: TrainConfig, optimizer: Adam, rng=None) -> list[LossReport]:
        """``cfg.ppo_epochs`` full-batch Adam steps on the MOPPO loss."""
        if not traces:
            raise ValueError("empty batch")
        reports = []
        for _ in range(cfg.ppo_epochs):
            rep = self.loss_and_grads(traces, cfg, train=True, rng=rng)
            grads = self.gradients()
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError("non-finite gradient")
            optimizer.step(grads)
            self.bump()
            if not all(np.all(np.isfinite(v)) for v in self.parameters().values()):
                raise DivergenceError("non-finite parameters after update")
            reports.append(rep)
        return reports

    # -- checkpoints ---------------------------------------------------
    def save(self, path: str | os.PathLike, config_fingerprint: str = "") -> Path:
        path = Path(path)
        params = self.parameters()
        meta = {"fingerprint": self.fingerprint(), "config": config_fingerprint,
                "shapes": {k: list(v.shape) for k, v in params.items()}}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params)
        return path

    def load(self, path: str | os.PathLike, config_fingerprint: str | None = None) -> None:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta["fingerprint"] != self.fingerprint():
                raise ContractError("checkpoint was written for a different model structure")
            if config_fingerprint is not None and meta["config"] != config_fingerprint:
                raise ContractError("checkpoint config fingerprint does not match")
            params = self.parameters()
            for k, v in params.items():
                if k not in data.files or list(data[k].shape) != list(v.shape):
                    raise ContractError(f"checkpoint tensor {k} missing or wrong shape")
            for k, v in params.items():
                v[...] = data[k]
        self.bump()
