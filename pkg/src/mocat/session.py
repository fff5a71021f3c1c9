"""CAT episodes over logged responses, baseline selectors, train and evaluate loops.

The environment replays the dataset: a selected question is answered with
the student's logged response. After each answer the CDM re-estimates
ability, the meta set is scored and the reward vector is emitted.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .cdm import IRTModel, KliConfig, ItemParams, fisher_info, kl_info
from .data import PopularSet, StudentLog, StudentSplit, split_candidate_meta
from .metrics import MetricReport, accuracy, auc, coverage_curve, exposure_rates, exposure_tail, mean_overlap
from .nn import ContractError
from .policy import Agent, DivergenceError, EpisodeTrace, TrainConfig, act
from .rewards import reward_vector

log = logging.getLogger(__name__)

EVAL_STREAM = 0
TRAIN_STREAM = 1


class CapabilityError(TypeError):
    """A selector needs something the diagnosis model cannot provide."""


@dataclass(frozen=True)
class SessionConfig:
    max_steps: int = 20
    checkpoints: tuple[int, ...] = (5, 10, 20)
    candidate_fraction: float = 0.8

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if any(c < 1 or c > self.max_steps for c in self.checkpoints):
            raise ValueError("checkpoints must lie in [1, max_steps]")


@dataclass
class SelectionContext:
    student_id: int
    step: int
    history: list[tuple[int, int]]
    theta: float
    mask: np.ndarray
    rng: np.random.Generator


class Selector(Protocol):
    name: str

    def select(self, ctx: SelectionContext) -> int: ...


# -- baseline rules ---------------------------------------------------------


def random_select(mask: np.ndarray, rng: np.random.Generator) -> int:
    allowed = np.flatnonzero(mask)
    if len(allowed) == 0:
        raise ValueError("no question left to select")
    return int(allowed[rng.integers(len(allowed))])


def _argmax_allowed(scores: np.ndarray, mask: np.ndarray) -> int:
    if not np.any(mask):
        raise ValueError("no question left to select")
    return int(np.argmax(np.where(mask, scores, -np.inf)))


def mfi_select(theta: float, items: ItemParams, mask: np.ndarray) -> int:
    """Maximum Fisher information among allowed questions; ties to the lowest id."""
    return _argmax_allowed(fisher_info(theta, items.a, items.b), mask)


def kli_select(theta: float, items: ItemParams, mask: np.ndarray, cfg: KliConfig = KliConfig(), t: int = 1, delta: float | None = None) -> int:
    """Maximum KL information over the shrinking ability interval; ties to the lowest id."""
    allowed = np.flatnonzero(mask)
    if len(allowed) == 0:
        raise ValueError("no question left to select")
    scores = kl_info(theta, items.a[allowed], items.b[allowed], t, cfg, delta)
    return int(allowed[int(np.argmax(scores))])


def _require_information(cdm) -> None:
    if not getattr(cdm, "supports_information", False):
        raise CapabilityError(f"{type(cdm).__name__} does not expose item information")


class RandomSelector:
    name = "random"

    def select(self, ctx: SelectionContext) -> int:
        return random_select(ctx.mask, ctx.rng)


class MFISelector:
    name = "mfi"

    def __init__(self, cdm: IRTModel):
        _require_information(cdm)
        self.cdm = cdm

    def select(self, ctx: SelectionContext) -> int:
        return mfi_select(ctx.theta, self.cdm.items, ctx.mask)


class KLISelector:
    name = "kli"

    def __init__(self, cdm: IRTModel):
        _require_information(cdm)
        self.cdm = cdm

    def select(self, ctx: SelectionContext) -> int:
        return kli_select(ctx.theta, self.cdm.items, ctx.mask, self.cdm.kli, ctx.step)


class PolicySelector:
    """Wraps an :class:`Agent`; ``mode`` is ``"sample"`` or ``"argmax"``."""

    name = "policy"

    def __init__(self, agent: Agent, mode: str = "argmax", train: bool = False):
        self.agent = agent
        self.mode = mode
        self.train = train

    def decide(self, ctx: SelectionContext) -> tuple[int | None, float | None, np.ndarray]:
        qs = [q for q, _ in ctx.history]
        ys = [y for _, y in ctx.history]
        logits, values = self.agent.step_outputs((qs, ys), train=self.train, rng=ctx.rng)
        q, logp = act(logits, ctx.mask, self.mode, ctx.rng)
        return q, logp, values

    def select(self, ctx: SelectionContext) -> int:
        return self.decide(ctx)[0]


def make_selector(name: str, cdm=None, agent: Agent | None = None, mode: str = "argmax") -> Selector:
    if name == "random":
        return RandomSelector()
    if name == "mfi":
        return MFISelector(cdm)
    if name == "kli":
        return KLISelector(cdm)
    if name == "policy":
        if agent is None:
            raise ValueError("policy selector needs an agent")
        return PolicySelector(agent, mode)
    raise ValueError(f"unknown selector {name!r}")


# -- one episode ------------------------------------------------------------


@dataclass
class CatSession:
    student_id: int
    candidate: tuple[int, ...]
    meta: tuple[int, ...]
    meta_labels: np.ndarray
    questions: list[int] = field(default_factory=list)
    responses: list[int] = field(default_factory=list)
    concepts: list[tuple[int, ...]] = field(default_factory=list)
    thetas: list[float] = field(default_factory=list)
    accs: list[float] = field(default_factory=list)
    rewards: list[tuple[float, int, int]] = field(default_factory=list)
    meta_probs: dict[int, np.ndarray] = field(default_factory=dict)
    trace: EpisodeTrace | None = None

    @property
    def steps(self) -> int:
        return len(self.questions)

    def to_dict(self) -> dict:
        return {
            "student_id": self.student_id,
            "candidate": list(self.candidate),
            "meta": list(self.meta),
            "meta_labels": [int(v) for v in self.meta_labels],
            "questions": self.questions,
            "responses": self.responses,
            "concepts": [list(c) for c in self.concepts],
            "thetas": self.thetas,
            "accs": self.accs,
            "rewards": [list(r) for r in self.rewards],
            "meta_probs": {str(t): p.tolist() for t, p in self.meta_probs.items()},
        }


def run_episode(
    log: StudentLog,
    split: StudentSplit,
    selector: Selector,
    cdm,
    popular: PopularSet,
    cfg: SessionConfig,
    rng: np.random.Generator,
    question_count: int,
    collect_trace: bool = False,
    weights: Sequence[float] | None = None,
    scalar_reward: bool = False,
) -> CatSession:
    """Run one adaptive test for ``log`` restricted to ``split``.

    The trace (for policy selectors with ``collect_trace``) stores the
    behaviour log-probability, critic values and candidate mask of every step;
    with ``scalar_reward`` the stored reward is ``weights . r``.
    """
    records = log.record_map()
    meta = split.meta_set
    labels = np.array([records[q].correct for q in meta], dtype=np.int64)
    session = CatSession(log.student_id, split.candidate_set, meta, labels)
    mask = np.zeros(question_count, dtype=bool)
    mask[list(split.candidate_set)] = True
    decide = getattr(selector, "decide", None)
    if collect_trace:
        if decide is None:
            raise ValueError("traces can only be collected from a policy selector")
        session.trace = EpisodeTrace(log.student_id)
    w = np.ones(3) if weights is None else np.asarray(weights, dtype=np.float64)

    theta = 0.0
    ev = cdm.evaluate(theta, meta, labels)
    session.thetas.append(theta)
    session.accs.append(ev.acc)
    probs_at = {0: ev.probs}
    seen: set[int] = set()
    history: list[tuple[int, int]] = []

    for t in range(1, min(cfg.max_steps, len(split.candidate_set)) + 1):
        ctx = SelectionContext(log.student_id, t, list(history), theta, mask.copy(), rng)
        if decide is not None:
            q, logp, values = decide(ctx)
        else:
            q, logp, values = selector.select(ctx), None, None
        if q is None:
            break
        if not (0 <= q < question_count) or not mask[q]:
            raise ContractError(f"selector {getattr(selector, 'name', selector)} returned unavailable question {q}")
        rec = records[q]
        history.append((q, rec.correct))
        session.questions.append(q)
        session.responses.append(rec.correct)
        session.concepts.append(rec.concept_ids)
        est = cdm.update([h[0] for h in history], [h[1] for h in history], prior_theta=theta)
        theta = est.theta
        ev = cdm.evaluate(theta, meta, labels)
        r = reward_vector(ev.acc, session.accs[-1], seen, rec.concept_ids, q, popular)
        seen.update(rec.concept_ids)
        session.thetas.append(theta)
        session.accs.append(ev.acc)
        session.rewards.append(tuple(r))
        probs_at[t] = ev.probs
        if session.trace is not None:
            tr = session.trace
            tr.questions.append(q)
            tr.responses.append(rec.correct)
            tr.logp_old.append(logp)
            tr.values_old.append(np.asarray(values, dtype=np.float64))
            ra = r.as_array()
            tr.rewards.append(np.array([w @ ra]) if scalar_reward else ra)
            tr.masks.append(ctx.mask)
        mask[q] = False

    for c in cfg.checkpoints:
        session.meta_probs[c] = probs_at[min(c, session.steps)]
    return session


# -- aggregation ------------------------------------------------------------


def summarize(
    sessions: Sequence[CatSession],
    cfg: SessionConfig,
    question_count: int,
    concept_count: int,
    popular: PopularSet,
    selector_name: str = "",
    seed: int | None = None,
    config_hash: str | None = None,
) -> MetricReport:
    if not sessions:
        raise ValueError("no sessions to summarize")
    auc_pooled, acc_mean, auc_mean = {}, {}, {}
    for c in cfg.checkpoints:
        labels = np.concatenate([s.meta_labels for s in sessions])
        probs = np.concatenate([s.meta_probs[c] for s in sessions])
        auc_pooled[c] = auc(labels, probs)
        acc_mean[c] = float(np.mean([accuracy(s.meta_labels, s.meta_probs[c]) for s in sessions]))
        auc_mean[c] = float(np.mean([auc(s.meta_labels, s.meta_probs[c]) for s in sessions]))
    curves = []
    for s in sessions:
        cc = coverage_curve(s.concepts, concept_count) if s.steps else np.zeros(1)
        full = np.full(cfg.max_steps, cc[-1])
        full[: len(cc)] = cc[: cfg.max_steps]
        curves.append(full)
    qsets = [s.questions for s in sessions]
    rates = exposure_rates(qsets, question_count)
    overlap = mean_overlap(qsets) if len(sessions) > 1 else 0.0
    picks = [q for s in sessions for q in s.questions]
    pop_frac = float(np.mean([q in popular for q in picks])) if picks else 0.0
    returns = np.array([np.sum(s.rewards, axis=0) if s.rewards else np.zeros(3) for s in sessions])
    return MetricReport(
        selector=selector_name,
        checkpoints=list(cfg.checkpoints),
        auc=auc_pooled,
        acc=acc_mean,
        auc_student_mean=auc_mean,
        cov_curve=np.mean(curves, axis=0).tolist(),
        exposure=rates.tolist(),
        exposure_over_02=exposure_tail(rates, 0.2),
        overlap=float(overlap),
        overlap_rate=float(overlap) / cfg.max_steps,
        popular_fraction=pop_frac,
        mean_return=returns.mean(axis=0).tolist(),
        sessions=len(sessions),
        seed=seed,
        config_hash=config_hash,
    )


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def evaluate(
    test_logs: Sequence[StudentLog],
    selector: Selector,
    cdm,
    popular: PopularSet,
    cfg: SessionConfig,
    seed: int,
    question_count: int,
    concept_count: int,
    config_hash: str | None = None,
    jobs: int = 1,
) -> tuple[MetricReport, list[CatSession]]:
    """Run one session per test student with a fixed (student, seed) split; selector stays frozen."""
    agent = getattr(selector, "agent", None)
    before = agent.param_hash() if agent is not None else None

    def one(log: StudentLog) -> CatSession:
        split = split_candidate_meta(log, cfg.candidate_fraction, seed=[seed, EVAL_STREAM, log.student_id])
        rng = np.random.default_rng([seed, EVAL_STREAM, log.student_id, 1])
        return run_episode(log, split, selector, cdm, popular, cfg, rng, question_count)

    sessions = _map(one, list(test_logs), jobs)
    if agent is not None and agent.param_hash() != before:
        raise ContractError("evaluation modified selector parameters")
    report = summarize(sessions, cfg, question_count, concept_count, popular, getattr(selector, "name", ""), seed, config_hash)
    return report, sessions


# -- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    curves: list[dict]
    best_epoch: int
    losses: list[float]


def train_loop(
    train_logs: Sequence[StudentLog],
    val_logs: Sequence[StudentLog],
    agent: Agent,
    cdm,
    popular: PopularSet,
    train_cfg: TrainConfig,
    session_cfg: SessionConfig,
    epochs: int,
    seed: int = 0,
    select_by: str = "auc",
    jobs: int = 1,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Collect sampled rollouts in batches and apply MOPPO updates.

    Candidate/meta splits are redrawn every epoch. After each epoch the
    argmax policy is scored on the validation students; the parameters of the
    best epoch (by ``select_by``: ``"auc"`` at the last checkpoint, mean
    ``"return"``, or ``"last"``) are restored at the end.
    """
    Q, K = agent.Q, agent.K
    w = np.asarray(train_cfg.weights)
    opt = agent.make_optimizer(train_cfg)
    curves: list[dict] = []
    losses: list[float] = []
    best_score, best_epoch, best_params = -np.inf, 0, None
    for epoch in range(1, epochs + 1):
        ep_rng = np.random.default_rng([seed, TRAIN_STREAM, epoch])
        order = ep_rng.permutation(len(train_logs))
        sampler = PolicySelector(agent, mode="sample", train=True)
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            batch = [train_logs[i] for i in order[start : start + train_cfg.batch_size]]

            def rollout(log: StudentLog) -> EpisodeTrace:
                split = split_candidate_meta(log, session_cfg.candidate_fraction, seed=[seed, TRAIN_STREAM, epoch, log.student_id])
                rng = np.random.default_rng([seed, TRAIN_STREAM, epoch, log.student_id, 1])
                s = run_episode(log, split, sampler, cdm, popular, session_cfg, rng, Q,
                                collect_trace=True, weights=w, scalar_reward=agent.cfg.scalar_reward)
                return s.trace

            traces = [t for t in _map(rollout, batch, jobs) if len(t)]
            if not traces:
                continue
            reps = agent.train_step(traces, train_cfg, opt, rng=np.random.default_rng([seed, TRAIN_STREAM, epoch, b, 2]))
            losses.extend(r.total for r in reps)
        row = {"epoch": epoch, "loss": float(np.mean(losses[-1:])) if losses else None}
        if val_logs:
            report, _ = evaluate(val_logs, PolicySelector(agent, "argmax"), cdm, popular, session_cfg, seed, Q, K, jobs=jobs)
            last = session_cfg.checkpoints[-1]
            row.update({
                "val_auc": report.auc[last],
                "val_acc": report.acc[last],
                "val_cov": report.cov_at(session_cfg.max_steps),
                "val_return": float(w @ np.asarray(report.mean_return)),
                "val_popular_fraction": report.popular_fraction,
            })
            score = {"auc": row["val_auc"], "return": row["val_return"], "last": epoch}[select_by]
            if score > best_score:
                best_score, best_epoch = score, epoch
                best_params = {k: v.copy() for k, v in agent.parameters().items()}
        curves.append(row)
        if callback is not None:
            callback(row)
        log.info("epoch %d: %s", epoch, row)
    if best_params is not None:
        for k, v in agent.parameters().items():
            v[...] = best_params[k]
        agent.bump()
    return TrainResult(curves, best_epoch, losses)


# -- persistence ------------------------------------------------------------

TRACE_HEADER = ["student_id", "step", "question_id", "correct", "r_qua", "r_div", "r_nov", "acc_meta"]


def write_traces(sessions: Sequence[CatSession], path: str | os.PathLike, student_ids: Sequence[str] | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for s in sessions:
            sid = student_ids[s.student_id] if student_ids else s.student_id
            for t, (q, y, r) in enumerate(zip(s.questions, s.responses, s.rewards), start=1):
                w.writerow([sid, t, q, y, repr(float(r[0])), int(r[1]), int(r[2]), repr(float(s.accs[t]))])
    return path


def write_sessions(sessions: Sequence[CatSession], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_dict()) + "\n")
    return path


def read_sessions(path: str | os.PathLike) -> list[CatSession]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            s = CatSession(d["student_id"], tuple(d["candidate"]), tuple(d["meta"]), np.array(d["meta_labels"], dtype=np.int64))
            s.questions, s.responses = d["questions"], d["responses"]
            s.concepts = [tuple(c) for c in d["concepts"]]
            s.thetas, s.accs = d["thetas"], d["accs"]
            s.rewards = [tuple(r) for r in d["rewards"]]
            s.meta_probs = {int(t): np.array(p) for t, p in d["meta_probs"].items()}
            out.append(s)
    return out
