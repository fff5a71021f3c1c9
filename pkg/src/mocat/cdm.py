"""Two-parameter logistic IRT as the cognitive diagnosis model.

Items are calibrated by joint MAP over item and student parameters; a
session's ability is re-estimated after every response by a damped Newton
MAP step under a Gaussian prior. Fisher and Kullback-Leibler item
information back the MFI and KLI baseline selectors.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.special import expit

from .data import DataError, StudentLog
from .metrics import accuracy, auc, auc_defined

log = logging.getLogger(__name__)

_P_EPS = 1e-12


@dataclass(frozen=True)
class IRTConfig:
    a_bounds: tuple[float, float] = (0.2, 4.0)
    b_bounds: tuple[float, float] = (-4.0, 4.0)
    theta_max: float = 6.0
    prior_var: float = 1.0
    newton_iters: int = 20
    max_step: float = 1.0
    calib_iters: int = 200
    calib_tol: float = 1e-7
    log_a_prior_var: float = 1.0
    b_prior_var: float = float("inf")
    acc_threshold: float = 0.5


@dataclass(frozen=True)
class KliConfig:
    c: float = 3.0
    points: int = 101

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("KLI interval constant must be positive")
        if self.points < 3 or self.points % 2 == 0:
            raise ValueError("KLI quadrature needs an odd number of points >= 3")

    def delta(self, t: int) -> float:
        if t < 1:
            raise ValueError("KLI step index starts at 1")
        return self.c / np.sqrt(t)


@dataclass
class ItemParams:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("item parameters must be finite")
        if np.any(self.a <= 0):
            raise ValueError("discrimination must be positive")

    def __len__(self) -> int:
        return len(self.a)

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["question_id", "a", "b"])
            for q, (a, b) in enumerate(zip(self.a, self.b)):
                w.writerow([q, f"{a:.9g}", f"{b:.9g}"])
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ItemParams":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["question_id", "a", "b"]:
                raise DataError(f"{path}: expected header question_id,a,b")
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((int(row[0]), float(row[1]), float(row[2])))
                except (ValueError, IndexError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed row {row}") from exc
        rows.sort()
        if [r[0] for r in rows] != list(range(len(rows))):
            raise DataError(f"{path}: question ids must be 0..n-1")
        return cls(np.array([r[1] for r in rows]), np.array([r[2] for r in rows]))


@dataclass
class AbilityEstimate:
    theta: float = 0.0
    step: int = 0
    clamped: bool = False


@dataclass
class MetaEvaluation:
    """Meta-set predictions at one ability value; AUC is computed on first access."""

    acc: float
    labels: np.ndarray
    probs: np.ndarray

    @property
    def auc_defined(self) -> bool:
        return auc_defined(self.labels)

    @property
    def auc(self) -> float:
        return auc(self.labels, self.probs)


def predict_prob(theta, a, b):
    """P(correct) = sigmoid(a * (theta - b)); broadcasts."""
    return expit(np.asarray(a) * (np.asarray(theta) - np.asarray(b)))


def fisher_info(theta, a, b):
    p = predict_prob(theta, a, b)
    return np.asarray(a) ** 2 * p * (1.0 - p)


def _bernoulli_kl(p, q):
    p = np.clip(p, _P_EPS, 1 - _P_EPS)
    q = np.clip(q, _P_EPS, 1 - _P_EPS)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def kl_info(theta: float, a, b, t: int = 1, cfg: KliConfig = KliConfig(), delta: float | None = None):
    """Integral of KL(p(theta) || p(u)) for u in [theta - delta, theta + delta].

    ``delta`` defaults to ``cfg.c / sqrt(t)``; composite Simpson quadrature on
    ``cfg.points`` nodes. Vectorised over items.
    """
    if delta is None:
        delta = cfg.delta(t)
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    u = np.linspace(theta - delta, theta + delta, cfg.points)
    p0 = predict_prob(theta, a, b)[:, None]
    pu = predict_prob(u[None, :], a[:, None], b[:, None])
    out = simpson(_bernoulli_kl(p0, pu), x=u, axis=-1)
    return out if out.size > 1 else out.reshape(-1)


def _flatten(logs: Sequence[StudentLog]):
    s = np.concatenate([np.full(len(g), i) for i, g in enumerate(logs)]) if logs else np.zeros(0, int)
    q = np.concatenate([g.question_ids for g in logs]) if logs else np.zeros(0, int)
    y = np.array([r.correct for g in logs for r in g.records], dtype=np.float64)
    return s.astype(np.int64), q.astype(np.int64), y


def _logit(p):
    return np.log(p) - np.log1p(-p)


def calibrate(train_logs: Sequence[StudentLog], question_count: int, cfg: IRTConfig = IRTConfig()) -> ItemParams:
    """Joint MAP calibration of 2PL items by alternating Fisher-scoring steps.

    Student abilities carry a N(0, ``prior_var``) prior, ``log a`` a
    N(0, ``log_a_prior_var``) prior and ``b`` an optional Gaussian prior
    (flat by default). Updates are deterministic; parameters are clamped to
    the configured bounds after every sweep. After each sweep abilities are
    standardised to mean 0 and sd 1, with items rescaled to match, which fixes
    the otherwise free scale of the model. Questions never answered fall back
    to ``a=1, b=0``.
    """
    s, q, y = _flatten(train_logs)
    n_s, n_q = len(train_logs), question_count
    seen = np.bincount(q, minlength=n_q)[:n_q] if len(q) else np.zeros(n_q, int)
    if np.any(seen == 0):
        log.warning("%d question(s) never answered in training; using a=1, b=0", int(np.sum(seen == 0)))
    if len(q) == 0:
        return ItemParams(np.ones(n_q), np.zeros(n_q))

    lo_a, hi_a = np.log(cfg.a_bounds[0]), np.log(cfg.a_bounds[1])
    lam_a = 1.0 / cfg.log_a_prior_var
    lam_b = 0.0 if np.isinf(cfg.b_prior_var) else 1.0 / cfg.b_prior_var
    lam_t = 1.0 / cfg.prior_var

    n_per_s = np.bincount(s, minlength=n_s)
    theta = _logit((np.bincount(s, y, n_s) + 0.5) / (n_per_s + 1.0))
    theta = (theta - theta.mean()) / (theta.std() + 1e-12)
    log_a = np.zeros(n_q)
    b = -_logit((np.bincount(q, y, n_q) + 0.5) / (seen + 1.0))
    b = np.clip(b, *cfg.b_bounds)

    for _ in range(cfg.calib_iters):
        a = np.exp(log_a)
        z = a[q] * (theta[s] - b[q])
        p = expit(z)
        r = y - p
        w = p * (1 - p)
        g_la = np.bincount(q, r * z, n_q) - lam_a * log_a
        g_b = np.bincount(q, -r * a[q], n_q) - lam_b * b
        h_aa = -np.bincount(q, w * z * z, n_q) - lam_a
        h_ab = np.bincount(q, w * a[q] * z, n_q)
        h_bb = -np.bincount(q, w * a[q] ** 2, n_q) - lam_b - 1e-9
        det = h_aa * h_bb - h_ab**2
        d_la = np.clip(-(h_bb * g_la - h_ab * g_b) / det, -cfg.max_step, cfg.max_step)
        d_b = np.clip(-(h_aa * g_b - h_ab * g_la) / det, -cfg.max_step, cfg.max_step)
        log_a = np.clip(log_a + d_la, lo_a, hi_a)
        b = np.clip(b + d_b, *cfg.b_bounds)

        a = np.exp(log_a)
        p = expit(a[q] * (theta[s] - b[q]))
        g_t = np.bincount(s, a[q] * (y - p), n_s) - lam_t * theta
        h_t = -np.bincount(s, a[q] ** 2 * p * (1 - p), n_s) - lam_t
        d_t = np.clip(-g_t / h_t, -cfg.max_step, cfg.max_step)
        theta = np.clip(theta + d_t, -cfg.theta_max, cfg.theta_max)

        # The likelihood is unchanged by theta -> c*theta + m with matching item
        # changes, and the ability prior alone would shrink the scale while
        # inflating a. Pin the ability distribution to mean 0, sd 1 instead.
        m, sd = theta.mean(), theta.std()
        if sd > 0:
            theta = (theta - m) / sd
            log_a = np.clip(log_a + np.log(sd), lo_a, hi_a)
            b = np.clip((b - m) / sd, *cfg.b_bounds)
            d_t = d_t / sd

        if max(np.abs(d_la).max(), np.abs(d_b).max(), np.abs(d_t).max()) < cfg.calib_tol:
            break

    a = np.exp(log_a)
    a[seen == 0] = 1.0
    b[seen == 0] = 0.0
    return ItemParams(a, b)


def update_ability(
    questions: Sequence[int],
    responses: Sequence[int],
    items: ItemParams,
    prior_theta: float = 0.0,
    cfg: IRTConfig = IRTConfig(),
    weights: Sequence[float] | None = None,
) -> AbilityEstimate:
    """MAP ability under a N(0, ``cfg.prior_var``) prior, Newton iterations from ``prior_theta``.

    ``weights`` multiply each response's log-likelihood term (repeating a
    response k times equals weight k).
    """
    qs = np.asarray(questions, dtype=np.int64)
    if len(qs) == 0:
        return AbilityEstimate(0.0, 0)
    y = np.asarray(responses, dtype=np.float64)
    wt = np.ones(len(qs)) if weights is None else np.asarray(weights, dtype=np.float64)
    a, b = items.a[qs], items.b[qs]
    lam = 1.0 / cfg.prior_var
    theta = float(np.clip(prior_theta, -cfg.theta_max, cfg.theta_max))
    clamped = False
    for _ in range(cfg.newton_iters):
        p = expit(a * (theta - b))
        grad = float(np.dot(wt * a, y - p)) - lam * theta
        hess = -float(np.dot(wt * a * a, p * (1 - p))) - lam
        step = -grad / hess
        if not np.isfinite(step):
            clamped = True
            break
        step = float(np.clip(step, -cfg.max_step, cfg.max_step))
        theta += step
        if abs(theta) > cfg.theta_max:
            theta = float(np.clip(theta, -cfg.theta_max, cfg.theta_max))
            clamped = True
        if abs(step) < 1e-12:
            break
    return AbilityEstimate(theta, len(qs), clamped)


def eval_meta(theta: float, meta_questions: Sequence[int], meta_labels: Sequence[int], items: ItemParams, threshold: float = 0.5) -> MetaEvaluation:
    qs = np.asarray(meta_questions, dtype=np.int64)
    if len(qs) == 0:
        raise ValueError("meta set must be non-empty")
    labels = np.asarray(meta_labels, dtype=np.int64)
    probs = predict_prob(theta, items.a[qs], items.b[qs])
    return MetaEvaluation(accuracy(labels, probs, threshold), labels, probs)


class CognitiveModel(Protocol):
    """What the session loop needs from a diagnosis model."""

    supports_information: bool

    def predict(self, theta: float, questions: Sequence[int]) -> np.ndarray: ...

    def update(self, questions: Sequence[int], responses: Sequence[int], prior_theta: float = 0.0) -> AbilityEstimate: ...

    def evaluate(self, theta: float, meta_questions: Sequence[int], meta_labels: Sequence[int]) -> MetaEvaluation: ...


class IRTModel:
    """2PL model bound to calibrated items."""

    supports_information = True

    def __init__(self, items: ItemParams, cfg: IRTConfig = IRTConfig(), kli: KliConfig = KliConfig()):
        self.items = items
        self.cfg = cfg
        self.kli = kli

    @classmethod
    def fit(cls, train_logs: Sequence[StudentLog], question_count: int, cfg: IRTConfig = IRTConfig(), kli: KliConfig = KliConfig()) -> "IRTModel":
        return cls(calibrate(train_logs, question_count, cfg), cfg, kli)

    def predict(self, theta, questions):
        qs = np.asarray(questions, dtype=np.int64)
        return predict_prob(theta, self.items.a[qs], self.items.b[qs])

    def update(self, questions, responses, prior_theta=0.0):
        return update_ability(questions, responses, self.items, prior_theta, self.cfg)

    def evaluate(self, theta, meta_questions, meta_labels):
        return eval_meta(theta, meta_questions, meta_labels, self.items, self.cfg.acc_threshold)

    def fisher(self, theta: float) -> np.ndarray:
        return fisher_info(theta, self.items.a, self.items.b)

    def kl(self, theta: float, t: int, questions=None) -> np.ndarray:
        qs = np.arange(len(self.items)) if questions is None else np.asarray(questions, dtype=np.int64)
        return kl_info(theta, self.items.a[qs], self.items.b[qs], t, self.kli)
