"""Synthetic 2PL worlds with known abilities and item parameters.

Used to build small reproducible datasets for tests and demos. Responses
are drawn once and then replayed like any logged dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdm import predict_prob
from .data import DatasetBundle, ResponseRecord, StudentLog


@dataclass(frozen=True)
class WorldConfig:
    students: int = 200
    questions: int = 100
    concepts: int = 8
    min_records: int = 40
    max_records: int = 60
    concept_skew: float = 1.0
    popularity_skew: float = 1.0
    two_concept_rate: float = 0.3
    log_a_sd: float = 0.4
    b_sd: float = 1.0
    theta_sd: float = 1.0
    order_noise: float = 1.0

    def __post_init__(self):
        if not 1 <= self.min_records <= self.max_records <= self.questions:
            raise ValueError("need 1 <= min_records <= max_records <= questions")
        if self.concepts < 2:
            raise ValueError("need at least two concepts")


@dataclass
class SyntheticWorld:
    bundle: DatasetBundle
    a: np.ndarray
    b: np.ndarray
    theta: np.ndarray
    popularity: np.ndarray
    config: WorldConfig


def _zipf_weights(n: int, skew: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** skew
    return w / w.sum()


def _question_concepts(rng: np.random.Generator, cfg: WorldConfig) -> list[tuple[int, ...]]:
    pc = _zipf_weights(cfg.concepts, cfg.concept_skew)
    out = []
    for _ in range(cfg.questions):
        k = 2 if rng.random() < cfg.two_concept_rate else 1
        out.append(tuple(sorted(int(c) for c in rng.choice(cfg.concepts, size=k, replace=False, p=pc))))
    # every concept appears at least once so that coverage can reach 1
    missing = set(range(cfg.concepts)) - {c for cs in out for c in cs}
    for c, q in zip(sorted(missing), rng.choice(cfg.questions, size=len(missing), replace=False)):
        out[q] = tuple(sorted(set(out[q]) | {c}))
    return out


def make_world(cfg: WorldConfig = WorldConfig(), seed: int = 0) -> SyntheticWorld:
    """Draw a world: skewed concept tags, Zipf question popularity, 2PL responses.

    Each student answers a popularity-weighted sample of questions, ordered
    roughly by their lowest concept id so that lower-numbered concepts tend to
    precede higher ones, which makes concept transition counts asymmetric.
    """
    rng = np.random.default_rng(seed)
    qc = _question_concepts(rng, cfg)
    a = np.exp(rng.normal(0.0, cfg.log_a_sd, cfg.questions))
    b = rng.normal(0.0, cfg.b_sd, cfg.questions)
    theta = rng.normal(0.0, cfg.theta_sd, cfg.students)
    popularity = _zipf_weights(cfg.questions, cfg.popularity_skew)[rng.permutation(cfg.questions)]
    level = np.array([min(cs) for cs in qc], dtype=np.float64)

    logs = []
    for s in range(cfg.students):
        n = int(rng.integers(cfg.min_records, cfg.max_records + 1))
        qs = rng.choice(cfg.questions, size=n, replace=False, p=popularity)
        qs = qs[np.argsort(level[qs] + cfg.order_noise * rng.normal(size=n), kind="stable")]
        ys = (rng.random(n) < predict_prob(theta[s], a[qs], b[qs])).astype(int)
        recs = [ResponseRecord(int(q), qc[q], int(y), i) for i, (q, y) in enumerate(zip(qs, ys))]
        logs.append(StudentLog(s, recs))

    bundle = DatasetBundle(
        logs=logs,
        question_count=cfg.questions,
        concept_count=cfg.concepts,
        question_concepts=qc,
        student_ids=[str(i) for i in range(cfg.students)],
        question_ids=[str(i) for i in range(cfg.questions)],
        concept_ids=[str(i) for i in range(cfg.concepts)],
    )
    return SyntheticWorld(bundle, a, b, theta, popularity, cfg)


def simulate_responses(students: int = 500, questions: int = 50, seed: int = 0, log_a_sd: float = 0.3):
    """Complete response matrix from a 2PL population: every student answers every question.

    Returns ``(logs, a, b, theta)`` with one concept per question.
    """
    rng = np.random.default_rng(seed)
    a = np.exp(rng.normal(0.0, log_a_sd, questions))
    b = rng.normal(0.0, 1.0, questions)
    theta = rng.normal(0.0, 1.0, students)
    Y = (rng.random((students, questions)) < predict_prob(theta[:, None], a[None, :], b[None, :])).astype(int)
    logs = [
        StudentLog(s, [ResponseRecord(q, (0,), int(Y[s, q]), q) for q in range(questions)])
        for s in range(students)
    ]
    return logs, a, b, theta
