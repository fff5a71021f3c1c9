"""Quality, diversity and novelty metrics for adaptive-test sessions."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

SCHEMA_VERSION = 1


def auc_defined(labels) -> bool:
    labels = np.asarray(labels)
    return bool(np.any(labels == 1) and np.any(labels == 0))


def auc(labels, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count half).

    Computed from average ranks, which equals the exhaustive pair count
    exactly. Returns 0.5 when only one class is present.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError(f"labels {labels.shape} and scores {scores.shape} differ in shape")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(labels, probs, threshold: float = 0.5) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    pred = (np.asarray(probs) >= threshold).astype(labels.dtype)
    return float(np.mean(pred == labels))


def coverage(selected_concepts: Iterable[Iterable[int]], concept_count: int) -> float:
    if concept_count < 1:
        raise ValueError("concept_count must be at least 1")
    covered = set()
    for cs in selected_concepts:
        covered.update(int(c) for c in cs)
    return len(covered) / concept_count


def coverage_curve(selected_concepts: Sequence[Iterable[int]], concept_count: int) -> np.ndarray:
    """Coverage after each selection step."""
    covered: set[int] = set()
    out = np.empty(len(selected_concepts))
    for t, cs in enumerate(selected_concepts):
        covered.update(int(c) for c in cs)
        out[t] = len(covered) / concept_count
    return out


def _incidence(question_sets: Sequence[Iterable[int]], question_count: int) -> np.ndarray:
    m = np.zeros((len(question_sets), question_count), dtype=np.int64)
    for i, qs in enumerate(question_sets):
        m[i, list({int(q) for q in qs})] = 1
    return m


def exposure_rates(question_sets: Sequence[Iterable[int]], question_count: int) -> np.ndarray:
    """Fraction of sessions in which each question was administered."""
    if len(question_sets) < 1:
        raise ValueError("need at least one session")
    return _incidence(question_sets, question_count).sum(axis=0) / len(question_sets)


def mean_overlap(question_sets: Sequence[Iterable[int]]) -> float:
    """Mean number of shared questions over all unordered session pairs.

    Uses sum_q C(N_q, 2), which counts every (pair, shared question) once.
    """
    u = len(question_sets)
    if u < 2:
        raise ValueError("overlap needs at least two sessions")
    counts: dict[int, int] = {}
    for qs in question_sets:
        for q in {int(q) for q in qs}:
            counts[q] = counts.get(q, 0) + 1
    shared = sum(n * (n - 1) // 2 for n in counts.values())
    return shared / (u * (u - 1) / 2)


def exposure_tail(rates, cutoff: float = 0.2) -> float:
    rates = np.asarray(rates)
    return float(np.mean(rates > cutoff)) if rates.size else 0.0


@dataclass
class MetricReport:
    """Aggregates over a set of evaluated sessions.

    ``auc`` is computed over the pooled meta predictions of all sessions at
    each checkpoint; ``auc_student_mean`` and ``acc`` average per-session values.
    """

    selector: str
    checkpoints: list[int]
    auc: dict[int, float]
    acc: dict[int, float]
    auc_student_mean: dict[int, float]
    cov_curve: list[float]
    exposure: list[float]
    exposure_over_02: float
    overlap: float
    overlap_rate: float
    popular_fraction: float
    mean_return: list[float]
    sessions: int
    seed: int | None = None
    config_hash: str | None = None
    extra: dict = field(default_factory=dict)

    def cov_at(self, t: int) -> float:
        return self.cov_curve[min(t, len(self.cov_curve)) - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        for k in ("auc", "acc", "auc_student_mean"):
            d[k] = {str(t): v for t, v in d[k].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {version}")
        for k in ("auc", "acc", "auc_student_mean"):
            d[k] = {int(t): v for t, v in d[k].items()}
        return cls(**d)

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def average_reports(reports: Sequence[MetricReport]) -> dict:
    """Mean and standard deviation of the headline numbers across runs."""
    if not reports:
        raise ValueError("no reports to average")
    cps = reports[0].checkpoints
    rows = {}
    for t in cps:
        for name in ("auc", "acc"):
            vals = [getattr(r, name)[t] for r in reports]
            rows[f"{name}@{t}"] = (float(np.mean(vals)), float(np.std(vals)))
        vals = [r.cov_at(t) for r in reports]
        rows[f"cov@{t}"] = (float(np.mean(vals)), float(np.std(vals)))
    for name in ("exposure_over_02", "overlap", "overlap_rate", "popular_fraction"):
        vals = [getattr(r, name) for r in reports]
        rows[name] = (float(np.mean(vals)), float(np.std(vals)))
    return {"selector": reports[0].selector, "runs": len(reports), "metrics": rows}
