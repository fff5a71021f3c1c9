"""Response-log ingestion, student / question-set partitioning and popularity."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RECORDS_FILE = "records.csv"
CONCEPTS_FILE = "question_concepts.csv"
PREREQ_FILE = "prerequisites.csv"

_EPS = 1e-9


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid split or partition configuration."""


@dataclass(frozen=True)
class ResponseRecord:
    question_id: int
    concept_ids: tuple[int, ...]
    correct: int
    position: int = 0

    def __post_init__(self):
        if not self.concept_ids:
            raise DataError(f"question {self.question_id} has no concepts")
        if self.correct not in (0, 1):
            raise DataError(f"correct must be 0 or 1, got {self.correct!r}")


@dataclass
class StudentLog:
    student_id: int
    records: list[ResponseRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def question_ids(self) -> np.ndarray:
        return np.array([r.question_id for r in self.records], dtype=np.int64)

    def response_map(self) -> dict[int, int]:
        return {r.question_id: r.correct for r in self.records}

    def record_map(self) -> dict[int, ResponseRecord]:
        return {r.question_id: r for r in self.records}


@dataclass
class DatasetBundle:
    logs: list[StudentLog]
    question_count: int
    concept_count: int
    question_concepts: list[tuple[int, ...]]
    student_ids: list[str] = field(default_factory=list)
    question_ids: list[str] = field(default_factory=list)
    concept_ids: list[str] = field(default_factory=list)
    prerequisite_edges: np.ndarray | None = None

    def __post_init__(self):
        if len(self.question_concepts) != self.question_count:
            raise DataError("question_concepts length does not match question_count")
        for log in self.logs:
            for r in log.records:
                if not 0 <= r.question_id < self.question_count:
                    raise DataError(f"question {r.question_id} out of range")

    @property
    def record_count(self) -> int:
        return sum(len(log) for log in self.logs)

    def summary(self) -> dict:
        """Dataset statistics: counts of students, questions, concepts and responses."""
        n_rec = self.record_count
        pos = sum(r.correct for log in self.logs for r in log.records)
        cpq = (
            float(np.mean([len(c) for c in self.question_concepts]))
            if self.question_count
            else 0.0
        )
        return {
            "students": len(self.logs),
            "questions": self.question_count,
            "concepts": self.concept_count,
            "records": n_rec,
            "prerequisite_edges": (
                None if self.prerequisite_edges is None else int(len(self.prerequisite_edges))
            ),
            "concepts_per_question": round(cpq, 4),
            "positive_label_rate": round(pos / n_rec, 4) if n_rec else 0.0,
        }


@dataclass(frozen=True)
class StudentSplit:
    candidate_set: tuple[int, ...]
    meta_set: tuple[int, ...]


@dataclass(frozen=True)
class PopularSet:
    members: frozenset[int]
    percentile: float = 0.10

    def __contains__(self, q) -> bool:
        return int(q) in self.members

    def __len__(self) -> int:
        return len(self.members)


def _id_key(x: str):
    try:
        return (0, int(x), "")
    except ValueError:
        return (1, 0, x)


def _read_rows(path: Path, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = True
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row]
            if first:
                first = False
                if row != list(header):
                    raise DataError(
                        f"{path.name}:{lineno}: expected header {','.join(header)!r}, "
                        f"got {','.join(row)!r}"
                    )
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path.name}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, row


def read_concept_map(path: str | os.PathLike) -> dict[str, tuple[str, ...]]:
    path = Path(path)
    out: dict[str, tuple[str, ...]] = {}
    for lineno, (qid, cids) in _read_rows(path, ("question_id", "concept_ids")):
        concepts = tuple(c.strip() for c in cids.split(";") if c.strip())
        if not concepts:
            raise DataError(f"{path.name}:{lineno}: question {qid} has no concepts")
        out[qid] = concepts
    return out


def load_dataset(
    path: str | os.PathLike,
    min_records: int = 40,
    *,
    records_file: str = RECORDS_FILE,
    concepts_file: str = CONCEPTS_FILE,
    prereq_file: str = PREREQ_FILE,
) -> DatasetBundle:
    """Load a dataset directory and densely re-index students, questions and concepts.

    The directory holds ``records.csv`` (``student_id,question_id,correct``,
    rows per student in time order), ``question_concepts.csv``
    (``question_id,concept_ids`` with ``;``-separated concepts) and optionally
    ``prerequisites.csv`` (``src_concept,dst_concept``).

    Students with fewer than ``min_records`` distinct questions are dropped.
    A repeated question inside one student's log keeps its first response.
    """
    root = Path(path)
    rec_path = root / records_file
    map_path = root / concepts_file
    if not rec_path.exists():
        raise FileNotFoundError(rec_path)
    if not map_path.exists():
        raise FileNotFoundError(map_path)

    raw_map = read_concept_map(map_path)

    per_student: dict[str, list[tuple[str, int]]] = {}
    seen: dict[str, set[str]] = {}
    for lineno, (sid, qid, corr) in _read_rows(rec_path, ("student_id", "question_id", "correct")):
        if corr not in ("0", "1"):
            raise DataError(f"{rec_path.name}:{lineno}: correct must be 0 or 1, got {corr!r}")
        if qid not in raw_map:
            raise DataError(f"{rec_path.name}:{lineno}: question {qid} has no concept mapping")
        if qid in seen.setdefault(sid, set()):
            continue
        seen[sid].add(qid)
        per_student.setdefault(sid, []).append((qid, int(corr)))

    kept = {sid: rows for sid, rows in per_student.items() if len(rows) >= min_records}

    used_q = sorted({q for rows in kept.values() for q, _ in rows}, key=_id_key)
    q_index = {q: i for i, q in enumerate(used_q)}
    used_c = sorted({c for q in used_q for c in raw_map[q]}, key=_id_key)
    c_index = {c: i for i, c in enumerate(used_c)}
    qc = [tuple(sorted({c_index[c] for c in raw_map[q]})) for q in used_q]

    logs = []
    student_ids = []
    for new_sid, (sid, rows) in enumerate(kept.items()):
        records = [
            ResponseRecord(q_index[q], qc[q_index[q]], y, pos) for pos, (q, y) in enumerate(rows)
        ]
        logs.append(StudentLog(new_sid, records))
        student_ids.append(sid)

    edges = None
    pre_path = root / prereq_file
    if pre_path.exists():
        pairs = []
        for _, (src, dst) in _read_rows(pre_path, ("src_concept", "dst_concept")):
            if src in c_index and dst in c_index and src != dst:
                pairs.append((c_index[src], c_index[dst]))
        edges = np.array(sorted(set(pairs)), dtype=np.int64).reshape(-1, 2)

    return DatasetBundle(
        logs=logs,
        question_count=len(used_q),
        concept_count=len(used_c),
        question_concepts=qc,
        student_ids=student_ids,
        question_ids=used_q,
        concept_ids=used_c,
        prerequisite_edges=edges,
    )


def write_dataset(bundle: DatasetBundle, path: str | os.PathLike) -> Path:
    """Write a bundle in the directory layout read by :func:`load_dataset`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    qids = bundle.question_ids or [str(i) for i in range(bundle.question_count)]
    cids = bundle.concept_ids or [str(i) for i in range(bundle.concept_count)]
    sids = bundle.student_ids or [str(log.student_id) for log in bundle.logs]
    with open(root / RECORDS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "question_id", "correct"])
        for log, sid in zip(bundle.logs, sids):
            for r in log.records:
                w.writerow([sid, qids[r.question_id], r.correct])
    with open(root / CONCEPTS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["question_id", "concept_ids"])
        for q, cs in enumerate(bundle.question_concepts):
            w.writerow([qids[q], ";".join(cids[c] for c in cs)])
    if bundle.prerequisite_edges is not None:
        with open(root / PREREQ_FILE, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["src_concept", "dst_concept"])
            for s, d in bundle.prerequisite_edges:
                w.writerow([cids[s], cids[d]])
    return root


def split_students(
    logs: Sequence[StudentLog] | DatasetBundle,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[StudentLog], list[StudentLog], list[StudentLog]]:
    """Shuffle students and cut them into train / validation / test lists.

    Train and validation sizes are ``floor(ratio * n)``; test takes the rest.
    """
    if isinstance(logs, DatasetBundle):
        logs = logs.logs
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(logs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratios[0] * n + _EPS)
    n_val = math.floor(ratios[1] * n + _EPS)
    shuffled = [logs[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def split_candidate_meta(log: StudentLog, fraction: float = 0.8, seed=0) -> StudentSplit:
    """Randomly split a student's answered questions into candidate and meta sets.

    ``seed`` may be anything accepted by :func:`numpy.random.default_rng`,
    e.g. ``[run_seed, epoch, student_id]`` for per-epoch resampling.
    """
    n = len(log.records)
    if n < 2:
        raise DataError(f"student {log.student_id}: need at least 2 records to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"candidate fraction must lie in (0, 1), got {fraction}")
    qs = log.question_ids
    perm = np.random.default_rng(seed).permutation(n)
    n_cand = min(max(math.floor(fraction * n + _EPS), 1), n - 1)
    cand = tuple(sorted(int(q) for q in qs[perm[:n_cand]]))
    meta = tuple(sorted(int(q) for q in qs[perm[n_cand:]]))
    return StudentSplit(cand, meta)


def answer_counts(logs: Iterable[StudentLog], question_count: int) -> np.ndarray:
    qs = [log.question_ids for log in logs]
    if not qs:
        return np.zeros(question_count, dtype=np.int64)
    return np.bincount(np.concatenate(qs), minlength=question_count)[:question_count]


def compute_popular_set(
    train_logs: Sequence[StudentLog], x: float = 0.10, question_count: int | None = None
) -> PopularSet:
    """Top ``floor(x * Q)`` questions by answer count; ties go to the lower id."""
    if not 0.0 < x < 1.0:
        raise ConfigError(f"popularity fraction must lie in (0, 1), got {x}")
    if question_count is None:
        question_count = 1 + max((int(log.question_ids.max()) for log in train_logs if log.records), default=-1)
    counts = answer_counts(train_logs, question_count)
    k = math.floor(x * question_count + _EPS)
    order = np.lexsort((np.arange(question_count), -counts))
    return PopularSet(frozenset(int(q) for q in order[:k]), x)
