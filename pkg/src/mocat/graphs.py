"""Question-concept correlation graph and concept prerequisite graph.

The prerequisite graph is either shipped with a dataset or induced from
training logs by counting correct-to-correct transitions between concepts.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import DataError, StudentLog

log = logging.getLogger(__name__)


def _adjacency_lists(src: np.ndarray, dst: np.ndarray, n: int) -> list[np.ndarray]:
    out = [[] for _ in range(n)]
    for s, d in zip(src.tolist(), dst.tolist()):
        out[s].append(d)
    return [np.array(sorted(set(a)), dtype=np.int64) for a in out]


@dataclass(frozen=True, eq=False)
class CorrelationGraph:
    """Undirected bipartite question-concept graph."""

    question_neighbors: tuple[np.ndarray, ...]
    concept_neighbors: tuple[np.ndarray, ...]

    @property
    def question_count(self) -> int:
        return len(self.question_neighbors)

    @property
    def concept_count(self) -> int:
        return len(self.concept_neighbors)

    def edges(self) -> np.ndarray:
        """(question, concept) pairs, sorted."""
        pairs = [(q, int(c)) for q, cs in enumerate(self.question_neighbors) for c in cs]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class PrerequisiteGraph:
    """Directed concept graph; an edge ``i -> j`` means ``i`` is a prerequisite of ``j``."""

    concept_count: int
    edges: np.ndarray  # (E, 2) sorted, unique, no self loops

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= self.concept_count):
            raise DataError("prerequisite edge references a concept out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise DataError("prerequisite graph may not contain self edges")
        e = np.unique(e, axis=0) if len(e) else e
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "_out", _adjacency_lists(e[:, 0], e[:, 1], self.concept_count))
        object.__setattr__(self, "_in", _adjacency_lists(e[:, 1], e[:, 0], self.concept_count))

    def out_neighbors(self, c: int) -> np.ndarray:
        _check(c, self.concept_count)
        return self._out[c]

    def in_neighbors(self, c: int) -> np.ndarray:
        _check(c, self.concept_count)
        return self._in[c]

    def aggregation_neighbors(self, c: int) -> np.ndarray:
        """Union of in- and out-neighbours, ascending."""
        return np.union1d(self.in_neighbors(c), self.out_neighbors(c)).astype(np.int64)

    def has_edge(self, i: int, j: int) -> bool:
        return bool(np.isin(j, self.out_neighbors(i)))


@dataclass
class InductionMatrices:
    counts: np.ndarray
    correct: np.ndarray | None = None
    normalized: np.ndarray | None = None
    transition: np.ndarray | None = None
    threshold: float | None = None


def _check(node: int, n: int) -> None:
    if not 0 <= int(node) < n:
        raise IndexError(f"node {node} out of range [0, {n})")


def build_correlation_graph(question_concepts: Sequence[Iterable[int]], concept_count: int | None = None) -> CorrelationGraph:
    qc = [tuple(cs) for cs in question_concepts]
    for q, cs in enumerate(qc):
        if not cs:
            raise DataError(f"question {q} has an empty concept set")
    if concept_count is None:
        concept_count = 1 + max((max(cs) for cs in qc), default=-1)
    src = np.array([q for q, cs in enumerate(qc) for _ in cs], dtype=np.int64)
    dst = np.array([c for cs in qc for c in cs], dtype=np.int64)
    if len(dst) and dst.max() >= concept_count:
        raise DataError("concept id out of range")
    return CorrelationGraph(
        tuple(_adjacency_lists(src, dst, len(qc))),
        tuple(_adjacency_lists(dst, src, concept_count)),
    )


def neighbors(graph, node: int, side: str | None = None) -> list[int]:
    """Neighbour list of ``node`` in ascending id order.

    For a :class:`CorrelationGraph` pass ``side="question"`` or
    ``side="concept"`` to say which partition ``node`` lives in. For a
    :class:`PrerequisiteGraph` the union of in- and out-neighbours is returned.
    """
    if isinstance(graph, CorrelationGraph):
        if side == "question":
            _check(node, graph.question_count)
            return graph.question_neighbors[node].tolist()
        if side == "concept":
            _check(node, graph.concept_count)
            return graph.concept_neighbors[node].tolist()
        raise ValueError("side must be 'question' or 'concept' for a correlation graph")
    if isinstance(graph, PrerequisiteGraph):
        return graph.aggregation_neighbors(node).tolist()
    raise TypeError(f"unsupported graph type {type(graph).__name__}")


def count_transitions(train_logs: Sequence[StudentLog], concept_count: int) -> np.ndarray:
    """``n[i, j]``: adjacent both-correct record pairs going from concept ``i`` to ``j``."""
    n = np.zeros((concept_count, concept_count), dtype=np.int64)
    for slog in train_logs:
        recs = slog.records
        for prev, nxt in zip(recs[:-1], recs[1:]):
            if prev.correct and nxt.correct:
                for i in prev.concept_ids:
                    for j in nxt.concept_ids:
                        if i != j:
                            n[i, j] += 1
    return n


TIE_TOLERANCE = 1e-9


def induce_prerequisite_graph(matrices: InductionMatrices | np.ndarray) -> tuple[PrerequisiteGraph, InductionMatrices]:
    """Threshold the min-max normalised correct-transition matrix.

    The threshold is the mean of the normalised matrix. ``i -> j`` is kept
    when the transition is above threshold one way and not the other way.
    Entries within round-off of the threshold count as ties, so that ratios
    of integer counts that equal the mean exactly never pass the strict test.
    """
    if not isinstance(matrices, InductionMatrices):
        matrices = InductionMatrices(np.asarray(matrices))
    n = np.asarray(matrices.counts, dtype=np.float64)
    k = n.shape[0]
    rows = n.sum(axis=1, keepdims=True)
    C = np.divide(n, rows, out=np.zeros_like(n), where=rows > 0)
    np.fill_diagonal(C, 0.0)
    lo, hi = C.min(initial=0.0), C.max(initial=0.0)
    if k == 0 or hi == lo:
        if k:
            log.warning("degenerate transition matrix (max == min); prerequisite graph is empty")
        out = InductionMatrices(n.astype(np.int64), C, np.zeros_like(C), np.zeros((k, k), dtype=np.int8), 0.0)
        return PrerequisiteGraph(k, np.zeros((0, 2), dtype=np.int64)), out
    Cn = (C - lo) / (hi - lo)
    threshold = float(Cn.mean())
    T = (Cn > threshold + TIE_TOLERANCE).astype(np.int8)
    np.fill_diagonal(T, 0)
    keep = (T == 1) & (T.T != 1)
    edges = np.argwhere(keep)
    out = InductionMatrices(n.astype(np.int64), C, Cn, T, threshold)
    return PrerequisiteGraph(k, edges), out


def write_edge_list(path: str | os.PathLike, correlation: CorrelationGraph | None = None, prerequisite: PrerequisiteGraph | None = None) -> Path:
    """Write ``src,dst,relation`` rows; ``cor`` rows are (question, concept)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "relation"])
        if correlation is not None:
            for q, c in correlation.edges():
                w.writerow([int(q), int(c), "cor"])
        if prerequisite is not None:
            for s, d in prerequisite.edges:
                w.writerow([int(s), int(d), "pre"])
    return path


def read_edge_list(path: str | os.PathLike, question_count: int, concept_count: int) -> tuple[CorrelationGraph | None, PrerequisiteGraph | None]:
    cor, pre = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst", "relation"]:
            raise DataError(f"{path}: bad edge-list header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[2] not in ("cor", "pre"):
                raise DataError(f"{path}:{lineno}: malformed edge row {row}")
            (cor if row[2] == "cor" else pre).append((int(row[0]), int(row[1])))
    corr = None
    if cor:
        qc = [[] for _ in range(question_count)]
        for q, c in cor:
            qc[q].append(c)
        corr = build_correlation_graph(qc, concept_count)
    prereq = PrerequisiteGraph(concept_count, np.array(pre, dtype=np.int64).reshape(-1, 2))
    return corr, prereq
