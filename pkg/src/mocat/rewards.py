"""Per-step reward vector [quality, diversity, novelty] and scalarization weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Iterable, NamedTuple

import numpy as np

from .data import PopularSet


class RewardVector(NamedTuple):
    quality: float
    diversity: int
    novelty: int

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


@dataclass(frozen=True)
class ScalarizationWeights:
    w: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != 3:
            raise ValueError(f"need three weights, got {len(w)}")
        if any(x < 0 or not np.isfinite(x) for x in w):
            raise ValueError(f"weights must be finite and non-negative, got {w}")
        if not any(w):
            raise ValueError("at least one weight must be positive")
        object.__setattr__(self, "w", w)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.w)

    def scalarize(self, r) -> float:
        return float(np.dot(self.w, r))


def quality_reward(acc_now: float, acc_prev: float) -> float:
    return float(acc_now) - float(acc_prev)


def diversity_reward(seen_concepts: AbstractSet[int], question_concepts: Iterable[int]) -> int:
    """1 if the question touches a concept not seen earlier in the session."""
    qc = set(question_concepts)
    if not qc:
        raise ValueError("question has no concepts")
    return int(bool(qc - set(seen_concepts)))


def novelty_reward(question_id: int, popular: PopularSet | AbstractSet[int]) -> int:
    return int(int(question_id) not in popular)


def reward_vector(acc_now, acc_prev, seen_concepts, question_concepts, question_id, popular) -> RewardVector:
    return RewardVector(
        quality_reward(acc_now, acc_prev),
        diversity_reward(seen_concepts, question_concepts),
        novelty_reward(question_id, popular),
    )
