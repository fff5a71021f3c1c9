"""End-to-end pipeline helpers: prepare a dataset, train a policy, compare selectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cdm import IRTConfig, IRTModel
from .data import DatasetBundle, PopularSet, StudentLog, compute_popular_set, split_students
from .graphs import CorrelationGraph, PrerequisiteGraph, build_correlation_graph, count_transitions, induce_prerequisite_graph
from .metrics import MetricReport, average_reports
from .policy import Agent, AgentConfig, TrainConfig
from .session import PolicySelector, SessionConfig, TrainResult, evaluate, make_selector, train_loop

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    bundle: DatasetBundle
    train: list[StudentLog]
    val: list[StudentLog]
    test: list[StudentLog]
    cdm: IRTModel
    correlation: CorrelationGraph
    prerequisite: PrerequisiteGraph
    popular: PopularSet
    seed: int

    @property
    def question_count(self) -> int:
        return self.bundle.question_count

    @property
    def concept_count(self) -> int:
        return self.bundle.concept_count


def build_prerequisite(bundle: DatasetBundle, train: Sequence[StudentLog]) -> PrerequisiteGraph:
    """Shipped edges when present, otherwise induce them from the training logs."""
    if bundle.prerequisite_edges is not None:
        return PrerequisiteGraph(bundle.concept_count, bundle.prerequisite_edges)
    graph, _ = induce_prerequisite_graph(count_transitions(train, bundle.concept_count))
    return graph


def prepare(
    bundle: DatasetBundle,
    seed: int = 0,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    irt: IRTConfig = IRTConfig(),
    popular_fraction: float = 0.1,
) -> Prepared:
    train, val, test = split_students(bundle, ratios, seed)
    cdm = IRTModel.fit(train, bundle.question_count, irt)
    return Prepared(
        bundle=bundle,
        train=train,
        val=val,
        test=test,
        cdm=cdm,
        correlation=build_correlation_graph(bundle.question_concepts, bundle.concept_count),
        prerequisite=build_prerequisite(bundle, train),
        popular=compute_popular_set(train, popular_fraction, bundle.question_count),
        seed=seed,
    )


def new_agent(prep: Prepared, cfg: AgentConfig = AgentConfig(), seed: int | None = None) -> Agent:
    return Agent(prep.bundle.question_concepts, prep.correlation, prep.prerequisite, cfg, prep.seed if seed is None else seed)


def train_agent(
    prep: Prepared,
    agent_cfg: AgentConfig = AgentConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    session_cfg: SessionConfig = SessionConfig(),
    epochs: int = 10,
    select_by: str = "auc",
    jobs: int = 1,
) -> tuple[Agent, TrainResult]:
    agent = new_agent(prep, agent_cfg)
    result = train_loop(prep.train, prep.val, agent, prep.cdm, prep.popular, train_cfg, session_cfg,
                        epochs, seed=prep.seed, select_by=select_by, jobs=jobs)
    return agent, result


def evaluate_selector(prep: Prepared, selector, session_cfg: SessionConfig = SessionConfig(), jobs: int = 1):
    return evaluate(prep.test, selector, prep.cdm, prep.popular, session_cfg, prep.seed,
                    prep.question_count, prep.concept_count, jobs=jobs)


@dataclass
class Comparison:
    """Per-seed reports for each named configuration."""

    reports: dict[str, list[MetricReport]] = field(default_factory=dict)

    def add(self, name: str, report: MetricReport) -> None:
        self.reports.setdefault(name, []).append(report)

    def summary(self) -> dict[str, dict]:
        return {name: average_reports(reps) for name, reps in self.reports.items()}


def compare(
    bundle: DatasetBundle,
    seeds: Sequence[int] = (0, 1, 2),
    weights: Sequence[tuple[float, float, float]] = ((1.0, 1.0, 1.0),),
    baselines: Sequence[str] = ("random", "mfi", "kli"),
    agent_cfg: AgentConfig = AgentConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    session_cfg: SessionConfig = SessionConfig(),
    epochs: int = 10,
    select_by: str = "auc",
) -> Comparison:
    """Train one policy per weight vector and evaluate it next to the baselines, for each seed."""
    out = Comparison()
    for seed in seeds:
        prep = prepare(bundle, seed)
        for name in baselines:
            report, _ = evaluate_selector(prep, make_selector(name, prep.cdm), session_cfg)
            out.add(name, report)
        for w in weights:
            agent, _ = train_agent(prep, agent_cfg, replace(train_cfg, weights=tuple(w)), session_cfg, epochs, select_by)
            report, _ = evaluate_selector(prep, PolicySelector(agent), session_cfg)
            out.add("policy" + str(list(w)), report)
            log.info("seed %d w=%s auc=%s", seed, w, report.auc)
    return out
