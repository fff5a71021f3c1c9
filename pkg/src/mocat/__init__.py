"""Multi-objective computerized adaptive testing.

Replays logged responses, estimates ability with a 2PL model and selects
questions with a scalarized multi-objective actor-critic policy built on
graph-attention question/concept embeddings and a self-attentive state
encoder. Random, MFI and KLI selectors serve as baselines.
"""

from .cdm import IRTConfig, IRTModel, ItemParams, KliConfig, calibrate, fisher_info, kl_info, update_ability
from .data import DatasetBundle, ResponseRecord, StudentLog, compute_popular_set, load_dataset, split_candidate_meta, split_students
from .graphs import build_correlation_graph, count_transitions, induce_prerequisite_graph
from .metrics import MetricReport, auc, coverage, exposure_rates, mean_overlap
from .policy import Agent, AgentConfig, TrainConfig
from .rewards import RewardVector, ScalarizationWeights, reward_vector
from .session import KLISelector, MFISelector, PolicySelector, RandomSelector, SessionConfig, evaluate, run_episode, train_loop

__version__ = "0.1.0"
