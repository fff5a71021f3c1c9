"""Experiment configuration: INI sections per module, strict validation, stable hash.

Every key has a type and a default. Files may set any subset; unknown
sections or keys are rejected. Command-line ``--set section.key=value``
overrides take precedence over the file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .cdm import IRTConfig, KliConfig
from .policy import AgentConfig, TrainConfig
from .session import SessionConfig
from .synthetic import WorldConfig


class ConfigValueError(ValueError):
    """The experiment configuration is invalid."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(" ", "").split(",") if x)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


def _opt_str(s: str) -> str | None:
    s = s.strip()
    return s or None


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "data": {
        "path": (_opt_str, None),
        "min_records": (int, 40),
        "ratios": (_floats, (0.8, 0.1, 0.1)),
        "candidate_fraction": (float, 0.8),
        "popular_fraction": (float, 0.1),
    },
    "synthetic": {
        "students": (int, 200),
        "questions": (int, 100),
        "concepts": (int, 8),
        "min_records": (int, 40),
        "max_records": (int, 60),
        "concept_skew": (float, 1.0),
        "popularity_skew": (float, 1.0),
        "log_a_sd": (float, 1.2),
        "b_sd": (float, 1.5),
        "theta_sd": (float, 1.5),
        "world_seed": (int, 0),
    },
    "cdm": {
        "prior_var": (float, 1.0),
        "a_min": (float, 0.2),
        "a_max": (float, 4.0),
        "b_min": (float, -4.0),
        "b_max": (float, 4.0),
        "newton_iters": (int, 20),
        "calib_iters": (int, 200),
        "kli_c": (float, 3.0),
        "kli_points": (int, 101),
    },
    "model": {
        "dim": (int, 32),
        "dropout": (float, 0.1),
        "relation_aggregator": (_bool, True),
        "scalar_reward": (_bool, False),
    },
    "train": {
        "epochs": (int, 12),
        "gamma": (float, 0.5),
        "clip": (float, 0.2),
        "alpha": (float, 1.0),
        "lr": (float, 3e-3),
        "batch_size": (int, 32),
        "ppo_epochs": (int, 2),
        "weights": (_floats, (1.0, 1.0, 1.0)),
        "normalize_advantage": (_bool, False),
        "select_by": (str, "auc"),
    },
    "session": {
        "max_steps": (int, 20),
        "checkpoints": (_ints, (5, 10, 20)),
    },
    "run": {
        "seed": (int, 0),
        "seeds": (_ints, (0, 1, 2)),
        "selector": (str, "policy"),
        "selectors": (lambda s: tuple(x.strip() for x in s.split(",") if x.strip()), ("random", "mfi", "kli", "policy")),
        "out": (str, "runs"),
        "jobs": (int, 1),
    },
}

PROFILES: dict[str, dict[str, str]] = {
    "desk": {},
    "full": {"model.dim": "128", "train.batch_size": "128", "train.lr": "0.001"},
}

# keys that do not change any computed number and so stay out of the hash
_UNHASHED = {("run", "seed"), ("run", "seeds"), ("run", "selector"), ("run", "selectors"), ("run", "out"), ("run", "jobs")}

SELECTORS = ("random", "mfi", "kli", "policy")


@dataclass(frozen=True)
class ExperimentConfig:
    values: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    def get(self, dotted: str) -> Any:
        s, k = dotted.split(".", 1)
        return self.values[s][k]

    # -- typed views ---------------------------------------------------
    @property
    def irt(self) -> IRTConfig:
        c = self["cdm"]
        return IRTConfig(a_bounds=(c["a_min"], c["a_max"]), b_bounds=(c["b_min"], c["b_max"]),
                         prior_var=c["prior_var"], newton_iters=c["newton_iters"], calib_iters=c["calib_iters"])

    @property
    def kli(self) -> KliConfig:
        return KliConfig(self["cdm"]["kli_c"], self["cdm"]["kli_points"])

    @property
    def agent(self) -> AgentConfig:
        m = self["model"]
        return AgentConfig(dim=m["dim"], dropout=m["dropout"], relation_aggregator=m["relation_aggregator"],
                           scalar_reward=m["scalar_reward"])

    @property
    def train(self) -> TrainConfig:
        t = self["train"]
        return TrainConfig(gamma=t["gamma"], clip=t["clip"], alpha=t["alpha"], lr=t["lr"], batch_size=t["batch_size"],
                           ppo_epochs=t["ppo_epochs"], weights=t["weights"], normalize_advantage=t["normalize_advantage"])

    @property
    def session(self) -> SessionConfig:
        s = self["session"]
        return SessionConfig(s["max_steps"], s["checkpoints"], self["data"]["candidate_fraction"])

    @property
    def world(self) -> WorldConfig:
        s = dict(self["synthetic"])
        s.pop("world_seed")
        return WorldConfig(**s)

    # -- identity ------------------------------------------------------
    def to_dict(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()} for s, kv in self.values.items()}

    def hash(self) -> str:
        d = {s: {k: v for k, v in kv.items() if (s, k) not in _UNHASHED} for s, kv in self.to_dict().items()}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self, seed: int | None = None) -> Path:
        seed = self["run"]["seed"] if seed is None else seed
        return Path(self["run"]["out"]) / f"{self.hash()}-s{seed}"

    def to_ini(self) -> str:
        lines = []
        for s, kv in self.to_dict().items():
            lines.append(f"[{s}]")
            for k, v in kv.items():
                if isinstance(v, list):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{k} = {'' if v is None else v}")
            lines.append("")
        return "\n".join(lines)


def _validate(values: dict) -> None:
    t = values["train"]
    w = t["weights"]
    if len(w) != 3:
        raise ConfigValueError(f"train.weights needs three entries, got {len(w)}")
    if any(x < 0 for x in w):
        raise ConfigValueError(f"train.weights must be non-negative, got {list(w)}")
    if not any(w):
        raise ConfigValueError("train.weights must have a nonzero entry")
    if t["select_by"] not in ("auc", "return", "last"):
        raise ConfigValueError(f"train.select_by must be auc, return or last, got {t['select_by']!r}")
    if t["epochs"] < 0:
        raise ConfigValueError("train.epochs must be >= 0")
    r = values["data"]["ratios"]
    if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ConfigValueError(f"data.ratios must be three non-negative numbers summing to 1, got {list(r)}")
    run = values["run"]
    for name in (run["selector"], *run["selectors"]):
        if name not in SELECTORS:
            raise ConfigValueError(f"unknown selector {name!r}; choose from {', '.join(SELECTORS)}")
    if run["jobs"] < 1:
        raise ConfigValueError("run.jobs must be >= 1")
    if not run["seeds"]:
        raise ConfigValueError("run.seeds must list at least one seed")


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None, profile: str = "desk") -> ExperimentConfig:
    """Defaults, then the profile, then the file, then ``overrides`` (``section.key -> text``)."""
    if profile not in PROFILES:
        raise ConfigValueError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    raw: dict[str, dict[str, str]] = {}

    def put(section: str, key: str, text: str, origin: str) -> None:
        if section not in SCHEMA:
            raise ConfigValueError(f"{origin}: unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigValueError(f"{origin}: unknown key {section}.{key}")
        raw.setdefault(section, {})[key] = text

    for dotted, text in PROFILES[profile].items():
        put(*dotted.split(".", 1), text, f"profile {profile}")
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except FileNotFoundError as e:
            raise ConfigValueError(f"config file not found: {path}") from e
        except configparser.Error as e:
            raise ConfigValueError(f"{path}: {e}") from e
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigValueError(f"{path}: unknown section [{section}]")
            for key, text in cp.items(section):
                put(section, key, text, str(path))
    for dotted, text in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigValueError(f"override {dotted!r} must look like section.key")
        put(*dotted.split(".", 1), text, "command line")

    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, default) in keys.items():
            if key in raw.get(section, {}):
                try:
                    values[section][key] = parse(raw[section][key])
                except ValueError as e:
                    raise ConfigValueError(f"{section}.{key}: {e}") from e
            else:
                values[section][key] = default
    _validate(values)
    cfg = ExperimentConfig(values)
    # construct the typed views once so their own checks run before any work
    try:
        cfg.irt, cfg.kli, cfg.agent, cfg.train, cfg.session, cfg.world
    except (TypeError, ValueError) as e:
        raise ConfigValueError(str(e)) from e
    return cfg
