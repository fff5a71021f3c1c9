"""Command-line experiment runner.

Every subcommand reads the same INI config and works inside the run
directory ``<out>/<config hash>-s<seed>``. Exit codes: 0 success,
2 configuration error, 3 data error, 4 training divergence.

    mocat ingest --config exp.ini
    mocat induce-graph --config exp.ini
    mocat calibrate --config exp.ini
    mocat train --config exp.ini --set train.epochs=5
    mocat evaluate --config exp.ini --selector mfi
    mocat report --config exp.ini
    mocat sweep --config exp.ini --seeds 0,1,2
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cdm import IRTModel, ItemParams
from .config import ConfigValueError, ExperimentConfig, load_config
from .data import DataError, DatasetBundle, compute_popular_set, load_dataset, split_students, write_dataset
from .experiment import build_prerequisite
from .graphs import build_correlation_graph, count_transitions, induce_prerequisite_graph, read_edge_list, write_edge_list
from .metrics import MetricReport, average_reports
from .nn import ContractError
from .policy import Agent, DivergenceError
from .session import PolicySelector, evaluate, make_selector, train_loop, write_sessions, write_traces
from .synthetic import make_world

log = logging.getLogger("mocat")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

ITEMS_FILE = "items.csv"
GRAPH_FILE = "graph_edges.csv"
CHECKPOINT_FILE = "checkpoint.npz"
CURVES_FILE = "curves.json"
MANIFEST_FILE = "manifest.json"


def _now() -> str:
    """UTC timestamp; honours ``SOURCE_DATE_EPOCH`` for byte-identical reruns."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


class Run:
    """Run directory, manifest bookkeeping and cached pipeline stages."""

    def __init__(self, cfg: ExperimentConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg["run"]["seed"] if seed is None else seed
        self.dir = cfg.run_dir(self.seed)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._bundle: DatasetBundle | None = None
        self._splits = None

    # -- manifest --------------------------------------------------------
    def manifest(self) -> dict:
        path = self.dir / MANIFEST_FILE
        if path.exists():
            return json.loads(path.read_text())
        return {"config_hash": self.cfg.hash(), "seed": self.seed, "seeds": list(self.cfg["run"]["seeds"]),
                "artifacts": {}, "timestamps": {"created": _now()}}

    def record(self, **artifacts: str) -> None:
        m = self.manifest()
        for name, rel in artifacts.items():
            if not (self.dir / rel).exists():
                raise ContractError(f"artifact {rel} missing")
            m["artifacts"][name] = rel
        m["timestamps"]["updated"] = _now()
        (self.dir / "config.ini").write_text(self.cfg.to_ini())
        m["artifacts"]["config"] = "config.ini"
        (self.dir / MANIFEST_FILE).write_text(json.dumps(m, indent=2, sort_keys=True))

    # -- pipeline stages -------------------------------------------------
    @property
    def bundle(self) -> DatasetBundle:
        if self._bundle is None:
            path = self.cfg["data"]["path"]
            if path:
                self._bundle = load_dataset(path, self.cfg["data"]["min_records"])
            else:
                self._bundle = make_world(self.cfg.world, self.cfg["synthetic"]["world_seed"]).bundle
        return self._bundle

    @property
    def splits(self):
        if self._splits is None:
            self._splits = split_students(self.bundle, self.cfg["data"]["ratios"], self.seed)
        return self._splits

    def graphs(self):
        b = self.bundle
        path = self.dir / GRAPH_FILE
        if path.exists():
            cor, pre = read_edge_list(path, b.question_count, b.concept_count)
            return cor or build_correlation_graph(b.question_concepts, b.concept_count), pre
        return build_correlation_graph(b.question_concepts, b.concept_count), build_prerequisite(b, self.splits[0])

    def cdm(self, fit_if_missing: bool = True) -> IRTModel:
        path = self.dir / ITEMS_FILE
        if path.exists():
            items = ItemParams.load(path)
            if len(items) != self.bundle.question_count:
                raise DataError(f"{path}: {len(items)} items but dataset has {self.bundle.question_count} questions")
            return IRTModel(items, self.cfg.irt, self.cfg.kli)
        if not fit_if_missing:
            raise DataError(f"calibration artifact {path} not found; run 'calibrate' first")
        return self.calibrate()

    def calibrate(self) -> IRTModel:
        model = IRTModel.fit(self.splits[0], self.bundle.question_count, self.cfg.irt, self.cfg.kli)
        model.items.save(self.dir / ITEMS_FILE)
        self.record(items=ITEMS_FILE)
        return model

    def popular(self):
        return compute_popular_set(self.splits[0], self.cfg["data"]["popular_fraction"], self.bundle.question_count)

    def agent(self) -> Agent:
        cor, pre = self.graphs()
        return Agent(self.bundle.question_concepts, cor, pre, self.cfg.agent, self.seed)


# -- subcommands -----------------------------------------------------------


def cmd_ingest(run: Run, args) -> int:
    b = run.bundle
    summary = b.summary()
    if not run.cfg["data"]["path"]:
        write_dataset(b, run.dir / "data")
        run.record(dataset="data")
    (run.dir / "dataset_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    run.record(dataset_summary="dataset_summary.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_induce_graph(run: Run, args) -> int:
    b = run.bundle
    cor = build_correlation_graph(b.question_concepts, b.concept_count)
    if b.prerequisite_edges is not None:
        pre = build_prerequisite(b, run.splits[0])
        source = "shipped"
    else:
        pre, mats = induce_prerequisite_graph(count_transitions(run.splits[0], b.concept_count))
        source = "induced"
        np.savez(run.dir / "induction.npz", counts=mats.counts, normalized=mats.normalized,
                 transition=mats.transition, threshold=mats.threshold)
        run.record(induction="induction.npz")
    write_edge_list(run.dir / GRAPH_FILE, cor, pre)
    run.record(graph=GRAPH_FILE)
    summary = {"prerequisite_source": source, "prerequisite_edges": int(len(pre.edges)),
               "correlation_edges": int(len(cor.edges())), "concepts": b.concept_count, "questions": b.question_count}
    print(json.dumps(summary, indent=2, sort_keys=True))
    if source == "shipped":
        for s, d in pre.edges:
            print(f"{b.concept_ids[s] if b.concept_ids else s} -> {b.concept_ids[d] if b.concept_ids else d}")
    return EXIT_OK


def cmd_calibrate(run: Run, args) -> int:
    model = run.calibrate()
    a, bb = model.items.a, model.items.b
    print(json.dumps({"items": len(a), "a_mean": float(a.mean()), "b_mean": float(bb.mean()),
                      "b_std": float(bb.std())}, indent=2))
    return EXIT_OK


def cmd_train(run: Run, args) -> int:
    cfg = run.cfg
    cdm = run.cdm()
    agent = run.agent()
    train, val, _ = run.splits
    rows = []
    try:
        result = train_loop(train, val, agent, cdm, run.popular(), cfg.train, cfg.session, cfg["train"]["epochs"],
                            seed=run.seed, select_by=cfg["train"]["select_by"], jobs=cfg["run"]["jobs"],
                            callback=lambda r: (rows.append(r), print(json.dumps(r), flush=True)))
    except DivergenceError as e:
        (run.dir / "diagnostics.json").write_text(json.dumps({"error": str(e), "curves": rows}, indent=2))
        run.record(diagnostics="diagnostics.json")
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    agent.save(run.dir / CHECKPOINT_FILE, cfg.hash())
    (run.dir / CURVES_FILE).write_text(json.dumps({"best_epoch": result.best_epoch, "curves": result.curves}, indent=2, sort_keys=True))
    run.record(checkpoint=CHECKPOINT_FILE, curves=CURVES_FILE)
    return EXIT_OK


def cmd_evaluate(run: Run, args) -> int:
    cfg = run.cfg
    name = args.selector or cfg["run"]["selector"]
    cdm = run.cdm()
    if name == "policy":
        ckpt = Path(args.checkpoint) if args.checkpoint else run.dir / CHECKPOINT_FILE
        if not ckpt.exists():
            raise DataError(f"checkpoint {ckpt} not found; run 'train' first or pass --checkpoint")
        agent = run.agent()
        agent.load(ckpt, cfg.hash())
        selector = PolicySelector(agent)
    else:
        selector = make_selector(name, cdm)
    b = run.bundle
    report, sessions = evaluate(run.splits[2], selector, cdm, run.popular(), cfg.session, run.seed,
                                b.question_count, b.concept_count, cfg.hash(), cfg["run"]["jobs"])
    report.selector = name
    report.save(run.dir / f"report_{name}.json")
    write_traces(sessions, run.dir / f"traces_{name}.csv", b.student_ids or None)
    write_sessions(sessions, run.dir / f"sessions_{name}.jsonl")
    run.record(**{f"report_{name}": f"report_{name}.json", f"traces_{name}": f"traces_{name}.csv",
                  f"sessions_{name}": f"sessions_{name}.jsonl"})
    print(_format_report(report))
    return EXIT_OK


def _format_report(r: MetricReport) -> str:
    parts = [f"{r.selector:>8}"]
    parts += [f"AUC@{t}={r.auc[t]:.4f}" for t in r.checkpoints]
    parts += [f"ACC@{t}={r.acc[t]:.4f}" for t in r.checkpoints]
    parts += [f"Cov@{len(r.cov_curve)}={r.cov_curve[-1]:.4f}", f"Exp>0.2={r.exposure_over_02:.4f}",
              f"Overlap={r.overlap:.3f}", f"Popular={r.popular_fraction:.4f}"]
    return "  ".join(parts)


def cmd_report(run: Run, args) -> int:
    cfg = run.cfg
    seeds = _seeds(args, cfg)
    by_selector: dict[str, list[MetricReport]] = {}
    for seed in seeds:
        d = cfg.run_dir(seed)
        for path in sorted(d.glob("report_*.json")):
            rep = MetricReport.load(path)
            by_selector.setdefault(rep.selector, []).append(rep)
    if not by_selector:
        raise DataError(f"no reports found under {cfg.run_dir(seeds[0]).parent} for seeds {seeds}")
    summary = {name: average_reports(reps) for name, reps in sorted(by_selector.items())}
    out = cfg.run_dir(seeds[0]).parent / f"{cfg.hash()}-summary.json"
    out.write_text(json.dumps(summary, indent=2, sort_keys=True))
    metric_names = list(next(iter(summary.values()))["metrics"])
    print("selector  runs  " + "  ".join(metric_names))
    for name, s in summary.items():
        vals = "  ".join(f"{m:.4f}±{sd:.4f}" for m, sd in s["metrics"].values())
        print(f"{name:>8}  {s['runs']:>4}  {vals}")
    print(f"summary written to {out}")
    return EXIT_OK


def cmd_sweep(run: Run, args) -> int:
    """Calibrate, train and evaluate every configured selector for each seed, then report."""
    for seed in _seeds(args, run.cfg):
        r = Run(run.cfg, seed)
        cmd_induce_graph(r, args)
        cmd_calibrate(r, args)
        selectors = run.cfg["run"]["selectors"]
        if "policy" in selectors:
            code = cmd_train(r, args)
            if code:
                return code
        for name in selectors:
            args.selector = name
            cmd_evaluate(r, args)
    args.selector = None
    return cmd_report(run, args)


def _seeds(args, cfg: ExperimentConfig) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    return list(cfg["run"]["seeds"])


COMMANDS = {
    "ingest": cmd_ingest,
    "induce-graph": cmd_induce_graph,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mocat", description="Multi-objective adaptive testing experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--profile", default="desk", help="preset overrides: desk (default) or full")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int, help="shortcut for run.seed")
        sp.add_argument("--out", help="shortcut for run.out")
        sp.add_argument("--jobs", type=int, help="shortcut for run.jobs (concurrent rollouts)")
        sp.add_argument("--weights", help="shortcut for train.weights, e.g. 1,1,0")
        sp.add_argument("--epochs", type=int, help="shortcut for train.epochs")
        sp.add_argument("--data", help="shortcut for data.path")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("evaluate", "sweep"):
            sp.add_argument("--selector", choices=["random", "mfi", "kli", "policy"])
            sp.add_argument("--checkpoint", help="policy checkpoint (default: the run directory's)")
        if name in ("report", "sweep"):
            sp.add_argument("--seeds", help="comma-separated seeds (default: run.seeds)")
    return p


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("seed", "run.seed"), ("out", "run.out"), ("jobs", "run.jobs"), ("weights", "train.weights"),
                      ("epochs", "train.epochs"), ("data", "data.path")):
        v = getattr(args, flag)
        if v is not None:
            out[key] = str(v)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args), args.profile)
        run = Run(cfg)
        return COMMANDS[args.command](run, args)
    except (ConfigValueError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
