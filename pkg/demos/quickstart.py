"""Walk through one experiment on a synthetic world.

1. draw a world with known abilities and item parameters
2. split students, calibrate the 2PL model, build the concept graphs
3. run the classical selectors
4. train a policy for a few epochs and compare

Run with ``python demos/quickstart.py`` (about a minute on one CPU).
"""

from __future__ import annotations

import numpy as np

from mocat.config import load_config
from mocat.experiment import evaluate_selector, prepare, train_agent
from mocat.session import PolicySelector, make_selector
from mocat.synthetic import make_world


def row(name, report):
    return f"{name:>8}  AUC@20 {report.auc[20]:.4f}  Cov@20 {report.cov_at(20):.3f}  " \
           f"popular {report.popular_fraction:.3f}  overlap {report.overlap:.2f}"


def main() -> None:
    cfg = load_config()
    world = make_world(cfg.world, seed=0)
    prep = prepare(world.bundle, seed=0, irt=cfg.irt)

    # calibration fixes the ability scale to mean 0, sd 1, so the true
    # difficulties are moved onto that scale before comparing
    theta = world.theta
    b_true = (world.b - theta.mean()) / theta.std()
    mae = np.mean(np.abs(prep.cdm.items.b - b_true))
    print(f"{len(prep.train)} training students, difficulty MAE {mae:.3f} on the standardised scale")
    print(f"prerequisite edges induced from the logs: {prep.prerequisite.edges.tolist()}")

    for name in ("random", "mfi", "kli"):
        report, _ = evaluate_selector(prep, make_selector(name, prep.cdm), cfg.session)
        print(row(name, report))

    agent, result = train_agent(prep, cfg.agent, cfg.train, cfg.session, epochs=4)
    print(f"validation AUC per epoch: {[round(c['val_auc'], 4) for c in result.curves]}")
    report, sessions = evaluate_selector(prep, PolicySelector(agent), cfg.session)
    print(row("policy", report))
    print(f"first test session picked {sessions[0].questions[:10]} ...")


if __name__ == "__main__":
    main()
