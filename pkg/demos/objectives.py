"""Show how the weight vector over (quality, diversity, novelty) steers selection.

Trains one policy per weight vector on the same split and prints coverage,
the share of picks from the most popular questions, and mean overlap.
Expect the diversity term to raise coverage and the novelty term to push
popular questions out. Takes a few minutes.
"""

from __future__ import annotations

from dataclasses import replace

from mocat.config import load_config
from mocat.experiment import evaluate_selector, prepare, train_agent
from mocat.session import PolicySelector
from mocat.synthetic import make_world

WEIGHTS = [(1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, 0.0, 1.0), (1.0, 1.0, 1.0)]


def main(seed: int = 1) -> None:
    cfg = load_config()
    prep = prepare(make_world(cfg.world, seed=0).bundle, seed=seed, irt=cfg.irt)
    print(f"{'weights':>16}  {'AUC@20':>7}  {'Cov@20':>6}  {'popular':>7}  {'overlap':>7}")
    for w in WEIGHTS:
        agent, _ = train_agent(prep, cfg.agent, replace(cfg.train, weights=w), cfg.session, cfg["train"]["epochs"])
        r, _ = evaluate_selector(prep, PolicySelector(agent), cfg.session)
        print(f"{str(list(w)):>16}  {r.auc[20]:7.4f}  {r.cov_at(20):6.3f}  {r.popular_fraction:7.3f}  {r.overlap:7.2f}")


if __name__ == "__main__":
    main()
