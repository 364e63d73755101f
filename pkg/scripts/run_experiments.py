"""Convergence and truncation experiments, written as JSON lines.

    python3 scripts/run_experiments.py --out results/ --sequences 100
"""

from __future__ import annotations

import argparse
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from treeformat import approx, dense, minsub
from treeformat.dtree import tree_from_arg


@dataclass
class ExperimentConfig:
    tree: str = "balanced"
    shape: tuple[int, ...] = (3, 3, 3, 3)
    rank: int = 2
    sequences: int = 100
    steps: int = 20
    instances: int = 50
    restarts: int = 3
    seed: int = 0


def uniform_caps(tree, shape, r):
    d = len(shape)
    caps = {}
    for a in tree.vertices:
        inside = math.prod(shape[j - 1] for j in a)
        outside = math.prod(shape[j - 1] for j in range(1, d + 1) if j not in a)
        caps[a] = 1 if a == tree.root else min(r, inside, outside)
    return caps


def truncation_records(cfg: ExperimentConfig, tree):
    rng = np.random.default_rng(cfg.seed)
    caps = uniform_caps(tree, cfg.shape, cfg.rank)
    for i in range(cfg.instances):
        v = rng.standard_normal(cfg.shape)
        tr = approx.truncate(v, tree, caps)
        ba = approx.best_approx(v, tree, caps, restarts=cfg.restarts, seed=cfg.seed + i)
        yield {
            "id": i,
            "target_norm": dense.frobenius_norm(v),
            "truncate": tr.residual,
            "bound": tr.bound(),
            "best_approx": ba.residual,
            "monotone_violations": ba.monotone_violations(),
            "exact_ranks": minsub.tree_rank(v, tree).as_keys(),
        }


def write_lines(path: Path, records) -> int:
    n = 0
    with path.open("w") as fh:
        for rec in records:
            fh.write(dense.dumps(rec))
            n += 1
    return n


def main(argv=None) -> None:
    cfg = ExperimentConfig()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--tree", default=cfg.tree)
    p.add_argument("--shape", default=",".join(map(str, cfg.shape)))
    for name in ("rank", "sequences", "steps", "instances", "restarts", "seed"):
        p.add_argument(f"--{name}", type=int, default=getattr(cfg, name))
    args = p.parse_args(argv)
    cfg = ExperimentConfig(args.tree, tuple(int(n) for n in args.shape.split(",")), args.rank, args.sequences,
                           args.steps, args.instances, args.restarts, args.seed)
    tree = tree_from_arg(len(cfg.shape), cfg.tree)
    caps = uniform_caps(tree, cfg.shape, cfg.rank)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(dense.dumps(asdict(cfg)))

    jobs = {
        "lsc": lambda: approx.lsc_experiment(tree, cfg.shape, caps, cfg.sequences, cfg.steps, cfg.seed),
        "closedness": lambda: approx.closedness_experiment(tree, cfg.shape, caps, cfg.sequences, cfg.steps, cfg.seed),
        "truncation": lambda: truncation_records(cfg, tree),
    }
    for name, job in jobs.items():
        start = time.perf_counter()
        records = list(job())
        write_lines(args.out / f"{name}.jsonl", records)
        failed = sum(1 for r in records if r.get("pass") is False)
        print(json.dumps({"experiment": name, "records": len(records), "failed": failed,
                          "seconds": round(time.perf_counter() - start, 2)}))


if __name__ == "__main__":
    main()
