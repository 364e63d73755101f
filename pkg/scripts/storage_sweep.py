"""Parameter counts of exact tree representations across tree families.

For sums of k elementary terms on n^d, compress with each family and report
the tree-based ranks and the storage ratio against the dense array.

    python3 scripts/storage_sweep.py --d 6 --n 4 --terms 1 2 3
"""

from __future__ import annotations

import argparse
import json

import numpy as np

from treeformat import dense, ttn
from treeformat.dtree import balanced_tree, linear_tree, tucker_tree


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--terms", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    shape = (args.n,) * args.d
    for k in args.terms:
        v = sum(dense.elementary([rng.standard_normal(args.n) for _ in shape]) for _ in range(k))
        for family in (tucker_tree, linear_tree, balanced_tree):
            t = ttn.hsvd(v, family(args.d))
            err = dense.frobenius_norm(ttn.evaluate(t) - v) / dense.frobenius_norm(v)
            rep = ttn.storage_report(t)
            print(json.dumps({"terms": k, "tree": family.__name__.removesuffix("_tree"),
                              "max_rank": max(t.ranks.ranks.values()), "parameters": rep["parameters"],
                              "dense": rep["dense"], "ratio": round(rep["ratio"], 5), "rel_error": err}))


if __name__ == "__main__":
    main()
