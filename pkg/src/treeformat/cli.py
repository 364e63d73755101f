"""Command-line front end.

Results go to files (``--out``) or as a single JSON object on stdout.
Diagnostics are JSON on stderr. Exit codes: 0 ok, 1 a verification record
failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import approx, dense, minsub, ttn
from .dtree import DimensionTree, parse_vertex_key, tree_from_arg, vertex_key
from .errors import InvalidRanks, TreeFormatError
from .minsub import RankTuple

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _diagnose("usage", message)
        sys.exit(EXIT_INPUT)


def _diagnose(kind: str, message: str, **extra) -> None:
    rec = {"error": kind, "message": message}
    rec.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(dense.dumps(rec))


def _say(args, text: str) -> None:
    if not args.quiet:
        sys.stderr.write(text.rstrip("\n") + "\n")


def default_seed() -> int:
    try:
        return int(os.environ.get("TT_SEED", "0"))
    except ValueError:
        return 0


# ---- io ----------------------------------------------------------------------


def write_json(path: str | None, obj) -> None:
    """Write canonical JSON atomically, or to stdout when ``path`` is None."""
    text = dense.dumps(obj)
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def file_kind(obj) -> str:
    if isinstance(obj, dict):
        if "leaf_bases" in obj:
            return "tree_tensor"
        if "values" in obj and "shape" in obj:
            return "dense"
        if "ranks" in obj and "tree" in obj:
            return "rank_tuple"
    raise InputError("unrecognized file: expected a dense tensor, tree tensor or rank tuple")


def load_dense(path: str) -> np.ndarray:
    obj = read_json(path)
    kind = file_kind(obj)
    if kind == "dense":
        return dense.dense_from_dict(obj)
    if kind == "tree_tensor":
        return ttn.evaluate(ttn.TreeTensor.from_dict(obj))
    raise InputError(f"{path} holds a {kind}, not a tensor")


def parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    except ValueError as exc:
        raise InputError(f"bad shape {text!r}") from exc
    if not shape or any(n < 1 for n in shape):
        raise InputError(f"mode sizes must be positive, got {text!r}")
    return shape


def parse_ranks(text: str, tree: DimensionTree) -> RankTuple:
    """``all:k,root:1`` (optionally ``leaves:k``) or per-vertex ``1:2;1 2:3;...``."""
    sep = ";" if ";" in text else ","
    ranks: dict = {}
    explicit: dict = {}
    for item in filter(None, (s.strip() for s in text.split(sep))):
        if ":" not in item:
            raise InputError(f"bad rank item {item!r}; expected key:value")
        key, val = (s.strip() for s in item.rsplit(":", 1))
        try:
            r = int(val)
        except ValueError as exc:
            raise InputError(f"bad rank value in {item!r}") from exc
        if key == "all":
            ranks.update({a: r for a in tree.vertices})
        elif key == "leaves":
            ranks.update({a: r for a in tree.leaves})
        elif key == "root":
            explicit[tree.root] = r
        else:
            try:
                a = parse_vertex_key(key)
            except TreeFormatError as exc:
                raise InputError(f"bad vertex key {key!r}") from exc
            if a not in tree:
                raise InputError(f"vertex {{{key}}} is not in tree {tree.render()}")
            explicit[a] = r
    ranks.update(explicit)
    if tree.root not in explicit:
        ranks[tree.root] = 1
    missing = [vertex_key(a) for a in tree.vertices if a not in ranks]
    if missing:
        raise InputError(f"no rank given for vertices {missing}")
    return RankTuple(tree, ranks)


# ---- commands ------------------------------------------------------------------


def cmd_gen(args) -> int:
    shape = parse_shape(args.shape)
    rng = np.random.default_rng(args.seed)
    if args.ranks is not None:
        if args.tree is None:
            raise InputError("--ranks requires --tree")
        tree = tree_from_arg(len(shape), args.tree)
        t = ttn.random_tree_tensor(tree, shape, parse_ranks(args.ranks, tree), seed=args.seed)
        write_json(args.out, t.to_dict())
        _say(args, f"tree tensor {shape} ranks {t.ranks.as_keys()}")
        return EXIT_OK
    if args.elementary:
        v = dense.elementary([rng.standard_normal(n) for n in shape])
    elif args.sum is not None:
        if args.sum < 1:
            raise InputError("--sum needs a positive term count")
        v = sum(dense.elementary([rng.standard_normal(n) for n in shape]) for _ in range(args.sum))
    else:
        v = rng.standard_normal(shape)
    write_json(args.out, dense.dense_to_dict(v))
    _say(args, f"dense tensor {shape}")
    return EXIT_OK


def cmd_compress(args) -> int:
    v = load_dense(args.input)
    tree = tree_from_arg(v.ndim, args.tree)
    caps = parse_ranks(args.ranks, tree) if args.ranks is not None else None
    t, info = ttn.hsvd_with_info(v, tree, tol=args.tol, caps=caps)
    write_json(args.out, t.to_dict())
    err = dense.frobenius_norm(v - ttn.evaluate(t)) / max(dense.frobenius_norm(v), np.finfo(float).tiny)
    if args.out is not None:
        write_json(None, {"ranks": t.ranks.as_keys(), "relative_error": err, "storage": ttn.storage_report(t),
                          "warnings": info.warnings})
    _say(args, f"compressed to ranks {t.ranks.as_keys()}, relative error {err:.3e}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    obj = read_json(args.input)
    if file_kind(obj) != "tree_tensor":
        raise InputError(f"{args.input} is not a tree tensor file")
    v = ttn.evaluate(ttn.TreeTensor.from_dict(obj))
    write_json(args.out, dense.dense_to_dict(v))
    _say(args, f"reconstructed dense tensor {v.shape}")
    return EXIT_OK


def cmd_rank(args) -> int:
    v = load_dense(args.input)
    tree = tree_from_arg(v.ndim, args.tree)
    out = minsub.tree_rank(v, tree).to_dict()
    if args.all_subsets:
        if v.ndim > minsub.MAX_SUBSET_MODES:
            raise InputError(f"--all-subsets is limited to d <= {minsub.MAX_SUBSET_MODES}")
        out["subsets"] = {vertex_key(a): r for a, r in minsub.subset_ranks(v).items()}
    write_json(args.out, out)
    return EXIT_OK


def _approx(args, use_als: bool) -> int:
    v = load_dense(args.input)
    tree = tree_from_arg(v.ndim, args.tree)
    caps = parse_ranks(args.ranks, tree)
    if use_als:
        res = approx.best_approx(v, tree, caps, restarts=args.restarts, seed=args.seed, max_iters=args.max_iters)
    else:
        res = approx.truncate(v, tree, caps)
    if args.out is not None:
        write_json(args.out, res.approximant.to_dict())
    summary = res.summary()
    summary["bound"] = res.bound()
    summary["target_norm"] = dense.frobenius_norm(v)
    write_json(None, summary)
    return EXIT_OK


def cmd_truncate(args) -> int:
    return _approx(args, use_als=False)


def cmd_approx(args) -> int:
    return _approx(args, use_als=True)


def cmd_norm(args) -> int:
    v = load_dense(args.input)
    est = approx.injective_norm(v, restarts=args.restarts, iters=args.iters, seed=args.seed)
    write_json(None, {"estimate": est.estimate, "frobenius": dense.frobenius_norm(v),
                      "witness": [w.tolist() for w in est.witness]})
    return EXIT_OK


SUITES = ("duality", "nestedness", "spans", "roundtrip")


def run_suite(v: np.ndarray, tree: DimensionTree, suite: str, seed: int = 0) -> list[dict]:
    records = []
    if suite == "duality":
        records = minsub.verify_rank_duality(v, tree, all_subsets=v.ndim <= minsub.MAX_SUBSET_MODES)
    elif suite == "nestedness":
        records = minsub.verify_nestedness(v, tree)
    elif suite == "spans":
        ranks = minsub.tree_rank(v, tree)
        k = 0
        for a in tree.interior:
            for b in tree.sons[a]:
                if ranks[b] == 0:
                    continue
                records.append(minsub.span_from_contractions(v, b, a, ranks[b] + 2, seed=seed + k))
                k += 1
    elif suite == "roundtrip":
        t = ttn.hsvd(v, tree)
        nrm = dense.frobenius_norm(v)
        err = dense.frobenius_norm(v - ttn.evaluate(t)) / nrm if nrm > 0 else 0.0
        records.append({"vertex": vertex_key(tree.root), "value": err, "threshold": 1e-10, "pass": err <= 1e-10})
        records.extend(ttn.minimality_report(t)["records"])
        same = ttn.core_ranks(t) == minsub.tree_rank(v, tree)
        records.append({"vertex": "core_ranks", "value": same, "threshold": True, "pass": bool(same)})
    else:
        raise InputError(f"unknown suite {suite!r}")
    for r in records:
        r["suite"] = suite
    return records


def cmd_verify(args) -> int:
    v = load_dense(args.input)
    tree = tree_from_arg(v.ndim, args.tree)
    suites = SUITES if args.suite == "all" else (args.suite,)
    records = [r for s in suites for r in run_suite(v, tree, s, args.seed)]
    ok = all(r["pass"] for r in records)
    write_json(args.out, {"pass": ok, "records": records})
    _say(args, f"{sum(not r['pass'] for r in records)} of {len(records)} checks failed")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_info(args) -> int:
    obj = read_json(args.input)
    kind = file_kind(obj)
    out: dict = {"kind": kind}
    if kind == "dense":
        v = dense.dense_from_dict(obj)
        out.update(shape=list(v.shape), frobenius=dense.frobenius_norm(v))
    elif kind == "tree_tensor":
        t = ttn.TreeTensor.from_dict(obj)
        v = ttn.evaluate(t)
        out.update(shape=list(t.shape), tree=t.tree.render(), ranks=t.ranks.as_keys(), flags=dict(t.flags),
                   storage=ttn.storage_report(t), depth=t.tree.depth(), frobenius=dense.frobenius_norm(v))
    else:
        rt = RankTuple.from_dict(obj)
        out.update(tree=rt.tree.render(), ranks=rt.as_keys())
        v = None
    if args.compare is not None:
        if v is None:
            raise InputError("--compare needs a tensor file")
        w = load_dense(args.compare)
        if w.shape != v.shape:
            raise InputError(f"cannot compare shapes {v.shape} and {w.shape}")
        nrm = dense.frobenius_norm(v)
        diff = dense.frobenius_norm(v - w)
        out["compare"] = {"absolute_error": diff, "relative_error": diff / nrm if nrm > 0 else diff}
    write_json(None, out)
    return EXIT_OK


# ---- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treeformat", description="Tree-based tensor formats: compression, ranks and approximation.")
    p.add_argument("--quiet", action="store_true", help="suppress human-readable summaries on stderr")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int, default=default_seed())
        return sp

    g = add("gen", cmd_gen, "generate a random dense or tree tensor")
    g.add_argument("--shape", required=True)
    g.add_argument("--tree")
    kind = g.add_mutually_exclusive_group()
    kind.add_argument("--ranks")
    kind.add_argument("--elementary", action="store_true")
    kind.add_argument("--sum", type=int)
    g.add_argument("--out")

    c = add("compress", cmd_compress, "hierarchical SVD of a dense tensor")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--tree", required=True)
    c.add_argument("--tol", type=float, default=0.0)
    c.add_argument("--ranks")
    c.add_argument("--out")

    r = add("reconstruct", cmd_reconstruct, "evaluate a tree tensor file to a dense file")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out")

    k = add("rank", cmd_rank, "tree-based rank of a tensor")
    k.add_argument("--in", dest="input", required=True)
    k.add_argument("--tree", required=True)
    k.add_argument("--all-subsets", action="store_true")
    k.add_argument("--out")

    for name, func in (("truncate", cmd_truncate), ("approx", cmd_approx)):
        a = add(name, func, f"{name} to bounded tree-based rank")
        a.add_argument("--in", dest="input", required=True)
        a.add_argument("--tree", required=True)
        a.add_argument("--ranks", required=True)
        a.add_argument("--restarts", type=int, default=4)
        a.add_argument("--max-iters", type=int, default=50)
        a.add_argument("--out")

    n = add("norm", cmd_norm, "injective norm estimate")
    n.add_argument("--in", dest="input", required=True)
    n.add_argument("--restarts", type=int, default=8)
    n.add_argument("--iters", type=int, default=200)

    v = add("verify", cmd_verify, "run structural verification suites")
    v.add_argument("--in", dest="input", required=True)
    v.add_argument("--tree", required=True)
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--out", help="write the report here instead of stdout")

    i = add("info", cmd_info, "describe a file")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--compare")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "quiet"):
        args.quiet = False
    try:
        return args.func(args)
    except InvalidRanks as exc:
        _diagnose("invalid_ranks", str(exc), vertex=vertex_key(exc.vertex) if exc.vertex else None)
    except (InputError, TreeFormatError, ValueError) as exc:
        _diagnose(type(exc).__name__, str(exc))
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
