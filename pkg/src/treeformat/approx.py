"""Approximation in the set of tree tensors with bounded ranks.

All residuals are Frobenius norms. ``als_refine`` updates one vertex at a time
by linear least squares and re-orthonormalizes the updated vertex into its
parent, so the sequence of sweep residuals is non-increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .dense import DEFAULT_REL_TOL
from .dtree import DimensionTree, Vertex, vertex_key
from .errors import InvalidRanks, ShapeMismatch
from .minsub import as_rank_tuple, in_FT, necessary_violations, tree_rank
from .ttn import (
    TreeTensor,
    environment,
    evaluate,
    hsvd_with_info,
    push_to_parent,
    random_tree_tensor,
)

MONOTONE_SLACK = 1e-12


@dataclass
class ApproxResult:
    approximant: TreeTensor
    residual: float
    iterations: int = 0
    restarts_used: int = 0
    discarded: dict[Vertex, list[float]] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)
    histories: list[list[float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def monotone_violations(self, slack: float = MONOTONE_SLACK) -> int:
        runs = self.histories or [self.history]
        return sum(1 for h in runs for a, b in zip(h, h[1:]) if b > a + slack)

    def bound(self) -> float:
        """Square root of the total discarded singular-value energy."""
        return math.sqrt(sum(float(np.sum(np.square(s))) for s in self.discarded.values()))

    def summary(self) -> dict:
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "ranks": self.approximant.ranks.as_keys(),
            "discarded": {vertex_key(a): list(map(float, s)) for a, s in self.discarded.items()},
            "warnings": list(self.warnings),
        }


def residual(target, t: TreeTensor) -> float:
    return dense.frobenius_norm(np.asarray(target) - evaluate(t))


def _check_caps(target: np.ndarray, tree: DimensionTree, ranks):
    caps = as_rank_tuple(tree, ranks)
    if target.ndim != tree.d:
        raise ShapeMismatch(f"tensor has {target.ndim} modes, tree has {tree.d}")
    if caps[tree.root] != 1 or any(r < 1 for r in caps.ranks.values()):
        raise InvalidRanks("rank caps must be positive with root rank 1", tree.root)
    violated = necessary_violations(tree, target.shape, caps)
    if violated:
        a, msg = violated[0]
        raise InvalidRanks(msg, a)
    return caps


def truncate(v, tree: DimensionTree, ranks, rel_tol: float = DEFAULT_REL_TOL) -> ApproxResult:
    """Hierarchical SVD truncated to ``ranks``; returns the per-node discarded spectra."""
    v = dense.as_tensor(v)
    caps = _check_caps(v, tree, ranks)
    t, info = hsvd_with_info(v, tree, caps=caps, rel_tol=rel_tol)
    res = residual(v, t)
    return ApproxResult(t, res, discarded={a: list(map(float, s)) for a, s in info.discarded.items()},
                        history=[res], warnings=list(info.warnings))


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(a, b, rcond=None)[0]


def als_refine(target, init: TreeTensor, max_iters: int = 50, stall_tol: float = 1e-10) -> ApproxResult:
    """Alternating least squares over the parameters of ``init``.

    One sweep visits the vertices leaves-to-root. Stops after ``max_iters``
    sweeps or when a sweep improves the residual by less than
    ``stall_tol * ||target||``. The best iterate (possibly ``init`` itself) is
    returned.
    """
    target = dense.as_tensor(target)
    if target.shape != init.shape:
        raise ShapeMismatch(f"target shape {target.shape} differs from {init.shape}")
    tree = init.tree
    tnorm = dense.frobenius_norm(target)
    res0 = residual(target, init)
    history = [res0]
    best, best_res = init, res0
    if init.ranks[tree.root] == 0 or res0 <= stall_tol * tnorm:
        return ApproxResult(init, res0, 0, 1, history=history, histories=[history])

    params = {a: init.param(a).copy() for a in tree.vertices}
    order = tree.traversal("leaves-to-root")
    flat = target.ravel()
    sweeps = 0
    for _ in range(max_iters):
        sweeps += 1
        for a in order:
            cur = init.with_params(params)
            if tree.is_leaf(a):
                y = environment(cur, a)
                m = dense.matricize(target, a).matrix
                params[a] = _solve(y, m.T).T
            else:
                e = environment(cur, a)
                params[a] = _solve(e, flat).reshape(params[a].shape)
            if a != tree.root:
                push_to_parent(cur, a, params)
        cur = init.with_params(params, orthonormal_leaves=True, orthonormal_cores=True)
        res = residual(target, cur)
        prev = history[-1]
        history.append(res)
        if res < best_res:
            best, best_res = cur, res
        if prev - res < stall_tol * tnorm:
            break
    return ApproxResult(best, best_res, sweeps, 1, history=history, histories=[history])


def best_approx(target, tree: DimensionTree, ranks, restarts: int = 4, seed: int = 0,
                max_iters: int = 50, stall_tol: float = 1e-10) -> ApproxResult:
    """Multi-start ALS: one run from the truncation, ``restarts - 1`` from random tree tensors.

    The result never has a larger residual than the truncation itself.
    """
    target = dense.as_tensor(target)
    if restarts < 1:
        raise ValueError("restarts must be positive")
    caps = _check_caps(target, tree, ranks)
    start = truncate(target, tree, caps)
    runs = [als_refine(target, start.approximant, max_iters, stall_tol)]
    for k in range(1, restarts):
        init = random_tree_tensor(tree, target.shape, caps, seed=seed + k)
        runs.append(als_refine(target, init, max_iters, stall_tol))
    # min() keeps the first of equal residuals, i.e. the lowest restart index
    best = min(runs, key=lambda r: r.residual)
    return ApproxResult(
        best.approximant,
        best.residual,
        iterations=best.iterations,
        restarts_used=restarts,
        discarded=start.discarded,
        history=best.history,
        histories=[r.history for r in runs],
        warnings=start.warnings,
    )


# ---- injective norm ------------------------------------------------------------


def _partial(v: np.ndarray, vecs: list[np.ndarray], j: int) -> np.ndarray:
    """Contract every mode except ``j`` with the given vectors."""
    out = v
    for k in range(v.ndim - 1, -1, -1):
        if k != j:
            out = np.tensordot(out, vecs[k], axes=(k, 0))
    return out


@dataclass
class InjectiveNormEstimate:
    estimate: float
    witness: list[np.ndarray]
    per_restart: list[float]


def injective_norm(v, restarts: int = 8, iters: int = 200, seed: int = 0, tol: float = 1e-15) -> InjectiveNormEstimate:
    """Lower bound on the injective norm by alternating rank-one power iterations.

    The first restart starts from the leading left singular vectors of the
    mode unfoldings, the others from random unit vectors. The estimate is the
    value attained by the returned unit witness vectors.
    """
    v = dense.as_tensor(v)
    if not np.any(v):
        raise ValueError("injective norm estimate requires a nonzero tensor")
    d = v.ndim
    rng = np.random.default_rng(seed)
    best_val, best_vecs, values = -1.0, None, []
    for k in range(max(1, restarts)):
        if k == 0:
            vecs = [np.linalg.svd(dense.matricize(v, (j + 1,)).matrix if d > 1 else v[:, None],
                                  full_matrices=False)[0][:, 0] for j in range(d)]
        else:
            vecs = [rng.standard_normal(n) for n in v.shape]
            vecs = [x / np.linalg.norm(x) for x in vecs]
        val = 0.0
        for _ in range(iters):
            for j in range(d):
                g = _partial(v, vecs, j)
                nrm = np.linalg.norm(g)
                if nrm > 0:
                    vecs[j] = g / nrm
            new = abs(float(_partial(v, vecs, 0) @ vecs[0]))
            done = abs(new - val) <= tol * new
            val = new
            if done:
                break
        values.append(val)
        if val > best_val:
            best_val, best_vecs = val, [x.copy() for x in vecs]
    if float(_partial(v, best_vecs, 0) @ best_vecs[0]) < 0:
        best_vecs[0] = -best_vecs[0]
    est = abs(dense.inner(v, dense.elementary(best_vecs)))
    return InjectiveNormEstimate(est, best_vecs, values)


# ---- convergence experiments ----------------------------------------------------


def _damped(t: TreeTensor, keep: dict[Vertex, int], eps: float) -> TreeTensor:
    """Scale, in each parent core, the slices of son ``a`` with index >= keep[a] by ``eps``."""
    tree = t.tree
    params = {a: t.param(a).copy() for a in tree.vertices}
    for a, s in keep.items():
        p = tree.parent[a]
        k = tree.sons[p].index(a)
        axis = k if p == tree.root else k + 1
        idx = [slice(None)] * params[p].ndim
        idx[axis] = slice(s, None)
        params[p][tuple(idx)] *= eps
    return t.with_params(params)


def _random_keep(t: TreeTensor, rng: np.random.Generator) -> dict[Vertex, int]:
    keep = {}
    for a in t.tree.vertices:
        if a == t.tree.root:
            continue
        r = t.ranks[a]
        if r >= 2 and rng.random() < 0.5:
            keep[a] = int(rng.integers(1, r))
    return keep


def lsc_check(limit, sequence, tree: DimensionTree, rel_tol: float = DEFAULT_REL_TOL) -> dict:
    """Compare the limit's ranks with the minimum ranks over the last half of ``sequence``."""
    sequence = list(sequence)
    tail = sequence[-math.ceil(len(sequence) / 2):]
    lim = tree_rank(limit, tree, rel_tol)
    tail_ranks = [tree_rank(x, tree, rel_tol) for x in tail]
    tail_min = {a: min(r[a] for r in tail_ranks) for a in tree.vertices}
    violations = [vertex_key(a) for a in tree.vertices if lim[a] > tail_min[a]]
    return {
        "limit_ranks": lim.as_keys(),
        "tail_min_ranks": {vertex_key(a): r for a, r in tail_min.items()},
        "violations": violations,
        "pass": not violations,
    }


def lsc_experiment(tree: DimensionTree, shape, ranks, num_sequences: int = 100, steps: int = 20,
                   seed: int = 0, rel_tol: float = DEFAULT_REL_TOL) -> list[dict]:
    """Rank lower semicontinuity along convergent sequences of fixed tree rank.

    Each sequence is a random tree tensor whose selected core slices are
    scaled by 1/n; the limit has those slices removed. Convergence is in norm.
    """
    caps = as_rank_tuple(tree, ranks)
    records = []
    for i in range(num_sequences):
        s = seed + i
        t = random_tree_tensor(tree, shape, caps, seed=s)
        keep = _random_keep(t, np.random.default_rng([s, 1]))
        seq = [evaluate(_damped(t, keep, 1.0 / n)) for n in range(1, steps + 1)]
        limit = evaluate(_damped(t, keep, 0.0))
        rec = {"id": i, "seed": s, "convergence": "norm", "damped": {vertex_key(a): k for a, k in keep.items()},
               "final_distance": dense.frobenius_norm(seq[-1] - limit)}
        rec.update(lsc_check(limit, seq, tree, rel_tol))
        records.append(rec)
    return records


def closedness_experiment(tree: DimensionTree, shape, ranks, num_sequences: int = 100, steps: int = 20,
                          seed: int = 0, rel_tol: float = DEFAULT_REL_TOL) -> list[dict]:
    """Limits of convergent sequences inside the bounded-rank set stay inside it.

    Sequence ``n`` uses the parameters ``P + P'/n`` where ``P`` is a random
    tree tensor (with some slices zeroed so the limit may drop rank) and
    ``P'`` an independent perturbation with the same ranks.
    """
    caps = as_rank_tuple(tree, ranks)
    records = []
    for i in range(num_sequences):
        s = seed + i
        base = random_tree_tensor(tree, shape, caps, seed=s)
        base = _damped(base, _random_keep(base, np.random.default_rng([s, 2])), 0.0)
        pert = random_tree_tensor(tree, shape, caps, seed=s + 7919)
        seq_in_set = True
        distances = []
        limit = evaluate(base)
        for n in range(1, steps + 1):
            params = {a: base.param(a) + pert.param(a) / n for a in tree.vertices}
            vn = evaluate(base.with_params(params))
            seq_in_set &= in_FT(vn, tree, caps, "bounded", rel_tol)
            distances.append(dense.frobenius_norm(vn - limit))
        lim_ranks = tree_rank(limit, tree, rel_tol)
        member = in_FT(limit, tree, caps, "bounded", rel_tol)
        records.append({
            "id": i,
            "seed": s,
            "convergence": "norm",
            "limit_ranks": lim_ranks.as_keys(),
            "strictly_lower": lim_ranks != caps,
            "sequence_in_set": bool(seq_in_set),
            "final_distance": distances[-1],
            "pass": bool(member),
        })
    return records
