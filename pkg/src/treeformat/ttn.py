"""Tree tensors: leaf bases, transfer cores and a root core over a dimension tree.

Core layout: a transfer core for vertex ``mu`` has axes
``(r_mu, r_son1, ..., r_sonk)`` with sons in canonical order; the root core has
axes ``(r_son1, ..., r_sonk)`` over the root's sons. Contractions use
``np.einsum`` with integer labels: mode ``j`` gets label ``j - 1`` and the rank
index of the k-th vertex (root-to-leaves order) gets label ``d + k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import dense
from .dense import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, numerical_rank
from .dtree import DimensionTree, Vertex, build_tree, parse_vertex_key, vertex_key
from .errors import InvalidRanks, ShapeMismatch, TreeFormatError
from .minsub import RankTuple, as_rank_tuple, necessary_violations, unfolding_svd

ORTHO_TOL = 1e-12
TIE_TOL = 1e-12

_FLAG_NAMES = ("orthonormal_leaves", "orthonormal_cores", "minimal")


@dataclass(frozen=True, eq=False)
class TreeTensor:
    tree: DimensionTree
    shape: tuple[int, ...]
    ranks: RankTuple
    leaf_bases: Mapping[Vertex, np.ndarray]
    transfer_cores: Mapping[Vertex, np.ndarray]
    root_core: np.ndarray
    flags: Mapping[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        tree = self.tree
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "ranks", as_rank_tuple(tree, self.ranks))
        object.__setattr__(self, "flags", {k: bool(self.flags.get(k, False)) for k in _FLAG_NAMES})
        if len(shape) != tree.d or any(n < 1 for n in shape):
            raise ShapeMismatch(f"shape {shape} does not fit a tree over {tree.d} modes")
        if tree.d < 2:
            raise ShapeMismatch("tree tensors need at least two modes")
        r = self.ranks.ranks
        if r[tree.root] not in (0, 1):
            raise InvalidRanks("root rank must be 0 or 1", tree.root)
        leaves = {tuple(k): np.asarray(b, dtype=np.float64) for k, b in self.leaf_bases.items()}
        cores = {tuple(k): np.asarray(c, dtype=np.float64) for k, c in self.transfer_cores.items()}
        root_core = np.asarray(self.root_core, dtype=np.float64)
        if set(leaves) != set(tree.leaves):
            raise ShapeMismatch("leaf bases must be given for every leaf")
        expected_cores = {a for a in tree.interior if a != tree.root}
        if set(cores) != expected_cores:
            raise ShapeMismatch(f"transfer cores expected for {sorted(expected_cores)}, got {sorted(cores)}")
        for a, b in leaves.items():
            if b.shape != (shape[a[0] - 1], r[a]):
                raise ShapeMismatch(f"leaf basis {{{a[0]}}} has shape {b.shape}, expected {(shape[a[0] - 1], r[a])}")
        for a, c in cores.items():
            want = (r[a],) + tuple(r[s] for s in tree.sons[a])
            if c.shape != want:
                raise ShapeMismatch(f"core {{{vertex_key(a)}}} has shape {c.shape}, expected {want}")
        want = tuple(r[s] for s in tree.sons[tree.root])
        if root_core.shape != want:
            raise ShapeMismatch(f"root core has shape {root_core.shape}, expected {want}")
        for arr in [root_core, *leaves.values(), *cores.values()]:
            if not np.all(np.isfinite(arr)):
                raise TreeFormatError("tree tensor has non-finite parameters")
        object.__setattr__(self, "leaf_bases", leaves)
        object.__setattr__(self, "transfer_cores", cores)
        object.__setattr__(self, "root_core", root_core)

    @property
    def d(self) -> int:
        return self.tree.d

    def param(self, a: Vertex) -> np.ndarray:
        """Parameter array stored at vertex ``a``."""
        if a == self.tree.root:
            return self.root_core
        if self.tree.is_leaf(a):
            return self.leaf_bases[a]
        return self.transfer_cores[a]

    def with_params(self, updates: Mapping[Vertex, np.ndarray], **flags) -> "TreeTensor":
        leaves = dict(self.leaf_bases)
        cores = dict(self.transfer_cores)
        root = self.root_core
        for a, x in updates.items():
            if a == self.tree.root:
                root = x
            elif self.tree.is_leaf(a):
                leaves[a] = x
            else:
                cores[a] = x
        new_flags = {k: False for k in _FLAG_NAMES}
        new_flags.update(flags)
        return replace(self, leaf_bases=leaves, transfer_cores=cores, root_core=root, flags=new_flags)

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.render(),
            "shape": list(self.shape),
            "ranks": self.ranks.as_keys(),
            "leaf_bases": {str(a[0]): self.leaf_bases[a].tolist() for a in self.tree.leaves},
            "transfer_cores": {vertex_key(a): _array_record(c) for a, c in self.transfer_cores.items()},
            "root_core": _array_record(self.root_core),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TreeTensor":
        try:
            shape = tuple(int(n) for n in obj["shape"])
            tree = build_tree(len(shape), obj["tree"])
            ranks = RankTuple(tree, {parse_vertex_key(k): int(r) for k, r in obj["ranks"].items()})
            leaves = {}
            for k, rows in obj["leaf_bases"].items():
                j = int(k)
                b = np.asarray(rows, dtype=np.float64)
                if b.size == 0:
                    b = b.reshape(shape[j - 1] if 1 <= j <= len(shape) else 0, 0)
                leaves[(j,)] = b
            cores = {parse_vertex_key(k): _array_from_record(rec) for k, rec in obj["transfer_cores"].items()}
            root = _array_from_record(obj["root_core"])
            flags = dict(obj.get("flags", {}))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TreeFormatError):
                raise
            raise TreeFormatError(f"malformed tree tensor record: {exc}") from exc
        return cls(tree, shape, ranks, leaves, cores, root, flags)


def _array_record(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": [float(x) for x in a.ravel()]}


def _array_from_record(rec: Mapping) -> np.ndarray:
    shape = [int(n) for n in rec["shape"]]
    values = np.asarray(rec["values"], dtype=np.float64)
    if values.size != math.prod(shape):
        raise ShapeMismatch(f"{values.size} values for array shape {shape}")
    return values.reshape(shape)


# ---- contraction plumbing ---------------------------------------------------


def _labels(tree: DimensionTree) -> dict[Vertex, int]:
    return {a: tree.d + k for k, a in enumerate(tree.vertices)}


def _param_labels(tree: DimensionTree, a: Vertex, lab: Mapping[Vertex, int]) -> list[int]:
    if a == tree.root:
        return [lab[s] for s in tree.sons[a]]
    if tree.is_leaf(a):
        return [a[0] - 1, lab[a]]
    return [lab[a]] + [lab[s] for s in tree.sons[a]]


def _subtree(tree: DimensionTree, a: Vertex) -> list[Vertex]:
    out, stack = [], [a]
    while stack:
        b = stack.pop()
        out.append(b)
        stack.extend(tree.sons[b])
    return out


_PATHS: dict = {}


def _einsum(operands: list[tuple[np.ndarray, list[int]]], out: list[int]) -> np.ndarray:
    args = []
    for arr, labels in operands:
        args.extend([arr, labels])
    args.append(out)
    # path search dominates at desk scale; cache it per shape/label signature
    key = (tuple((arr.shape, tuple(labels)) for arr, labels in operands), tuple(out))
    path = _PATHS.get(key)
    if path is None:
        path = np.einsum_path(*args, optimize="greedy")[0]
        if len(_PATHS) < 4096:
            _PATHS[key] = path
    return np.einsum(*args, optimize=path)


def evaluate(t: TreeTensor) -> np.ndarray:
    """Dense tensor represented by ``t`` (modes ordered 1..d)."""
    tree = t.tree
    lab = _labels(tree)
    ops = [(t.param(a), _param_labels(tree, a, lab)) for a in tree.vertices]
    return _einsum(ops, list(range(tree.d)))


def vertex_frame(t: TreeTensor, a: Vertex) -> np.ndarray:
    """Matrix whose columns are the basis vectors the subtree under ``a`` produces.

    Rows follow the sorted modes of ``a`` in row-major order. For the root this
    is the flattened tensor as a single column.
    """
    tree = t.tree
    lab = _labels(tree)
    if a == tree.root:
        return evaluate(t).reshape(-1, 1)
    ops = [(t.param(b), _param_labels(tree, b, lab)) for b in _subtree(tree, a)]
    x = _einsum(ops, [j - 1 for j in a] + [lab[a]])
    return x.reshape(-1, t.ranks[a])


def environment(t: TreeTensor, a: Vertex) -> np.ndarray:
    """Linear map from the parameters at ``a`` to the flattened dense tensor.

    For a leaf the map acts on the rank index only: the result has shape
    ``(prod of other mode sizes, r_a)`` with the remaining modes in sorted order.
    Otherwise the result has shape ``(prod(shape), param.size)``.
    """
    tree = t.tree
    lab = _labels(tree)
    ops = [(t.param(b), _param_labels(tree, b, lab)) for b in tree.vertices if b != a]
    if tree.is_leaf(a):
        out = [j for j in range(tree.d) if j != a[0] - 1] + [lab[a]]
        return _einsum(ops, out).reshape(-1, t.ranks[a])
    plabels = _param_labels(tree, a, lab)
    e = _einsum(ops, list(range(tree.d)) + plabels)
    return e.reshape(math.prod(t.shape), -1)


# ---- construction -----------------------------------------------------------


def zero_tree_tensor(tree: DimensionTree, shape) -> TreeTensor:
    shape = tuple(int(n) for n in shape)
    ranks = RankTuple(tree, {a: 0 for a in tree.vertices})
    leaves = {a: np.zeros((shape[a[0] - 1], 0)) for a in tree.leaves}
    cores = {a: np.zeros((0,) * (1 + len(tree.sons[a]))) for a in tree.interior if a != tree.root}
    root = np.zeros((0,) * len(tree.sons[tree.root]))
    return TreeTensor(tree, shape, ranks, leaves, cores, root,
                      {"orthonormal_leaves": True, "orthonormal_cores": True, "minimal": True})


@dataclass
class HsvdInfo:
    singular_values: dict[Vertex, np.ndarray]
    discarded: dict[Vertex, np.ndarray]
    warnings: list[str]

    def discarded_energy(self) -> float:
        return float(sum(np.sum(s ** 2) for s in self.discarded.values()))


def hsvd_with_info(v, tree: DimensionTree, tol: float = 0.0, caps=None,
                   rel_tol: float = DEFAULT_REL_TOL) -> tuple[TreeTensor, HsvdInfo]:
    """Hierarchical SVD with per-node spectra.

    Every non-root vertex keeps the leading left singular vectors of the
    unfolding of ``v``; the kept count is the numerical rank at relative
    tolerance ``max(tol, rel_tol)``, clipped by ``caps`` and by the product of
    the sons' kept ranks. Transfer cores are the coordinates of each vertex
    basis in the Kronecker product of its sons' bases.
    """
    v = dense.as_tensor(v)
    if v.ndim != tree.d:
        raise ShapeMismatch(f"tensor has {v.ndim} modes, tree has {tree.d}")
    cap = as_rank_tuple(tree, caps) if caps is not None else None
    nonzero = dense.frobenius_norm(v) > 0.0
    if cap is not None and nonzero and cap[tree.root] != 1:
        raise InvalidRanks("root cap must be 1 for a nonzero tensor", tree.root)
    info = HsvdInfo({}, {}, [])
    if not nonzero:
        return zero_tree_tensor(tree, v.shape), info

    node_tol = max(tol, rel_tol)
    bases: dict[Vertex, np.ndarray] = {}
    ranks: dict[Vertex, int] = {tree.root: 1}
    for a in tree.traversal("leaves-to-root"):
        if a == tree.root:
            continue
        u, s = unfolding_svd(v, a)
        r = numerical_rank(s, node_tol)
        if cap is not None:
            r = min(r, cap[a])
        if tree.sons[a]:
            r = min(r, math.prod(ranks[b] for b in tree.sons[a]))
        if 0 < r < s.size and s[r - 1] - s[r] <= TIE_TOL * s[0] and s[r] > node_tol * s[0]:
            info.warnings.append(f"boundary_tie at {{{vertex_key(a)}}}: sigma_{r} ~ sigma_{r + 1} = {s[r]:.3e}")
        ranks[a] = r
        bases[a] = dense.sign_normalize(u[:, :r])
        info.singular_values[a] = s
        info.discarded[a] = s[r:]

    if any(r == 0 for r in ranks.values()):
        return zero_tree_tensor(tree, v.shape), info

    lab = _labels(tree)

    def framed(a):
        return bases[a].reshape([v.shape[j - 1] for j in a] + [ranks[a]]), [j - 1 for j in a] + [lab[a]]

    cores = {}
    for a in tree.interior:
        if a == tree.root:
            continue
        ops = [framed(a)] + [framed(s) for s in tree.sons[a]]
        cores[a] = _einsum(ops, [lab[a]] + [lab[s] for s in tree.sons[a]])
    root_ops = [(v, list(range(tree.d)))] + [framed(s) for s in tree.sons[tree.root]]
    root_core = _einsum(root_ops, [lab[s] for s in tree.sons[tree.root]])
    leaves = {a: bases[a] for a in tree.leaves}
    t = TreeTensor(tree, v.shape, ranks, leaves, cores, root_core, {"orthonormal_leaves": True})
    flags = {
        "orthonormal_leaves": True,
        "orthonormal_cores": _cores_orthonormal(t),
        "minimal": minimality_report(t, rel_tol)["minimal"],
    }
    return replace(t, flags=flags), info


def hsvd(v, tree: DimensionTree, tol: float = 0.0, caps=None, rel_tol: float = DEFAULT_REL_TOL) -> TreeTensor:
    return hsvd_with_info(v, tree, tol, caps, rel_tol)[0]


def random_tree_tensor(tree: DimensionTree, shape, ranks, seed: int = 0) -> TreeTensor:
    """Gaussian tree tensor with orthonormalized leaf bases; deterministic in ``seed``."""
    shape = tuple(int(n) for n in shape)
    rt = as_rank_tuple(tree, ranks)
    if any(r < 1 for r in rt.ranks.values()) or rt[tree.root] != 1:
        raise InvalidRanks("random tree tensors need positive ranks with root rank 1")
    violated = necessary_violations(tree, shape, rt)
    if violated:
        a, msg = violated[0]
        raise InvalidRanks(msg, a)
    rng = np.random.default_rng(seed)
    r = rt.ranks
    leaves, cores = {}, {}
    root_core = None
    for a in tree.traversal("leaves-to-root"):
        if tree.is_leaf(a):
            q, rr = np.linalg.qr(rng.standard_normal((shape[a[0] - 1], r[a])))
            leaves[a] = q * np.where(np.diag(rr) < 0, -1.0, 1.0)
        elif a == tree.root:
            root_core = rng.standard_normal(tuple(r[s] for s in tree.sons[a]))
        else:
            cores[a] = rng.standard_normal((r[a],) + tuple(r[s] for s in tree.sons[a]))
    t = TreeTensor(tree, shape, rt, leaves, cores, root_core, {"orthonormal_leaves": True})
    return replace(t, flags={"orthonormal_leaves": True, "minimal": minimality_report(t)["minimal"]})


# ---- basis changes and rank extraction --------------------------------------


def _core_matrix(core: np.ndarray) -> np.ndarray:
    """Matricization of a transfer core with rows indexed by its parent rank index."""
    return core.reshape(core.shape[0], -1)


def _cores_orthonormal(t: TreeTensor, tol: float = ORTHO_TOL) -> bool:
    for c in t.transfer_cores.values():
        m = _core_matrix(c)
        if m.size and not np.allclose(m @ m.T, np.eye(m.shape[0]), atol=tol, rtol=0):
            return False
    return True


def _absorb(core: np.ndarray, axis: int, r: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.tensordot(r, core, axes=(1, axis)), 0, axis)


def _son_axis(tree: DimensionTree, a: Vertex) -> tuple[Vertex, int]:
    p = tree.parent[a]
    k = tree.sons[p].index(a)
    return p, (k if p == tree.root else k + 1)


def _positive_qr(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(x)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs, signs[:, None] * r


def push_to_parent(t: TreeTensor, a: Vertex, params: dict) -> None:
    """Orthonormalize the parameter at non-root ``a`` in ``params`` and absorb the factor into its parent."""
    tree = t.tree
    x = params[a]
    if tree.is_leaf(a):
        mat = x
    else:
        mat = _core_matrix(x).T
    if mat.shape[1] > mat.shape[0]:
        raise InvalidRanks(f"rank {mat.shape[1]} at {{{vertex_key(a)}}} exceeds the {mat.shape[0]} available directions", a)
    q, r = _positive_qr(mat)
    params[a] = q if tree.is_leaf(a) else q.T.reshape(x.shape)
    p, axis = _son_axis(tree, a)
    params[p] = _absorb(params[p], axis, r)


def orthogonalize(t: TreeTensor) -> TreeTensor:
    """Leaves-to-root QR sweep; the represented tensor is unchanged."""
    tree = t.tree
    if t.ranks[tree.root] == 0:
        return replace(t, flags={**t.flags, "orthonormal_leaves": True, "orthonormal_cores": True})
    params = {a: t.param(a).copy() for a in tree.vertices}
    for a in tree.traversal("leaves-to-root"):
        if a != tree.root:
            push_to_parent(t, a, params)
    return t.with_params(params, orthonormal_leaves=True, orthonormal_cores=True, minimal=t.flags["minimal"])


def minimality_report(t: TreeTensor, rel_tol: float = DEFAULT_REL_TOL) -> dict:
    """Matricization ranks of the cores against the stored ranks.

    Transfer core of ``mu``: rank of the unfolding on its parent index must be
    ``r_mu``. Root core: rank of the unfolding on each son index must be that
    son's rank.
    """
    tree = t.tree
    records = []
    for a in tree.interior:
        if a == tree.root:
            continue
        got = dense.matrix_rank(_core_matrix(t.transfer_cores[a]), rel_tol)
        records.append({"vertex": vertex_key(a), "value": got, "expected": t.ranks[a], "pass": got == t.ranks[a]})
    root = t.root_core
    for k, s in enumerate(tree.sons[tree.root]):
        m = np.moveaxis(root, k, 0).reshape(root.shape[k], -1) if root.size else np.zeros((0, 0))
        got = dense.matrix_rank(m, rel_tol)
        records.append({"vertex": vertex_key(s), "value": got, "expected": t.ranks[s], "pass": got == t.ranks[s],
                        "core": "root"})
    return {"records": records, "minimal": all(r["pass"] for r in records)}


def core_ranks(t: TreeTensor, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> RankTuple:
    """Tree-based rank of the represented tensor, computed from the cores alone.

    After orthogonalization every vertex frame is orthonormal, so the
    singular values of each unfolding of the dense tensor equal those of a
    small coefficient matrix. These matrices are propagated root-to-leaves.
    """
    tree = t.tree
    if not (t.flags["orthonormal_leaves"] and t.flags["orthonormal_cores"]):
        t = orthogonalize(t)
    ranks = {a: 0 for a in tree.vertices}
    if t.ranks[tree.root] == 0 or not np.any(t.root_core):
        return RankTuple(tree, ranks)
    ranks[tree.root] = int(float(np.linalg.norm(t.root_core)) > abs_tol)
    # factor[a] has shape (r_a, k): coefficient matrix of the unfolding at a, up to an orthogonal factor
    factor: dict[Vertex, np.ndarray] = {}

    def split(w: np.ndarray, sons: tuple[Vertex, ...], offset: int) -> None:
        for k, s in enumerate(sons):
            m = np.moveaxis(w, k + offset, 0).reshape(w.shape[k + offset], -1)
            u, sv, _ = np.linalg.svd(m, full_matrices=False)
            ranks[s] = numerical_rank(sv, rel_tol, abs_tol)
            factor[s] = u * sv

    split(t.root_core, tree.sons[tree.root], 0)
    for a in tree.vertices:
        if a == tree.root or tree.is_leaf(a):
            continue
        w = np.tensordot(factor[a], t.transfer_cores[a], axes=(0, 0))
        split(w, tree.sons[a], 1)
    return RankTuple(tree, ranks)


def storage_report(t: TreeTensor) -> dict:
    r = t.ranks
    tree = t.tree
    params = sum(t.shape[a[0] - 1] * r[a] for a in tree.leaves)
    params += sum(r[a] * math.prod(r[s] for s in tree.sons[a]) for a in tree.interior if a != tree.root)
    params += math.prod(r[s] for s in tree.sons[tree.root])
    dense_count = math.prod(t.shape)
    return {"parameters": params, "dense": dense_count, "ratio": params / dense_count}
