"""Minimal subspaces, tree-based ranks and the checks built on them.

In finite dimensions the minimal subspace of ``v`` for a vertex ``a`` is the
column space of the matricization with rows ``a``; its dimension is the
numerical rank of that unfolding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import dense
from .dense import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, Functional, complement, numerical_rank, rank_threshold
from .dtree import DimensionTree, Vertex, build_tree, parse_vertex_key, vertex, vertex_key
from .errors import InvalidRanks, InvalidVertex, ShapeMismatch

PROJECTOR_TOL = 1e-8
NESTEDNESS_TOL = 1e-10
# singular values within this factor of the rank threshold make a rank decision fragile
SENSITIVITY_FACTOR = 10.0
MAX_SUBSET_MODES = 5


@dataclass(frozen=True)
class SubspaceBasis:
    vertex: Vertex
    basis: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True)
class RankTuple:
    tree: DimensionTree
    ranks: Mapping[Vertex, int] = field(hash=False)

    def __post_init__(self):
        ranks = {}
        for a, r in self.ranks.items():
            a = parse_vertex_key(a) if isinstance(a, str) else vertex(a)
            ranks[a] = int(r)
        missing = set(self.tree.vertices) - set(ranks)
        extra = set(ranks) - set(self.tree.vertices)
        if missing or extra:
            raise InvalidRanks(f"rank tuple does not match tree: missing {sorted(missing)}, extra {sorted(extra)}")
        if any(r < 0 for r in ranks.values()):
            raise InvalidRanks("ranks must be non-negative")
        object.__setattr__(self, "ranks", {a: ranks[a] for a in self.tree.vertices})

    def __getitem__(self, a) -> int:
        return self.ranks[vertex(a)]

    def __le__(self, other: "RankTuple") -> bool:
        return all(self.ranks[a] <= other.ranks[a] for a in self.tree.vertices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RankTuple):
            return NotImplemented
        return self.tree == other.tree and dict(self.ranks) == dict(other.ranks)

    def as_keys(self) -> dict[str, int]:
        return {vertex_key(a): r for a, r in self.ranks.items()}

    def to_dict(self) -> dict:
        return {"tree": self.tree.render(), "ranks": self.as_keys()}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RankTuple":
        ranks = {parse_vertex_key(k): int(r) for k, r in obj["ranks"].items()}
        d = max(j for a in ranks for j in a)
        return cls(build_tree(d, obj["tree"]), ranks)

    @classmethod
    def uniform(cls, tree: DimensionTree, r: int, root: int = 1) -> "RankTuple":
        return cls(tree, {a: (root if a == tree.root else r) for a in tree.vertices})


def as_rank_tuple(tree: DimensionTree, ranks) -> RankTuple:
    if isinstance(ranks, RankTuple):
        if ranks.tree != tree:
            raise InvalidRanks("rank tuple was built for a different tree")
        return ranks
    if isinstance(ranks, (int, np.integer)):
        return RankTuple.uniform(tree, int(ranks))
    return RankTuple(tree, dict(ranks))


def _check_tree(v: np.ndarray, tree: DimensionTree) -> None:
    if v.ndim != tree.d:
        raise ShapeMismatch(f"tensor has {v.ndim} modes, tree has {tree.d}")


def unfolding_svd(v, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Left singular vectors and singular values of the unfolding with rows ``alpha``."""
    m = dense.matricize(v, alpha).matrix
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    return u, s


def minimal_subspace(v, alpha, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> SubspaceBasis:
    """Orthonormal basis of the minimal subspace of ``v`` for the modes ``alpha``.

    For ``alpha`` equal to all modes the root convention ``span{v}`` is used.
    """
    v = dense.as_tensor(v)
    alpha = vertex(alpha)
    if not alpha:
        raise InvalidVertex("empty vertex has no minimal subspace")
    if len(alpha) == v.ndim:
        nrm = dense.frobenius_norm(v)
        if nrm <= abs_tol or nrm == 0.0:
            return SubspaceBasis(alpha, np.zeros((v.size, 0)), np.zeros(0))
        return SubspaceBasis(alpha, (v.ravel() / nrm)[:, None], np.array([nrm]))
    u, s = unfolding_svd(v, alpha)
    r = numerical_rank(s, rel_tol, abs_tol)
    return SubspaceBasis(alpha, dense.sign_normalize(u[:, :r]), s[:r])


def _vertex_rank(v, a, rel_tol, abs_tol) -> int:
    if len(a) == v.ndim:
        return int(np.any(v != 0.0) and dense.frobenius_norm(v) > abs_tol)
    _, s = unfolding_svd(v, a)
    return numerical_rank(s, rel_tol, abs_tol)


def tree_rank(v, tree: DimensionTree, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> RankTuple:
    v = dense.as_tensor(v)
    _check_tree(v, tree)
    return RankTuple(tree, {a: _vertex_rank(v, a, rel_tol, abs_tol) for a in tree.vertices})


def subset_ranks(v, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> dict[Vertex, int]:
    """Ranks of all 2^d - 2 proper unfoldings (small d only)."""
    v = dense.as_tensor(v)
    return {a: _vertex_rank(v, a, rel_tol, abs_tol) for a in proper_subsets(v.ndim)}


def proper_subsets(d: int) -> list[Vertex]:
    return [a for k in range(1, d) for a in itertools.combinations(range(1, d + 1), k)]


def verify_rank_duality(v, tree: DimensionTree | None = None, all_subsets: bool | None = None,
                        rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> list[dict]:
    """Compare the ranks of the unfoldings for ``a`` and its complement.

    Both ranks are computed from independent SVDs. A rank decision is marked
    ``tolerance_sensitive`` when some singular value lies within a factor of
    ten of the threshold; a mismatch on such a vertex is not a violation.
    """
    v = dense.as_tensor(v)
    d = v.ndim
    if all_subsets is None:
        all_subsets = tree is None
    verts: list[Vertex] = []
    if tree is not None:
        _check_tree(v, tree)
        verts.extend(a for a in tree.vertices if a != tree.root)
    if all_subsets:
        if d > MAX_SUBSET_MODES:
            raise ValueError(f"all-subset duality check is limited to d <= {MAX_SUBSET_MODES}")
        verts.extend(a for a in proper_subsets(d) if a not in verts)

    records = []
    for a in verts:
        ac = complement(a, d)
        _, s1 = unfolding_svd(v, a)
        _, s2 = unfolding_svd(v, ac)
        r1, r2 = numerical_rank(s1, rel_tol, abs_tol), numerical_rank(s2, rel_tol, abs_tol)
        tau = rank_threshold(s1, rel_tol, abs_tol)
        sensitive = False
        margin = math.inf
        if tau > 0:
            for s in (s1, s2):
                pos = s[s > 0]
                if pos.size:
                    ratios = np.abs(np.log10(pos / tau))
                    margin = min(margin, float(ratios.min()))
            sensitive = margin < math.log10(SENSITIVITY_FACTOR)
        records.append({
            "vertex": vertex_key(a),
            "complement": vertex_key(ac),
            "value": [r1, r2],
            "threshold": tau,
            "log10_margin": margin if math.isfinite(margin) else None,
            "tolerance_sensitive": bool(sensitive),
            "pass": bool(r1 == r2 or sensitive),
        })
    return records


def _project_modes(x: np.ndarray, axes: list[int], basis: np.ndarray) -> np.ndarray:
    """Apply ``basis @ basis.T`` to the combined axes ``axes`` of ``x``."""
    others = [i for i in range(x.ndim) if i not in axes]
    perm = axes + others
    xt = np.transpose(x, perm)
    lead = xt.shape[: len(axes)]
    m = xt.reshape(math.prod(lead), -1)
    m = basis @ (basis.T @ m)
    return np.transpose(m.reshape(xt.shape), np.argsort(perm))


def verify_nestedness(v, tree: DimensionTree, rel_tol: float = DEFAULT_REL_TOL,
                      abs_tol: float = DEFAULT_ABS_TOL, tol: float = NESTEDNESS_TOL) -> list[dict]:
    """Check that each interior minimal subspace lies in the product of its sons' subspaces.

    The root is included with the convention ``U_D = span{v}``.
    """
    v = dense.as_tensor(v)
    _check_tree(v, tree)
    bases = {a: minimal_subspace(v, a, rel_tol, abs_tol).basis for a in tree.vertices}
    records = []
    for a in tree.interior:
        b = bases[a]
        shp = [v.shape[j - 1] for j in a] + [b.shape[1]]
        x = b.reshape(shp)
        px = x
        for s in tree.sons[a]:
            px = _project_modes(px, [a.index(j) for j in s], bases[s])
        nb = float(np.linalg.norm(b))
        res = float(np.linalg.norm(x - px))
        rel = res / nb if nb > 0 else 0.0
        records.append({"vertex": vertex_key(a), "value": rel, "threshold": tol, "pass": bool(rel <= tol)})
    return records


def projector_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral-norm distance between orthogonal projectors onto the column spans of two orthonormal bases."""
    p = a @ a.T - b @ b.T
    if p.size == 0:
        return 0.0
    return float(np.linalg.norm(p, 2))


def span_from_contractions(v, beta, alpha, samples: int, seed: int = 0, tol: float = PROJECTOR_TOL,
                           degenerate: bool = False, rel_tol: float = DEFAULT_REL_TOL,
                           abs_tol: float = DEFAULT_ABS_TOL) -> dict:
    """Rebuild the minimal subspace of ``beta`` from random functional contractions.

    Each sample first contracts the modes outside ``alpha`` with a random
    functional (giving an element of the minimal subspace of ``alpha``), then
    contracts ``alpha`` minus ``beta``. With ``degenerate=True`` every sample
    reuses the same pair of functionals.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    v = dense.as_tensor(v)
    d = v.ndim
    beta, alpha = vertex(beta), vertex(alpha)
    if not beta or not set(beta) < set(alpha) or not set(alpha) <= set(range(1, d + 1)):
        raise InvalidVertex(f"need a non-empty beta strictly inside alpha, got {list(beta)} and {list(alpha)}")
    rng = np.random.default_rng(seed)
    outer = complement(alpha, d)
    inner_modes = tuple(j for j in alpha if j not in beta)

    def draw(modes):
        return Functional(modes, rng.standard_normal(math.prod(v.shape[j - 1] for j in modes)))

    fixed = (draw(outer) if outer else None, draw(inner_modes))
    vectors = []
    for _ in range(samples):
        f_out, f_in = fixed if degenerate else (draw(outer) if outer else None, draw(inner_modes))
        v_alpha = dense.contract(v, alpha, [f_out]) if f_out is not None else v
        # v_alpha lives on the modes of alpha in sorted order; re-index as a standalone tensor
        local_beta = [alpha.index(j) + 1 for j in beta]
        local_f = Functional([alpha.index(j) + 1 for j in inner_modes], f_in.coefficients)
        w = dense.contract(v_alpha, local_beta, [local_f])
        vectors.append(w.ravel())
    w = np.stack(vectors, axis=1)
    u, s, _ = np.linalg.svd(w, full_matrices=False)
    ref = minimal_subspace(v, beta, rel_tol, abs_tol)
    # rank decision for the sample matrix is made relative to the tensor's scale, not the samples'
    span_rank = numerical_rank(s, rel_tol, abs_tol)
    basis = u[:, :span_rank]
    dist = projector_distance(basis, ref.basis)
    deficient = span_rank < ref.rank
    return {
        "vertex": vertex_key(beta),
        "enclosing": vertex_key(alpha),
        "samples": samples,
        "span_dim": span_rank,
        "minimal_dim": ref.rank,
        "deficient": bool(deficient),
        "value": dist,
        "threshold": tol,
        "pass": bool(not deficient and dist <= tol),
    }


# ---- admissibility and membership -------------------------------------------


def necessary_violations(tree: DimensionTree, shape, ranks) -> list[tuple[Vertex, str]]:
    """Necessary conditions a rank tuple must meet to be realizable."""
    rt = as_rank_tuple(tree, ranks)
    shape = tuple(int(n) for n in shape)
    if len(shape) != tree.d:
        raise ShapeMismatch(f"shape has {len(shape)} modes, tree has {tree.d}")
    r = rt.ranks
    out = []
    for a in tree.vertices:
        if a == tree.root:
            continue
        inside = math.prod(shape[j - 1] for j in a)
        outside = math.prod(shape[j - 1] for j in complement(a, tree.d))
        if tree.is_leaf(a) and r[a] > shape[a[0] - 1]:
            out.append((a, f"r_{{{vertex_key(a)}}} = {r[a]} exceeds mode size {shape[a[0] - 1]}"))
        if r[a] > inside:
            out.append((a, f"r_{{{vertex_key(a)}}} = {r[a]} exceeds {inside} = product of its mode sizes"))
        if r[a] > outside:
            out.append((a, f"r_{{{vertex_key(a)}}} = {r[a]} exceeds {outside} = product of complementary mode sizes"))
    for a in tree.interior:
        sons = tree.sons[a]
        prod = math.prod(r[s] for s in sons)
        if r[a] > prod:
            out.append((a, f"r_{{{vertex_key(a)}}} = {r[a]} exceeds product of son ranks {prod}"))
        for s in sons:
            bound = r[a] * math.prod(r[g] for g in sons if g != s)
            if r[s] > bound:
                out.append((s, f"r_{{{vertex_key(s)}}} = {r[s]} exceeds {bound} = parent rank times sibling ranks"))
    return out


@dataclass
class Admissibility:
    status: str  # "admissible" | "inadmissible" | "undetermined"
    witness: object = None
    violated: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.status == "admissible"


def is_admissible(tree: DimensionTree, shape, ranks, trials: int = 8, seed: int = 0,
                  rel_tol: float = DEFAULT_REL_TOL) -> Admissibility:
    """Three-valued admissibility test: necessary conditions, then random witnesses."""
    from .ttn import evaluate, random_tree_tensor

    if trials < 1:
        raise ValueError("trials must be positive")
    rt = as_rank_tuple(tree, ranks)
    if any(r < 1 for r in rt.ranks.values()) or rt[tree.root] != 1:
        raise InvalidRanks("admissibility is tested for positive tuples with root rank 1")
    violated = necessary_violations(tree, shape, rt)
    if violated:
        return Admissibility("inadmissible", violated=[(vertex_key(a), msg) for a, msg in violated])
    for k in range(trials):
        t = random_tree_tensor(tree, shape, rt, seed=seed + k)
        if tree_rank(evaluate(t), tree, rel_tol) == rt:
            return Admissibility("admissible", witness=t)
    return Admissibility("undetermined")


def in_FT(v, tree: DimensionTree, ranks, mode: str = "exact", rel_tol: float = DEFAULT_REL_TOL,
          abs_tol: float = DEFAULT_ABS_TOL) -> bool:
    """Membership in the set of tensors of tree-based rank equal to (``exact``) or bounded by (``bounded``) ``ranks``."""
    rt = as_rank_tuple(tree, ranks)
    actual = tree_rank(v, tree, rel_tol, abs_tol)
    if mode == "exact":
        return actual == rt
    if mode == "bounded":
        return actual <= rt
    raise ValueError(f"unknown membership mode {mode!r}")
