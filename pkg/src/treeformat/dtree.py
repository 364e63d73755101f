"""Dimension partition trees.

A vertex is a sorted tuple of 1-based mode indices. A tree maps every interior
vertex to an ordered tuple of sons; sons are ordered by their smallest index.
Trees are written in a parenthesized notation, e.g. ``"(((1)(2))((3)(4)))"``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    IncompleteUnion,
    IndexOutOfRange,
    InvalidModeCount,
    NonSingletonLeaf,
    OverlappingSons,
    SingleSon,
    TreeParseError,
)

Vertex = tuple[int, ...]

ROOT_TO_LEAVES = "root-to-leaves"
LEAVES_TO_ROOT = "leaves-to-root"


def vertex(indices: Iterable[int]) -> Vertex:
    """Canonical (sorted, duplicate-free) form of a vertex."""
    v = tuple(sorted(int(i) for i in indices))
    if len(set(v)) != len(v):
        raise OverlappingSons(f"repeated index in vertex {v}")
    return v


def vertex_key(v: Vertex) -> str:
    return " ".join(str(j) for j in v)


def parse_vertex_key(key: str) -> Vertex:
    try:
        return vertex(int(tok) for tok in key.split())
    except ValueError as exc:
        raise TreeParseError(f"bad vertex key {key!r}") from exc


@dataclass(frozen=True, eq=True)
class DimensionTree:
    """Validated dimension partition tree over ``D = {1, ..., d}``.

    Use :func:`build_tree`, :meth:`from_sons` or the family constructors rather
    than calling the initializer directly.
    """

    d: int
    sons: Mapping[Vertex, tuple[Vertex, ...]]
    levels: Mapping[Vertex, int] = field(compare=False)
    parent: Mapping[Vertex, Vertex] = field(compare=False, repr=False)

    @classmethod
    def from_sons(cls, d: int, sons: Mapping[Sequence[int], Sequence[Sequence[int]]]) -> "DimensionTree":
        """Validate a son map (interior vertices only) and return the tree."""
        if d < 1:
            raise InvalidModeCount(f"mode count must be positive, got {d}")
        root = tuple(range(1, d + 1))
        smap: dict[Vertex, tuple[Vertex, ...]] = {}
        for a, ss in sons.items():
            a = vertex(a)
            for j in a:
                if not 1 <= j <= d:
                    raise IndexOutOfRange(f"index {j} outside 1..{d}")
            children = [vertex(s) for s in ss]
            if len(children) == 1:
                raise SingleSon(f"vertex {{{vertex_key(a)}}} has a single son")
            seen: set[int] = set()
            for s in children:
                if not s:
                    raise TreeParseError("empty son")
                if seen & set(s):
                    raise OverlappingSons(f"sons of {{{vertex_key(a)}}} share indices {sorted(seen & set(s))}")
                seen |= set(s)
            if seen != set(a):
                raise IncompleteUnion(f"sons of {{{vertex_key(a)}}} cover {sorted(seen)}, not {list(a)}")
            smap[a] = tuple(sorted(children, key=lambda s: s[0]))

        if d == 1:
            smap.setdefault(root, ())
        if root not in smap:
            raise IncompleteUnion(f"no vertex equal to the full mode set {list(root)}")

        levels = {root: 0}
        parent: dict[Vertex, Vertex] = {}
        full_sons: dict[Vertex, tuple[Vertex, ...]] = {}
        queue = deque([root])
        while queue:
            a = queue.popleft()
            children = smap.get(a, ())
            if not children and len(a) > 1:
                raise NonSingletonLeaf(f"leaf {{{vertex_key(a)}}} is not a singleton")
            full_sons[a] = children
            for s in children:
                if s in levels:
                    raise OverlappingSons(f"vertex {{{vertex_key(s)}}} appears twice")
                levels[s] = levels[a] + 1
                parent[s] = a
                queue.append(s)
        unreachable = set(smap) - set(full_sons)
        if unreachable:
            raise TreeParseError(f"vertices not reachable from the root: {sorted(unreachable)}")
        return cls(d=d, sons=full_sons, levels=levels, parent=parent)

    @property
    def root(self) -> Vertex:
        return tuple(range(1, self.d + 1))

    @property
    def vertices(self) -> tuple[Vertex, ...]:
        return self.traversal(ROOT_TO_LEAVES)

    @property
    def leaves(self) -> tuple[Vertex, ...]:
        return tuple((j,) for j in range(1, self.d + 1))

    @property
    def interior(self) -> tuple[Vertex, ...]:
        """Interior vertices (including the root), root-to-leaves order."""
        return tuple(a for a in self.vertices if self.sons[a])

    def is_leaf(self, a: Vertex) -> bool:
        return not self.sons[a]

    def is_binary(self) -> bool:
        return all(len(s) in (0, 2) for s in self.sons.values())

    def depth(self) -> int:
        return max(self.levels.values())

    def traversal(self, order: str = ROOT_TO_LEAVES) -> tuple[Vertex, ...]:
        out = []
        queue = deque([self.root])
        while queue:
            a = queue.popleft()
            out.append(a)
            queue.extend(self.sons[a])
        if order == ROOT_TO_LEAVES:
            return tuple(out)
        if order == LEAVES_TO_ROOT:
            return tuple(reversed(out))
        raise ValueError(f"unknown traversal order {order!r}")

    def render(self, a: Vertex | None = None) -> str:
        a = self.root if a is None else a
        if self.is_leaf(a):
            return f"({a[0]})"
        return "(" + "".join(self.render(s) for s in self.sons[a]) + ")"

    def __str__(self) -> str:
        return self.render()

    def __contains__(self, a) -> bool:
        return tuple(a) in self.sons

    def __len__(self) -> int:
        return len(self.sons)


_TOKEN = re.compile(r"\s*(?:(\()|(\))|(-?\d+)|(\S))")


def _tokenize(spec: str) -> list[str]:
    tokens = []
    pos = 0
    spec = spec.strip()
    while pos < len(spec):
        m = _TOKEN.match(spec, pos)
        if m is None:
            break
        if m.group(4) is not None:
            raise TreeParseError(f"unexpected character {m.group(4)!r} at offset {m.start(4)}")
        tokens.append(m.group(1) or m.group(2) or m.group(3))
        pos = m.end()
    return tokens


def build_tree(d: int, spec: str) -> DimensionTree:
    """Parse the parenthesized notation into a validated tree."""
    if d < 1:
        raise InvalidModeCount(f"mode count must be positive, got {d}")
    tokens = _tokenize(spec)
    sons: dict[Vertex, list[Vertex]] = {}
    pos = 0

    def node() -> Vertex:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != "(":
            raise TreeParseError(f"expected '(' at token {pos}")
        pos += 1
        if pos < len(tokens) and tokens[pos] not in "()":
            ints = []
            while pos < len(tokens) and tokens[pos] not in "()":
                ints.append(int(tokens[pos]))
                pos += 1
            if pos >= len(tokens) or tokens[pos] != ")":
                raise TreeParseError("a leaf may not contain sub-trees")
            pos += 1
            for j in ints:
                if not 1 <= j <= d:
                    raise IndexOutOfRange(f"index {j} outside 1..{d}")
            if len(ints) != 1:
                raise NonSingletonLeaf(f"leaf ({' '.join(map(str, ints))}) is not a singleton")
            return (ints[0],)
        children = []
        while pos < len(tokens) and tokens[pos] == "(":
            children.append(node())
        if pos >= len(tokens) or tokens[pos] != ")":
            raise TreeParseError(f"expected ')' at token {pos}")
        pos += 1
        if not children:
            raise TreeParseError("empty vertex '()'")
        if len(children) == 1:
            raise SingleSon(f"vertex {{{vertex_key(children[0])}}} is the only son of its parent")
        flat = [j for c in children for j in c]
        if len(set(flat)) != len(flat):
            raise OverlappingSons(f"sons {[list(c) for c in children]} share an index")
        a = tuple(sorted(flat))
        if a in sons:
            raise OverlappingSons(f"vertex {{{vertex_key(a)}}} appears twice")
        sons[a] = children
        return a

    top = node()
    if pos != len(tokens):
        raise TreeParseError(f"trailing tokens after position {pos}")
    if top != tuple(range(1, d + 1)):
        if len(top) == 1 and d == 1:
            return DimensionTree.from_sons(1, {})
        raise IncompleteUnion(f"tree covers {list(top)}, expected 1..{d}")
    return DimensionTree.from_sons(d, sons)


def _check_d(d: int) -> None:
    if d < 2:
        raise InvalidModeCount(f"need at least two modes, got {d}")


def tucker_tree(d: int) -> DimensionTree:
    _check_d(d)
    return DimensionTree.from_sons(d, {tuple(range(1, d + 1)): [(j,) for j in range(1, d + 1)]})


def linear_tree(d: int) -> DimensionTree:
    """Tensor-train shaped tree: each ``{j,...,d}`` splits into ``{j}`` and ``{j+1,...,d}``."""
    _check_d(d)
    sons = {}
    for j in range(1, d):
        sons[tuple(range(j, d + 1))] = [(j,), tuple(range(j + 1, d + 1))]
    return DimensionTree.from_sons(d, sons)


def balanced_tree(d: int) -> DimensionTree:
    _check_d(d)
    sons = {}

    def split(a: Vertex) -> None:
        if len(a) < 2:
            return
        h = (len(a) + 1) // 2
        left, right = a[:h], a[h:]
        sons[a] = [left, right]
        split(left)
        split(right)

    split(tuple(range(1, d + 1)))
    return DimensionTree.from_sons(d, sons)


def tree_from_arg(d: int, arg: str) -> DimensionTree:
    """Accept a family name (``tucker``, ``linear``, ``balanced``) or the parenthesized form."""
    families = {"tucker": tucker_tree, "linear": linear_tree, "balanced": balanced_tree}
    name = arg.strip().lower()
    if name in families:
        return families[name](d)
    return build_tree(d, arg)


def depth(tree: DimensionTree) -> int:
    return tree.depth()


def traversal(tree: DimensionTree, order: str = ROOT_TO_LEAVES) -> tuple[Vertex, ...]:
    return tree.traversal(order)
