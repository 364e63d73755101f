"""Dense d-way tensors as numpy arrays.

Row-major (last mode fastest) layout is used everywhere: for flattening,
matricization row/column orders, Kronecker orders and the JSON file format.
Modes are addressed with 1-based indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dtree import Vertex, vertex
from .errors import InvalidVertex, ShapeMismatch, TreeFormatError

DEFAULT_REL_TOL = 1e-10
DEFAULT_ABS_TOL = 0.0


@dataclass(frozen=True)
class Functional:
    """Linear functional on the modes ``modes`` given by its coefficient vector."""

    modes: Vertex
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modes", vertex(self.modes))
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float).ravel())


@dataclass(frozen=True)
class Matricized:
    rows: Vertex
    cols: Vertex
    matrix: np.ndarray


def as_tensor(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        raise ShapeMismatch("a tensor needs at least one mode")
    if not np.all(np.isfinite(a)):
        raise TreeFormatError("tensor has non-finite entries")
    return a


def _axes(modes: Sequence[int], d: int) -> list[int]:
    out = []
    for j in modes:
        if not 1 <= j <= d:
            raise InvalidVertex(f"mode {j} outside 1..{d}")
        out.append(j - 1)
    return out


def complement(modes: Sequence[int], d: int) -> Vertex:
    s = set(modes)
    return tuple(j for j in range(1, d + 1) if j not in s)


def elementary(factors: Sequence[Sequence[float]]) -> np.ndarray:
    """Outer product of one vector per mode."""
    if not factors:
        raise ShapeMismatch("need at least one factor")
    vecs = [np.asarray(f, dtype=np.float64).ravel() for f in factors]
    out = vecs[0]
    for f in vecs[1:]:
        out = np.multiply.outer(out, f)
    return out


def apply_elementary_operator(v, ops: Mapping[int, np.ndarray]) -> np.ndarray:
    """Apply ``A_j`` along mode ``j`` for every entry of ``ops`` (identity elsewhere)."""
    out = as_tensor(v)
    d = out.ndim
    for j, a in ops.items():
        (ax,) = _axes([j], d)
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != out.shape[ax]:
            raise ShapeMismatch(f"operator for mode {j} has shape {a.shape}, mode size is {out.shape[ax]}")
        out = np.moveaxis(np.tensordot(a, out, axes=(1, ax)), 0, ax)
    return out


def matricize(v, beta: Sequence[int]) -> Matricized:
    """Unfold ``v`` with rows indexed by the modes in ``beta`` and columns by the rest."""
    v = as_tensor(v)
    d = v.ndim
    rows = vertex(beta)
    if not rows or len(rows) == d:
        raise InvalidVertex(f"row set must be a non-empty proper subset of 1..{d}, got {list(rows)}")
    cols = complement(rows, d)
    perm = _axes(rows, d) + _axes(cols, d)
    nrow = math.prod(v.shape[j - 1] for j in rows)
    return Matricized(rows, cols, np.transpose(v, perm).reshape(nrow, -1))


def dematricize(m: Matricized, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(int(n) for n in shape)
    d = len(shape)
    if set(m.rows) | set(m.cols) != set(range(1, d + 1)) or set(m.rows) & set(m.cols):
        raise ShapeMismatch("row and column sets must partition the modes")
    order = list(m.rows) + list(m.cols)
    nrow = math.prod(shape[j - 1] for j in m.rows)
    ncol = math.prod(shape[j - 1] for j in m.cols)
    if m.matrix.shape != (nrow, ncol):
        raise ShapeMismatch(f"matrix shape {m.matrix.shape} inconsistent with tensor shape {shape}")
    t = np.asarray(m.matrix, dtype=np.float64).reshape([shape[j - 1] for j in order])
    return np.transpose(t, np.argsort(order))


def contract(v, keep: Sequence[int], functionals: Sequence[Functional]) -> np.ndarray:
    """Apply ``id_keep`` tensored with the given functionals, whose modes partition the complement."""
    v = as_tensor(v)
    d = v.ndim
    keep = vertex(keep)
    rest = complement(keep, d)
    covered: list[int] = []
    for f in functionals:
        covered.extend(f.modes)
    if len(set(covered)) != len(covered) or set(covered) != set(rest):
        raise ShapeMismatch(f"functional modes {covered} do not partition {list(rest)}")
    if not rest:
        return v.copy()

    weight = np.ones(())
    labels: list[int] = []
    for f in functionals:
        fshape = [v.shape[j - 1] for j in f.modes]
        if f.coefficients.size != math.prod(fshape):
            raise ShapeMismatch(f"functional on {list(f.modes)} has {f.coefficients.size} coefficients, expected {math.prod(fshape)}")
        weight = np.multiply.outer(weight, f.coefficients.reshape(fshape))
        labels.extend(f.modes)
    weight = np.transpose(weight, np.argsort(labels)).ravel()
    if not keep:
        return np.asarray(v.ravel() @ weight)
    return (matricize(v, keep).matrix @ weight).reshape([v.shape[j - 1] for j in keep])


def _check_same(v, w) -> tuple[np.ndarray, np.ndarray]:
    v, w = as_tensor(v), as_tensor(w)
    if v.shape != w.shape:
        raise ShapeMismatch(f"shape mismatch {v.shape} vs {w.shape}")
    return v, w


def add(v, w) -> np.ndarray:
    v, w = _check_same(v, w)
    return v + w


def scale(v, c: float) -> np.ndarray:
    return float(c) * as_tensor(v)


def inner(v, w) -> float:
    v, w = _check_same(v, w)
    return float(np.dot(v.ravel(), w.ravel()))


def frobenius_norm(v) -> float:
    return float(np.linalg.norm(as_tensor(v).ravel()))


def rank_threshold(s, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> float:
    s = np.asarray(s)
    smax = float(s.max()) if s.size else 0.0
    return rel_tol * smax + abs_tol


def numerical_rank(s, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> int:
    """Number of singular values strictly above ``rel_tol * max(s) + abs_tol``."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s.max() <= abs_tol:
        return 0
    return int(np.count_nonzero(s > rank_threshold(s, rel_tol, abs_tol)))


def matrix_rank(a, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = DEFAULT_ABS_TOL) -> int:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0
    return numerical_rank(np.linalg.svd(a, compute_uv=False), rel_tol, abs_tol)


def sign_normalize(u: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive (first one on ties)."""
    u = np.array(u, dtype=np.float64, copy=True)
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


# ---- file format -------------------------------------------------------------


def dense_to_dict(v) -> dict:
    v = as_tensor(v)
    return {"shape": list(v.shape), "values": [float(x) for x in v.ravel()]}


def dense_from_dict(obj: Mapping) -> np.ndarray:
    try:
        shape = [int(n) for n in obj["shape"]]
        values = np.asarray(obj["values"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise TreeFormatError(f"malformed dense tensor record: {exc}") from exc
    if any(n < 1 for n in shape) or not shape:
        raise ShapeMismatch(f"mode sizes must be positive, got {shape}")
    if values.ndim != 1 or values.size != math.prod(shape):
        raise ShapeMismatch(f"{values.size} values for shape {shape}")
    return as_tensor(values.reshape(shape))


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
