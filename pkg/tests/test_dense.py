import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from treeformat import dense
from treeformat.dense import Functional, Matricized
from treeformat.errors import InvalidVertex, ShapeMismatch


def loop_apply(v, ops):
    """Brute-force mode-wise operator application."""
    shape_out = [ops[j + 1].shape[0] if j + 1 in ops else n for j, n in enumerate(v.shape)]
    out = np.zeros(shape_out)
    for idx_out in itertools.product(*map(range, shape_out)):
        acc = 0.0
        for idx_in in itertools.product(*map(range, v.shape)):
            w = v[idx_in]
            for j in range(v.ndim):
                if j + 1 in ops:
                    w *= ops[j + 1][idx_out[j], idx_in[j]]
                elif idx_out[j] != idx_in[j]:
                    w = 0.0
            acc += w
        out[idx_out] = acc
    return out


def loop_contract(v, keep, functionals):
    keep = list(keep)
    out = np.zeros([v.shape[j - 1] for j in keep])
    for idx in itertools.product(*map(range, v.shape)):
        w = v[idx]
        for f in functionals:
            sub = [idx[j - 1] for j in f.modes]
            flat = np.ravel_multi_index(sub, [v.shape[j - 1] for j in f.modes])
            w *= f.coefficients[flat]
        out[tuple(idx[j - 1] for j in keep)] += w
    return out


def test_elementary_examples():
    e = dense.elementary([[1, 0], [1, 0], [1, 0]])
    assert e[0, 0, 0] == 1 and e.sum() == 1
    np.testing.assert_array_equal(dense.elementary([[1, 1], [1, -1]]), [[1, -1], [1, -1]])


moderate = st.one_of(st.just(0.0), st.floats(1e-3, 10), st.floats(-10, -1e-3))


@given(st.lists(hnp.arrays(np.float64, st.integers(1, 4), elements=moderate), min_size=1, max_size=4))
def test_elementary_crossnorm(factors):
    e = dense.elementary(factors)
    expect = np.prod([np.linalg.norm(f) for f in factors])
    assert dense.frobenius_norm(e) == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_apply_operator_examples(rng):
    v = rng.standard_normal((2, 3, 2))
    np.testing.assert_array_equal(dense.apply_elementary_operator(v, {}), v)
    np.testing.assert_allclose(dense.apply_elementary_operator(v, {1: np.eye(2), 2: np.eye(3)}), v)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = dense.apply_elementary_operator(dense.elementary([[1, 0], [0, 1]]), {1: swap})
    np.testing.assert_array_equal(out, dense.elementary([[0, 1], [0, 1]]))


def test_apply_operator_matches_loop_oracle(rng):
    v = rng.standard_normal((3, 3, 3))
    ops = {1: rng.standard_normal((2, 3)), 2: rng.standard_normal((3, 3)), 3: rng.standard_normal((4, 3))}
    np.testing.assert_allclose(dense.apply_elementary_operator(v, ops), loop_apply(v, ops), rtol=1e-12, atol=1e-12)


def test_apply_operator_on_elementary(rng):
    xs = [rng.standard_normal(n) for n in (2, 3, 4)]
    ops = {j + 1: rng.standard_normal((3, len(x))) for j, x in enumerate(xs)}
    out = dense.apply_elementary_operator(dense.elementary(xs), ops)
    np.testing.assert_allclose(out, dense.elementary([ops[j + 1] @ x for j, x in enumerate(xs)]), rtol=1e-12)


def test_apply_operator_errors(rng):
    with pytest.raises(ShapeMismatch):
        dense.apply_elementary_operator(np.ones((2, 2)), {1: np.eye(3)})


def test_orthogonal_operators_preserve_norm(rng):
    v = rng.standard_normal((3, 4, 2))
    ops = {j + 1: np.linalg.qr(rng.standard_normal((n, n)))[0] for j, n in enumerate(v.shape)}
    assert dense.frobenius_norm(dense.apply_elementary_operator(v, ops)) == pytest.approx(dense.frobenius_norm(v), rel=1e-12)


def test_matricize_examples(rng):
    e = np.zeros((2, 2, 2))
    e[0, 0, 0] = 1
    m = dense.matricize(e, [1])
    assert m.matrix.shape == (2, 4) and m.matrix[0, 0] == 1 and m.matrix.sum() == 1
    el = dense.elementary([rng.standard_normal(n) for n in (2, 3, 4)])
    for beta in ([1], [2], [3], [1, 3], [2, 3]):
        assert np.linalg.matrix_rank(dense.matricize(el, beta).matrix) == 1
    v = rng.standard_normal((3, 4, 5))
    m = dense.matricize(v, [2])
    assert m.rows == (2,) and m.cols == (1, 3)
    np.testing.assert_array_equal(dense.dematricize(m, v.shape), v)


def test_matricize_entries_match_index_map():
    v = np.arange(24, dtype=float).reshape(2, 3, 4)
    m = dense.matricize(v, [3, 1]).matrix
    assert m.shape == (8, 3)
    for i, j, k in itertools.product(range(2), range(3), range(4)):
        assert m[i * 4 + k, j] == v[i, j, k]


def test_matricize_rejects_trivial(rng):
    v = rng.standard_normal((2, 2))
    for bad in ([], [1, 2], [3]):
        with pytest.raises(InvalidVertex):
            dense.matricize(v, bad)


def test_dematricize_round_trip_exhaustive(rng):
    v = rng.standard_normal((2, 3, 2))
    for k in (1, 2):
        for beta in itertools.combinations((1, 2, 3), k):
            assert np.array_equal(dense.dematricize(dense.matricize(v, beta), v.shape), v)
    z = Matricized((1,), (2, 3), np.zeros((2, 6)))
    np.testing.assert_array_equal(dense.dematricize(z, (2, 3, 2)), np.zeros((2, 3, 2)))
    with pytest.raises(ShapeMismatch):
        dense.dematricize(z, (2, 2, 2))


def test_matricize_linear():
    rng = np.random.default_rng(0)
    v = rng.integers(-5, 5, (2, 3, 2)).astype(float)
    w = rng.integers(-5, 5, (2, 3, 2)).astype(float)
    lhs = dense.matricize(3 * v - 2 * w, [1, 3]).matrix
    rhs = 3 * dense.matricize(v, [1, 3]).matrix - 2 * dense.matricize(w, [1, 3]).matrix
    assert np.array_equal(lhs, rhs)


def test_contract_examples(rng):
    x, y, z = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(2)
    v = dense.elementary([x, y, z])
    phi = Functional((2, 3), np.outer(y, z).ravel())
    np.testing.assert_allclose(dense.contract(v, (1,), [phi]), x * (y @ y) * (z @ z), rtol=1e-13)

    w = rng.standard_normal((2, 2, 2))
    delta = Functional((3,), [1.0, 0.0])
    assert np.array_equal(dense.contract(w, (1, 2), [delta]), w[:, :, 0])


def test_contract_matches_loop_oracle(rng):
    v = rng.standard_normal((2, 2, 3))
    for keep, fmodes in [((1,), [(2,), (3,)]), ((2,), [(1, 3)]), ((3,), [(2,), (1,)]), ((1, 3), [(2,)])]:
        fs = [Functional(m, rng.standard_normal(int(np.prod([v.shape[j - 1] for j in m])))) for m in fmodes]
        got = dense.contract(v, keep, fs)
        want = loop_contract(v, keep, fs)
        assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)


def test_contract_errors(rng):
    v = rng.standard_normal((2, 2, 3))
    with pytest.raises(ShapeMismatch):
        dense.contract(v, (1,), [Functional((2,), [1, 1])])
    with pytest.raises(ShapeMismatch):
        dense.contract(v, (1,), [Functional((2, 3), np.ones(5))])
    with pytest.raises(ShapeMismatch):
        dense.contract(v, (1,), [Functional((2, 3), np.ones(6)), Functional((3,), np.ones(3))])


def test_arithmetic(rng):
    v = rng.integers(-100, 100, (3, 2)).astype(float) / 8
    w = rng.integers(-100, 100, (3, 2)).astype(float) / 8
    assert np.array_equal(dense.add(dense.add(v, w), dense.scale(w, -1)), v)
    assert dense.inner(v, v) == pytest.approx(dense.frobenius_norm(v) ** 2)
    assert dense.inner(np.zeros((2, 2)), np.zeros((2, 2))) == 0
    x, y = rng.standard_normal(3), rng.standard_normal(4)
    assert dense.frobenius_norm(dense.elementary([x, y])) == pytest.approx(np.linalg.norm(x) * np.linalg.norm(y))
    with pytest.raises(ShapeMismatch):
        dense.add(v, np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        dense.inner(v, np.ones((2, 3)))


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=4, max_side=3),
                  elements=st.floats(-1e3, 1e3, allow_subnormal=False)))
def test_rank_duality_of_unfoldings(v):
    d = v.ndim
    for k in range(1, d):
        for beta in itertools.combinations(range(1, d + 1), k):
            comp = tuple(j for j in range(1, d + 1) if j not in beta)
            s1 = np.linalg.svd(dense.matricize(v, beta).matrix, compute_uv=False)
            s2 = np.linalg.svd(dense.matricize(v, comp).matrix, compute_uv=False)
            assert dense.numerical_rank(s1) == dense.numerical_rank(s2) or np.any(
                np.abs(np.log10(s1[s1 > 0] / dense.rank_threshold(s1))) < 1)


def test_numerical_rank_threshold():
    assert dense.numerical_rank([1.0, 1e-9, 1e-11]) == 2
    assert dense.numerical_rank([1.0, 0.5], rel_tol=0.6) == 1
    assert dense.numerical_rank([0.0, 0.0]) == 0
    assert dense.numerical_rank([]) == 0
    assert dense.numerical_rank([1.0, 0.1], abs_tol=0.2) == 1
    assert dense.matrix_rank(np.zeros((3, 3))) == 0


def test_sign_normalize():
    u = np.array([[-3.0, 1.0], [1.0, -1.0]])
    out = dense.sign_normalize(u)
    np.testing.assert_array_equal(out, [[3.0, 1.0], [-1.0, -1.0]])


def test_file_round_trip(rng):
    v = rng.standard_normal((2, 3, 4)) * 10.0 ** rng.integers(-300, 300, (2, 3, 4))
    text = dense.dumps(dense.dense_to_dict(v))
    back = dense.dense_from_dict(json.loads(text))
    assert np.array_equal(back, v)
    assert dense.dumps(dense.dense_to_dict(back)) == text
    with pytest.raises(ShapeMismatch):
        dense.dense_from_dict({"shape": [2, 2], "values": [1, 2, 3]})
