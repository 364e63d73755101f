import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeformat import dense, minsub
from treeformat.dtree import balanced_tree, build_tree, linear_tree, tucker_tree
from treeformat.errors import InvalidRanks, InvalidVertex
from treeformat.minsub import RankTuple

from conftest import FAMILIES


def oracle_rank(v, alpha, rel=1e-10):
    """Unfolding rank from an independently built reshape and plain SVD."""
    axes = [j - 1 for j in alpha]
    rest = [j for j in range(v.ndim) if j not in axes]
    m = np.transpose(v, axes + rest).reshape(int(np.prod([v.shape[j] for j in axes])), -1)
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > rel * s[0])) if s[0] > 0 else 0


def sum_of_elementary(rng, shape, k):
    return sum(dense.elementary([rng.standard_normal(n) for n in shape]) for _ in range(k))


def test_minimal_subspace_elementary(rng):
    x, y, z = (rng.standard_normal(n) for n in (2, 3, 4))
    b = minsub.minimal_subspace(dense.elementary([x, y, z]), (2,))
    assert b.rank == 1
    np.testing.assert_allclose(np.abs(b.basis[:, 0]), np.abs(y) / np.linalg.norm(y), rtol=1e-12)


def test_minimal_subspace_ghz(ghz):
    b = minsub.minimal_subspace(ghz, (1,))
    assert b.rank == 2
    np.testing.assert_allclose(b.projector(), np.eye(2), atol=1e-14)
    assert oracle_rank(ghz, (1,)) == 2


def test_minimal_subspace_zero_and_root():
    z = np.zeros((2, 3))
    assert minsub.minimal_subspace(z, (1,)).rank == 0
    assert minsub.minimal_subspace(z, (1, 2)).rank == 0
    v = np.arange(6.0).reshape(2, 3)
    root = minsub.minimal_subspace(v, (1, 2))
    assert root.rank == 1
    np.testing.assert_allclose(root.basis[:, 0] * np.linalg.norm(v), v.ravel())
    with pytest.raises(InvalidVertex):
        minsub.minimal_subspace(v, ())


def test_minimal_subspace_is_orthonormal(rng):
    v = sum_of_elementary(rng, (3, 4, 3), 2)
    b = minsub.minimal_subspace(v, (1, 3))
    assert b.rank == 2
    np.testing.assert_allclose(b.basis.T @ b.basis, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_tree_rank_elementary_all_ones(rng, name):
    v = dense.elementary([rng.standard_normal(n) for n in (2, 3, 2, 2)])
    r = minsub.tree_rank(v, FAMILIES[name](4))
    assert set(r.ranks.values()) == {1}


def test_tree_rank_ghz_linear(ghz):
    t = linear_tree(3)
    r = minsub.tree_rank(ghz, t)
    assert r.as_keys() == {"1 2 3": 1, "1": 2, "2 3": 2, "2": 2, "3": 2}
    assert all(r[a] == oracle_rank(ghz, a) for a in t.vertices if a != t.root)


def test_tree_rank_generic_balanced():
    # frozen: a Gaussian 2x2x2x2 tensor has unfolding ranks 4 on {1,2}/{3,4} and 2 at leaves
    t = balanced_tree(4)
    for seed in range(5):
        v = np.random.default_rng(seed).standard_normal((2, 2, 2, 2))
        r = minsub.tree_rank(v, t)
        assert r[(1, 2)] == r[(3, 4)] == 4 == oracle_rank(v, (1, 2))
        assert all(r[(j,)] == 2 for j in range(1, 5))


def test_tree_rank_zero():
    r = minsub.tree_rank(np.zeros((2, 2, 2)), linear_tree(3))
    assert set(r.ranks.values()) == {0}


def test_rank_tuple_file_round_trip(ghz):
    r = minsub.tree_rank(ghz, linear_tree(3))
    obj = r.to_dict()
    assert obj["tree"] == "((1)((2)(3)))"
    assert RankTuple.from_dict(obj) == r
    with pytest.raises(InvalidRanks):
        RankTuple(linear_tree(3), {(1,): 1})


orthogonal = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(FAMILIES)), st.integers(1, 3))
def test_rank_properties(seed, name, k):
    rng = np.random.default_rng(seed)
    t = FAMILIES[name](4)
    v = sum_of_elementary(rng, (3, 2, 3, 2), k)
    v /= dense.frobenius_norm(v)
    r = minsub.tree_rank(v, t)
    # orthogonal invariance
    ops = {j + 1: np.linalg.qr(rng.standard_normal((n, n)))[0] for j, n in enumerate(v.shape)}
    w = dense.apply_elementary_operator(v, ops)
    assert minsub.tree_rank(w / dense.frobenius_norm(w), t) == r
    # scaling invariance
    assert minsub.tree_rank(-3.7e5 * v, t) == r
    # son-product bound
    for a in t.interior:
        assert r[a] <= np.prod([r[s] for s in t.sons[a]])
    # Tucker set membership depends on leaf ranks only
    tt = tucker_tree(4)
    rt = minsub.tree_rank(v, tt)
    leaf_only = all(rt[(j,)] == oracle_rank(v, (j,)) for j in range(1, 5))
    assert minsub.in_FT(v, tt, rt, "exact") == leaf_only


def test_duality_elementary(rng):
    v = dense.elementary([rng.standard_normal(n) for n in (2, 3, 2)])
    recs = minsub.verify_rank_duality(v)
    assert len(recs) == 6
    assert all(r["value"] == [1, 1] and r["pass"] for r in recs)


def test_duality_random_no_violations():
    rng = np.random.default_rng(7)
    for _ in range(100):
        recs = minsub.verify_rank_duality(rng.standard_normal((3, 3, 3)))
        assert all(r["pass"] and not r["tolerance_sensitive"] for r in recs)


def test_duality_threshold_case_is_flagged_not_failed():
    v = np.diag([1.0, 1e-10])
    (rec, rec2) = minsub.verify_rank_duality(v)
    assert rec["tolerance_sensitive"] and rec["pass"]


def test_duality_gated_by_d():
    with pytest.raises(ValueError):
        minsub.verify_rank_duality(np.ones((2,) * 6), all_subsets=True)
    recs = minsub.verify_rank_duality(np.ones((2,) * 6), linear_tree(6))
    assert len(recs) == 10


def test_nestedness_examples(rng, ghz):
    v = dense.elementary([rng.standard_normal(2) for _ in range(3)])
    assert all(r["value"] <= 1e-14 for r in minsub.verify_nestedness(v, linear_tree(3)))
    recs = {r["vertex"]: r for r in minsub.verify_nestedness(ghz, linear_tree(3))}
    assert recs["2 3"]["value"] <= 1e-12
    for k in (1, 2, 3):
        w = sum_of_elementary(rng, (2, 2, 2, 2), k)
        assert all(r["pass"] and r["value"] <= 1e-10 for r in minsub.verify_nestedness(w, balanced_tree(4)))


def test_nestedness_detects_wrong_subspace(ghz):
    # break the check by handing it an inconsistent son basis
    p = minsub._project_modes(ghz.reshape(2, 2, 2), [0], np.array([[1.0], [0.0]]))
    assert np.linalg.norm(ghz - p) > 0.5


def test_span_examples(rng, ghz):
    v = dense.elementary([rng.standard_normal(n) for n in (2, 3, 2)])
    rec = minsub.span_from_contractions(v, (1,), (1, 2), samples=1, seed=0)
    assert rec["span_dim"] == 1 and rec["pass"]
    rec = minsub.span_from_contractions(ghz, (1,), (1, 2), samples=4, seed=0)
    assert rec["pass"] and rec["value"] <= 1e-10 and rec["span_dim"] == 2
    rec = minsub.span_from_contractions(ghz, (1,), (1, 2), samples=4, seed=0, degenerate=True)
    assert rec["deficient"] and not rec["pass"]
    rec = minsub.span_from_contractions(ghz, (2,), (1, 2, 3), samples=3, seed=1)
    assert rec["pass"]
    with pytest.raises(ValueError):
        minsub.span_from_contractions(ghz, (1,), (1, 2), samples=0)
    with pytest.raises(InvalidVertex):
        minsub.span_from_contractions(ghz, (1, 2), (1, 2), samples=2)


def test_admissibility():
    t3 = tucker_tree(3)
    ones = RankTuple.uniform(t3, 1)
    res = minsub.is_admissible(t3, (2, 3, 2), ones)
    assert res.status == "admissible" and res.witness is not None
    res = minsub.is_admissible(t3, (2, 2, 2), RankTuple.uniform(t3, 2))
    assert res
    lt = linear_tree(3)
    bad = RankTuple(lt, {(1, 2, 3): 1, (1,): 2, (2, 3): 5, (2,): 2, (3,): 2})
    res = minsub.is_admissible(lt, (2, 2, 2), bad)
    assert res.status == "inadmissible"
    assert any(v == "2 3" for v, _ in res.violated)
    # r_1 = 1 forces r_{23} = 1: fails the parent-sibling condition
    res = minsub.is_admissible(lt, (2, 2, 2), {(1, 2, 3): 1, (1,): 1, (2, 3): 2, (2,): 2, (3,): 2})
    assert res.status == "inadmissible"
    with pytest.raises(InvalidRanks):
        minsub.is_admissible(lt, (2, 2, 2), RankTuple.uniform(lt, 0))


def test_admissibility_undetermined_when_no_witness_found(monkeypatch):
    t = tucker_tree(3)
    # every witness reports a lower rank than requested
    monkeypatch.setattr(minsub, "tree_rank", lambda v, tree, *a, **k: RankTuple.uniform(tree, 1))
    res = minsub.is_admissible(t, (2, 2, 2), RankTuple.uniform(t, 2), trials=3)
    assert res.status == "undetermined" and not res


def test_in_ft(rng, ghz):
    v = dense.elementary([rng.standard_normal(2) for _ in range(3)])
    t = linear_tree(3)
    assert minsub.in_FT(v, t, 1, "exact")
    assert not minsub.in_FT(v, t, 2, "exact")
    assert minsub.in_FT(v, t, 2, "bounded")
    assert minsub.in_FT(ghz, t, 2, "exact")
    assert not minsub.in_FT(ghz, t, 1, "bounded")
    with pytest.raises(ValueError):
        minsub.in_FT(v, t, 1, "fuzzy")


def test_bounded_membership_is_union_of_exact_strata(rng, ghz):
    t = linear_tree(3)
    cap = RankTuple.uniform(t, 2)
    for v in (ghz, dense.elementary([rng.standard_normal(2) for _ in range(3)]), rng.standard_normal((2, 2, 2))):
        actual = minsub.tree_rank(v, t)
        strata = [dict(zip(t.vertices, c)) for c in itertools.product(*[range(0, cap[a] + 1) for a in t.vertices])]
        exists = any(minsub.in_FT(v, t, RankTuple(t, s), "exact") for s in strata)
        assert minsub.in_FT(v, t, cap, "bounded") == exists == (actual <= cap)
