import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeppce.basis import (
    condition_transform,
    eval_tensor_basis,
    generate_indices,
    restricted_mask,
)
from deeppce.errors import ShapeError, TooLargeError
from deeppce.orthopoly import eval_basis, hermite_family, legendre_family

from oracles import expectation, gauss_rule, multi_indices_bruteforce


def test_total_degree_cardinality():
    for d, k in [(1, 4), (2, 3), (3, 3), (5, 2), (10, 4), (100, 3)]:
        assert len(generate_indices(d, k, 1.0)) == math.comb(d + k, d)


def test_small_set_matches_bruteforce_exactly():
    for d, k, q in [(2, 3, 1.0), (2, 3, 0.8), (3, 2, 1.0), (3, 4, 0.5), (4, 3, 0.75), (1, 6, 1.0)]:
        got = generate_indices(d, k, q).indices
        want = multi_indices_bruteforce(d, k, q)
        np.testing.assert_array_equal(got, want)


def test_hyperbolic_truncation_thins_interactions():
    full = generate_indices(2, 3, 1.0)
    thin = generate_indices(2, 3, 0.8)
    assert len(full) == 10
    assert len(thin) == 8
    kept = set(map(tuple, thin.indices))
    assert kept == set(map(tuple, full.indices)) - {(1, 2), (2, 1)}


def test_first_row_is_constant_and_order_graded():
    s = generate_indices(4, 3, 0.7)
    assert np.all(s.indices[0] == 0)
    totals = s.indices.sum(axis=1)
    assert np.all(np.diff(totals) >= 0)


def test_size_cap():
    with pytest.raises(TooLargeError):
        generate_indices(100, 4, 1.0)  # comb(104, 4) > 1e6, caught up front
    with pytest.raises(TooLargeError):
        generate_indices(4, 8, 0.9, max_size=50)  # caught during enumeration
    with pytest.raises(TooLargeError):
        generate_indices(3, 3, 1.0, max_size=10)


def test_argument_validation():
    with pytest.raises(ValueError):
        generate_indices(0, 2)
    with pytest.raises(ValueError):
        generate_indices(2, -1)
    with pytest.raises(ValueError):
        generate_indices(2, 2, 0.0)
    with pytest.raises(ValueError):
        generate_indices(2, 2, 1.5)


def test_max_order_zero_is_constant_only():
    s = generate_indices(3, 0)
    assert len(s) == 1
    np.testing.assert_array_equal(s.indices, [[0, 0, 0]])


@given(
    d=st.integers(1, 4),
    k=st.integers(0, 4),
    q=st.floats(0.3, 1.0),
)
@settings(max_examples=40)
def test_generated_indices_satisfy_norm_bound(d, k, q):
    s = generate_indices(d, k, q)
    norms = (s.indices.astype(float) ** q).sum(axis=1) ** (1.0 / q)
    assert np.all(norms <= k + 1e-9)
    # set equality with brute force, order aside
    want = {tuple(r) for r in multi_indices_bruteforce(d, k, q)}
    assert {tuple(r) for r in s.indices} == want


@given(q1=st.floats(0.3, 1.0), q2=st.floats(0.3, 1.0))
@settings(max_examples=25)
def test_q_monotonicity(q1, q2):
    lo, hi = sorted([q1, q2])
    small = {tuple(r) for r in generate_indices(3, 3, lo).indices}
    big = {tuple(r) for r in generate_indices(3, 3, hi).indices}
    assert small <= big


def test_tensor_basis_point_values():
    fams = [hermite_family(), hermite_family()]
    s = generate_indices(2, 2, 1.0)
    x = np.array([2.0, 3.0])
    vals = eval_tensor_basis(s, fams, x)
    cols = {tuple(r): i for i, r in enumerate(map(tuple, s.indices))}
    assert vals[cols[(0, 0)]] == pytest.approx(1.0)
    assert vals[cols[(1, 1)]] == pytest.approx(6.0)  # x1 * x2
    assert vals[cols[(1, 0)]] == pytest.approx(2.0)
    assert vals[cols[(2, 0)]] == pytest.approx((4.0 - 1.0) / math.sqrt(2.0))


def test_tensor_basis_is_product_of_univariate():
    fams = [hermite_family(0.3, 1.2), legendre_family(0.0, 2.0)]
    s = generate_indices(2, 3, 0.8)
    rng = np.random.default_rng(5)
    x = np.stack([rng.normal(0.3, 1.2, 20), rng.uniform(0.0, 2.0, 20)], axis=1)
    vals = eval_tensor_basis(s, fams, x)
    t0 = eval_basis(fams[0], 3, x[:, 0])
    t1 = eval_basis(fams[1], 3, x[:, 1])
    want = t0[:, s.indices[:, 0]] * t1[:, s.indices[:, 1]]
    np.testing.assert_allclose(vals, want, rtol=1e-13)


def test_tensor_basis_shape_guard():
    s = generate_indices(2, 2)
    with pytest.raises(ShapeError):
        eval_tensor_basis(s, [hermite_family()] * 2, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        eval_tensor_basis(s, [hermite_family()] * 3, np.zeros((4, 2)))


@pytest.mark.parametrize(
    "fams",
    [
        [hermite_family(), hermite_family()],
        [legendre_family(1.0, 2.0), hermite_family(-0.5, 2.0)],
    ],
)
def test_tensor_basis_orthonormal_under_product_measure(fams):
    s = generate_indices(2, 3, 1.0)
    gram = expectation(
        lambda p: eval_tensor_basis(s, fams, p)[:, :, None]
        * eval_tensor_basis(s, fams, p)[:, None, :],
        fams,
        n_nodes=8,
    )
    np.testing.assert_allclose(gram, np.eye(len(s)), atol=1e-9)


def test_condition_transform_against_quadrature():
    """E[Phi_a(X) | X_1 = v] computed two ways for every basis column."""
    fams = [hermite_family(), legendre_family(1.0, 2.0)]
    s = generate_indices(2, 3, 1.0)
    v = 1.7
    T = condition_transform(s, fams, {1: v})

    free = generate_indices(1, 3, 1.0)
    nodes, weights = gauss_rule(fams[0], 10)
    cond_vals = T @ eval_tensor_basis(free, [fams[0]], nodes[:, None]).T  # [n_idx, nodes]
    pts = np.stack([nodes, np.full_like(nodes, v)], axis=1)
    direct = eval_tensor_basis(s, fams, pts).T
    np.testing.assert_allclose(cond_vals, direct, atol=1e-11)
    # integrating out the free variable gives the conditional mean column
    np.testing.assert_allclose(direct @ weights, T[:, 0], atol=1e-11)


def test_condition_transform_all_dims_is_point_evaluation():
    fams = [hermite_family(), hermite_family(1.0, 0.5)]
    s = generate_indices(2, 2, 1.0)
    T = condition_transform(s, fams, {0: 0.4, 1: 1.2})
    assert T.shape == (len(s), 1)
    np.testing.assert_allclose(
        T[:, 0], eval_tensor_basis(s, fams, np.array([0.4, 1.2])), atol=1e-13
    )


def test_condition_transform_no_dims_is_permutation():
    # with nothing fixed every index is its own group, so T is an orthogonal
    # permutation (group order is plain lex, the set order graded lex) with
    # the constant index pinned to column 0
    s = generate_indices(2, 2, 1.0)
    T = condition_transform(s, [hermite_family()] * 2, {})
    np.testing.assert_array_equal(T @ T.T, np.eye(len(s)))
    assert set(np.abs(T).sum(axis=0)) == {1.0}
    assert T[0, 0] == 1.0


def test_condition_transform_rejects_out_of_scope_dims():
    s = generate_indices(2, 2, 1.0)
    with pytest.raises(ValueError):
        condition_transform(s, [hermite_family()] * 2, {2: 0.0})


def test_restricted_mask_explicit():
    s = generate_indices(2, 2, 1.0)
    mask = restricted_mask(s, {0})
    kept = {tuple(r) for r in s.indices[mask]}
    assert kept == {(0, 0), (1, 0), (2, 0)}
    np.testing.assert_array_equal(restricted_mask(s, {0, 1}), np.ones(len(s), bool))
    only_const = restricted_mask(s, set())
    assert {tuple(r) for r in s.indices[only_const]} == {(0, 0)}
