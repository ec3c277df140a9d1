import numpy as np
import pytest
from hypothesis import given, strategies as st

from deeppce.circuit import build, forward
from deeppce.errors import UnfoldedModelError
from deeppce.inference import (
    ConditionSpec,
    MomentState,
    conditional_covariance,
    conditional_forward_check,
    conditional_mean,
    covariance,
    covariance_of_conditional_expectation,
    expected_conditional_covariance,
    input_moments,
    mean,
    propagate_moments,
    sobol_first_order,
)
from deeppce.orthopoly import hermite_family, legendre_family
from deeppce.training import TrainConfig, fold_batchnorm, init_weights
from oracles import covariance_under, expectation


def cond_mean_quad(model, fixed, n_nodes=8):
    """E[f(X) | fixed dims] by quadrature over the free dimensions."""
    free = [d for d in range(model.d_in) if d not in fixed]
    fams = [model.families[d] for d in free]

    def f(pts_free):
        full = np.empty((pts_free.shape[0], model.d_in))
        full[:, free] = pts_free
        for d, v in fixed.items():
            full[:, d] = v
        return forward(model, full)

    return expectation(f, fams, n_nodes)


def cond_cov_quad(model, fixed, n_nodes=8):
    free = [d for d in range(model.d_in) if d not in fixed]
    fams = [model.families[d] for d in free]

    def f(pts_free):
        full = np.empty((pts_free.shape[0], model.d_in))
        full[:, free] = pts_free
        for d, v in fixed.items():
            full[:, d] = v
        return forward(model, full)

    return covariance_under(f, fams, n_nodes)


def cov_of_cond_exp_quad(model, subset, n_nodes=8):
    """cov of E[f | X_subset] by nested quadrature."""
    subset = sorted(subset)
    fams_s = [model.families[d] for d in subset]

    def g(pts_s):
        out = np.empty((pts_s.shape[0], model.d_out))
        for i, row in enumerate(pts_s):
            out[i] = cond_mean_quad(model, dict(zip(subset, row)), n_nodes)
        return out

    return covariance_under(g, fams_s, n_nodes)


@pytest.fixture(scope="module")
def folded_model(trained_small_model):
    return fold_batchnorm(trained_small_model)


def product_model(head_weight=1.0, head_bias=0.0):
    """Hand-wired circuit computing head_weight * x0 * x1 + head_bias."""
    m = build(d_in=2, d_out=1, scope_size=1, max_order=1, n_nodes=1, seed=3)
    init_weights(m, TrainConfig(seed=0))
    for region, dim_col in zip(np.argsort(m.singleton_dims), (1, 1)):
        m.leaf.weight[region] = 0.0
        m.leaf.weight[region, 0, dim_col] = 1.0
    (layer,) = m.layers
    layer.weight[...] = np.eye(1)
    layer.bias[...] = 0.0
    m.head_weight[...] = head_weight
    m.head_bias[...] = head_bias
    m.folded = True  # exact wiring, no normalization wanted
    return m


def test_low_level_passes_require_folded_model(trained_small_model):
    assert not trained_small_model.folded
    with pytest.raises(UnfoldedModelError):
        input_moments(trained_small_model)
    state = MomentState(
        mean=np.zeros((3, 3)), second=np.zeros((3, 3, 3))
    )
    with pytest.raises(UnfoldedModelError):
        propagate_moments(trained_small_model, state)


def test_high_level_queries_autofold_without_mutating(trained_small_model, folded_model):
    got = mean(trained_small_model)
    np.testing.assert_allclose(got, mean(folded_model), atol=1e-12)
    assert not trained_small_model.folded
    np.testing.assert_allclose(
        covariance(trained_small_model), covariance(folded_model), atol=1e-12
    )


def test_propagate_rejects_mismatched_state(folded_model):
    bad = MomentState(mean=np.zeros((1, 3)), second=np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        propagate_moments(folded_model, bad)


def test_mean_and_covariance_match_quadrature(folded_model):
    f = lambda pts: forward(folded_model, pts)
    np.testing.assert_allclose(
        mean(folded_model), expectation(f, folded_model.families, 8), atol=1e-8
    )
    cov = covariance(folded_model)
    np.testing.assert_allclose(
        cov, covariance_under(f, folded_model.families, 8), atol=1e-8
    )
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(cov).min() >= -1e-9


def test_conditional_moments_match_quadrature(folded_model):
    fixed = {0: 0.37, 3: -0.81}
    spec = ConditionSpec(fixed)
    np.testing.assert_allclose(
        conditional_mean(folded_model, spec),
        cond_mean_quad(folded_model, fixed),
        atol=1e-8,
    )
    ccov = conditional_covariance(folded_model, spec)
    np.testing.assert_allclose(ccov, cond_cov_quad(folded_model, fixed), atol=1e-8)
    assert np.linalg.eigvalsh(ccov).min() >= -1e-9


def test_fully_conditioned_mean_reproduces_forward(folded_model):
    x = np.random.default_rng(5).normal(size=(5, folded_model.d_in))
    want = forward(folded_model, x)
    got = np.vstack([conditional_forward_check(folded_model, row) for row in x])
    np.testing.assert_allclose(got, want, atol=1e-8)
    spec = ConditionSpec({d: 0.4 for d in range(folded_model.d_in)})
    np.testing.assert_allclose(
        conditional_covariance(folded_model, spec), 0.0, atol=1e-10
    )


def test_cov_of_conditional_expectation_matches_quadrature(folded_model):
    got = covariance_of_conditional_expectation(folded_model, {0, 1})
    np.testing.assert_allclose(got, cov_of_cond_exp_quad(folded_model, {0, 1}), atol=1e-8)
    # conditioning on everything explains all variance, on nothing none of it
    np.testing.assert_allclose(
        covariance_of_conditional_expectation(folded_model, set(range(5))),
        covariance(folded_model),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        covariance_of_conditional_expectation(folded_model, set()), 0.0, atol=1e-12
    )


def test_law_of_total_covariance(folded_model):
    cov = covariance(folded_model)
    for subset in [set(), {0}, {0, 1}, {1, 3, 4}, set(range(5))]:
        explained = covariance_of_conditional_expectation(folded_model, subset)
        residual = expected_conditional_covariance(folded_model, subset)
        np.testing.assert_allclose(explained + residual, cov, atol=1e-12)
    # residual term against an independent nested-quadrature route
    want = expectation(
        lambda pts: np.stack(
            [cond_cov_quad(folded_model, {1: float(v)}) for v in pts[:, 0]]
        ),
        [folded_model.families[1]],
        8,
    )
    np.testing.assert_allclose(
        expected_conditional_covariance(folded_model, {1}), want, atol=1e-8
    )


def test_sobol_indices_match_quadrature(folded_model):
    res = sobol_first_order(folded_model)
    var = np.diag(covariance(folded_model))
    for i in range(folded_model.d_in):
        want = np.diag(cov_of_cond_exp_quad(folded_model, {i})) / var
        np.testing.assert_allclose(res.indices[:, i], want, atol=1e-8)
    assert not res.zero_variance.any()
    assert (res.indices >= -1e-12).all()
    assert (res.indices.sum(axis=1) <= 1.0 + 1e-9).all()


def test_product_circuit_analytics():
    # Y = X0 * X1 with independent standard normals: mean 0, variance 1,
    # Y | X0=a is a*X1 so the conditional mean is 0 and the conditional
    # variance a^2; both first-order indices vanish (pure interaction).
    m = product_model()
    np.testing.assert_allclose(mean(m), [0.0], atol=1e-12)
    np.testing.assert_allclose(covariance(m), [[1.0]], atol=1e-12)
    a = 1.7
    np.testing.assert_allclose(conditional_mean(m, ConditionSpec({0: a})), 0.0, atol=1e-12)
    np.testing.assert_allclose(
        conditional_covariance(m, ConditionSpec({0: a})), [[a**2]], atol=1e-12
    )
    np.testing.assert_allclose(
        conditional_mean(m, ConditionSpec({0: a, 1: -2.0})), [-2.0 * a], atol=1e-12
    )
    np.testing.assert_allclose(
        covariance_of_conditional_expectation(m, {0}), 0.0, atol=1e-12
    )
    np.testing.assert_allclose(
        expected_conditional_covariance(m, {0}), [[1.0]], atol=1e-12
    )
    res = sobol_first_order(m)
    np.testing.assert_allclose(res.indices, 0.0, atol=1e-12)
    assert not res.zero_variance.any()


def test_constant_model_flags_zero_variance():
    m = product_model(head_weight=0.0, head_bias=2.5)
    np.testing.assert_allclose(mean(m), [2.5], atol=1e-14)
    np.testing.assert_allclose(covariance(m), 0.0, atol=1e-14)
    res = sobol_first_order(m)
    assert res.zero_variance.all()
    np.testing.assert_allclose(res.indices, 0.0)


def test_mixed_family_moments_match_quadrature():
    fams = [legendre_family(1.0, 2.0), hermite_family(), legendre_family(-1.0, 1.0)]
    m = build(d_in=3, d_out=2, scope_size=2, max_order=2, n_nodes=2, seed=9,
              families=fams)
    init_weights(m, TrainConfig(seed=4))
    m.folded = True  # init-time batch norm is the identity
    f = lambda pts: forward(m, pts)
    np.testing.assert_allclose(mean(m), expectation(f, fams, 8), atol=1e-8)
    np.testing.assert_allclose(covariance(m), covariance_under(f, fams, 8), atol=1e-8)
    fixed = {1: 0.6}
    np.testing.assert_allclose(
        conditional_mean(m, ConditionSpec(fixed)), cond_mean_quad(m, fixed), atol=1e-8
    )
    np.testing.assert_allclose(
        conditional_covariance(m, ConditionSpec(fixed)), cond_cov_quad(m, fixed),
        atol=1e-8,
    )


def test_argument_validation(folded_model):
    with pytest.raises(ValueError):
        conditional_mean(folded_model, ConditionSpec({9: 0.0}))
    with pytest.raises(ValueError):
        covariance_of_conditional_expectation(folded_model, {-1})
    with pytest.raises(ValueError):
        input_moments(folded_model, spec=ConditionSpec({0: 0.0}), restrict={1})


@given(seed=st.integers(0, 10_000))
def test_total_covariance_identity_random_models(seed):
    m = build(d_in=3, d_out=1, scope_size=1, max_order=2, n_nodes=2, seed=seed)
    init_weights(m, TrainConfig(seed=seed + 1))
    m.folded = True
    cov = covariance(m)
    assert cov[0, 0] >= -1e-10
    subset = {seed % 3}
    part = covariance_of_conditional_expectation(m, subset)
    rest = expected_conditional_covariance(m, subset)
    np.testing.assert_allclose(part + rest, cov, atol=1e-12)
    assert part[0, 0] >= -1e-10
