"""Exact statistical queries on folded circuit models.

Orthonormality reduces every query to algebra on the leaf weight matrices:
the expectation of a leaf node is its constant coefficient and the second
moment between two nodes is the inner product of their weight rows.  The
merge tree then propagates a per-region pair (mean vector e, second-moment
matrix M): Hadamard products of independent regions multiply elementwise
(e_p = e_u * e_v, M_p = M_u * M_v) and affine sums transform them as
e_s = W e + b, M_s = W M W^T + (W e) b^T + b (W e)^T + b b^T.  One pass per
query, no sampling anywhere.

Conditioning rewrites leaf weights through the column transforms in
:mod:`deeppce.basis`; restricting to an index set (for variance of the
conditional expectation, hence Sobol indices) zeroes every column carrying
degree outside the set.  Queries auto-fold a batch-normalized model copy;
the low-level passes insist on an already-folded model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import condition_transform, restricted_mask
from .circuit import CircuitModel, forward
from .errors import UnfoldedModelError
from .shallow import SobolResult
from .training import fold_batchnorm

__all__ = [
    "MomentState",
    "ConditionSpec",
    "input_moments",
    "propagate_moments",
    "mean",
    "covariance",
    "conditional_mean",
    "conditional_covariance",
    "covariance_of_conditional_expectation",
    "expected_conditional_covariance",
    "sobol_first_order",
]


@dataclass
class MomentState:
    """Per-region node means [P, width] and second moments [P, width, width]."""

    mean: np.ndarray
    second: np.ndarray


@dataclass
class ConditionSpec:
    """Conditioning assignment: 0-based input dim -> fixed value."""

    fixed: dict[int, float]

    def validated(self, d_in: int) -> "ConditionSpec":
        for dim in self.fixed:
            if not 0 <= dim < d_in:
                raise ValueError(f"conditioned dim {dim} out of range for d_in={d_in}")
        return self


def _require_folded(model: CircuitModel, op: str):
    if not model.initialized:
        raise ValueError("model weights not initialized")
    if not model.folded:
        raise UnfoldedModelError(
            f"{op} requires folded batch norm; call training.fold_batchnorm first"
        )


def input_moments(
    model: CircuitModel,
    spec: ConditionSpec | None = None,
    restrict=None,
) -> MomentState:
    """Leaf-region moment state in plain, conditioned, or restricted mode.

    Plain: e_n = w_{n,0}, M_{nm} = sum_a w_{n,a} w_{m,a}.  Conditioned leaves
    are transformed to PCEs over their free variables (fully fixed scopes
    degenerate to point masses with M = e e^T).  Restricted mode keeps only
    weight columns supported inside ``restrict``, which turns the propagated
    covariance into cov of E[Y | X_restrict].
    """
    _require_folded(model, "input_moments")
    if spec is not None and restrict is not None:
        raise ValueError("conditioning and restriction are mutually exclusive modes")
    if spec is not None:
        spec = spec.validated(model.d_in)
    if restrict is not None:
        restrict = set(int(i) for i in restrict)
        for dim in restrict:
            if not 0 <= dim < model.d_in:
                raise ValueError(f"restricted dim {dim} out of range")

    width = model.n_nodes
    n_regions = len(model.graph.partition)
    e = np.empty((n_regions, width))
    m2 = np.empty((n_regions, width, width))
    for c, (scope, bset) in enumerate(zip(model.graph.partition, model.leaf.bases)):
        w = model.leaf.weight[c, :, : len(bset)]
        if spec is not None and any(d in spec.fixed for d in scope):
            local = {j: spec.fixed[d] for j, d in enumerate(scope) if d in spec.fixed}
            fams = [model.families[d] for d in scope]
            v = w @ condition_transform(bset, fams, local)
            e[c] = v[:, 0]
            m2[c] = v @ v.T
        elif restrict is not None:
            keep_local = {j for j, d in enumerate(scope) if d in restrict}
            v = w * restricted_mask(bset, keep_local)
            e[c] = v[:, 0]
            m2[c] = v @ v.T
        else:
            e[c] = w[:, 0]
            m2[c] = w @ w.T
    return MomentState(mean=e, second=m2)


def propagate_moments(model: CircuitModel, state: MomentState):
    """Run the merge plan on a leaf state; returns (mean [O], second [O, O])."""
    _require_folded(model, "propagate_moments")
    e, m2 = state.mean, state.second
    if e.shape != (len(model.graph.partition), model.n_nodes):
        raise ValueError(f"leaf state shape {e.shape} does not match the partition")

    for layer in model.layers:
        e_p = e[layer.left] * e[layer.right]
        m_p = m2[layer.left] * m2[layer.right]
        w, b = layer.weight, layer.bias
        we = np.einsum("pnm,pm->pn", w, e_p)
        tmp = np.einsum("pnm,pml->pnl", w, m_p)
        m_s = np.einsum("pnl,pkl->pnk", tmp, w)
        m_s += we[:, :, None] * b[:, None, :]
        m_s += b[:, :, None] * we[:, None, :]
        m_s += b[:, :, None] * b[:, None, :]
        e = np.concatenate([we + b, e[layer.passthrough]], axis=0)
        m2 = np.concatenate([m_s, m2[layer.passthrough]], axis=0)

    w, b = model.head_weight, model.head_bias
    we = w @ e[0]
    out_mean = we + b
    out_second = w @ m2[0] @ w.T + np.outer(we, b) + np.outer(b, we) + np.outer(b, b)
    return out_mean, 0.5 * (out_second + out_second.T)


def _folded(model: CircuitModel) -> CircuitModel:
    return model if model.folded else fold_batchnorm(model)


def mean(model: CircuitModel) -> np.ndarray:
    model = _folded(model)
    out_mean, _ = propagate_moments(model, input_moments(model))
    return out_mean


def covariance(model: CircuitModel) -> np.ndarray:
    model = _folded(model)
    out_mean, out_second = propagate_moments(model, input_moments(model))
    return out_second - np.outer(out_mean, out_mean)


def conditional_mean(model: CircuitModel, spec: ConditionSpec) -> np.ndarray:
    model = _folded(model)
    out_mean, _ = propagate_moments(model, input_moments(model, spec=spec))
    return out_mean


def conditional_covariance(model: CircuitModel, spec: ConditionSpec) -> np.ndarray:
    model = _folded(model)
    out_mean, out_second = propagate_moments(model, input_moments(model, spec=spec))
    return out_second - np.outer(out_mean, out_mean)


def covariance_of_conditional_expectation(model: CircuitModel, subset) -> np.ndarray:
    """cov of E[Y | X_subset]; equals full covariance when subset is everything
    and the zero matrix when it is empty."""
    model = _folded(model)
    out_mean, out_second = propagate_moments(model, input_moments(model, restrict=subset))
    return out_second - np.outer(out_mean, out_mean)


def expected_conditional_covariance(model: CircuitModel, subset) -> np.ndarray:
    """E[cov(Y | X_subset)] by the law of total covariance:
    cov(Y) minus cov(E[Y | X_subset])."""
    model = _folded(model)
    return covariance(model) - covariance_of_conditional_expectation(model, subset)


def sobol_first_order(model: CircuitModel) -> SobolResult:
    """First-order indices S_i = Var(E[Y | X_i]) / Var(Y), one moment pass per input."""
    model = _folded(model)
    var = np.diag(covariance(model)).copy()
    zero = ~(var > 0.0)
    safe = np.where(zero, 1.0, var)
    out = np.zeros((model.d_out, model.d_in))
    for i in range(model.d_in):
        num = np.diag(covariance_of_conditional_expectation(model, {i}))
        out[:, i] = num / safe
    out[zero] = 0.0
    return SobolResult(indices=out, zero_variance=zero)


def conditional_forward_check(model: CircuitModel, x: np.ndarray) -> np.ndarray:
    """Conditioning on every input must reproduce the forward pass; used in tests."""
    model = _folded(model)
    spec = ConditionSpec({d: float(x[d]) for d in range(model.d_in)})
    return conditional_mean(model, spec)
