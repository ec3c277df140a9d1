"""Classical single-level PCE: least-squares fit, prediction, exact moments.

The orthonormal basis makes every statistical query weight algebra: the mean
is the constant coefficient, the covariance is the Gram matrix of the
remaining columns, and conditioning or restriction are the column transforms
from :mod:`deeppce.basis`.  Serves both as a baseline and as the ground truth
the deep model must match in the single-region case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import MultiIndexSet, condition_transform, eval_tensor_basis, restricted_mask
from .errors import RankDeficiencyError, ShapeError, TooLargeError

__all__ = [
    "ShallowPce",
    "SobolResult",
    "fit_least_squares",
    "predict",
    "mean",
    "variance",
    "covariance",
    "conditional_mean",
    "conditional_covariance",
    "covariance_of_conditional_expectation",
    "expected_conditional_covariance",
    "sobol_first_order",
]

DESIGN_ENTRY_CAP = 10**8


@dataclass
class ShallowPce:
    basis: MultiIndexSet
    families: list
    weights: np.ndarray  # [n_outputs, len(basis)]; column 0 is the constant term

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0]


@dataclass
class SobolResult:
    """First-order indices [n_outputs, d_in]; zero-variance rows are zeroed and flagged."""

    indices: np.ndarray
    zero_variance: np.ndarray


def _as_2d_targets(targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    return targets[:, None] if targets.ndim == 1 else targets


def fit_least_squares(
    basis: MultiIndexSet,
    families,
    inputs: np.ndarray,
    targets: np.ndarray,
    ridge: float = 0.0,
) -> ShallowPce:
    """Penalized least squares via an orthogonal-factorization solve.

    ridge = 0 requires at least as many samples as basis functions; the
    design matrix is capped at DESIGN_ENTRY_CAP entries to keep desk-scale
    memory honest (a D = 100, K = 3 basis already trips it for modest N).
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    inputs = np.asarray(inputs, dtype=float)
    targets = _as_2d_targets(targets)
    if inputs.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ShapeError("inputs must be [N, D] with matching target rows")
    n = inputs.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    if n * len(basis) > DESIGN_ENTRY_CAP:
        raise TooLargeError(
            f"design matrix {n} x {len(basis)} exceeds {DESIGN_ENTRY_CAP} entries; "
            "reduce the basis or the sample count"
        )
    if n < len(basis) and ridge == 0.0:
        raise RankDeficiencyError(
            f"{n} samples cannot determine {len(basis)} coefficients; set ridge > 0"
        )

    design = eval_tensor_basis(basis, families, inputs)
    if ridge > 0.0:
        design = np.vstack([design, np.sqrt(ridge) * np.eye(len(basis))])
        targets = np.vstack([targets, np.zeros((len(basis), targets.shape[1]))])
    sol, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    return ShallowPce(basis=basis, families=list(families), weights=sol.T)


def predict(model: ShallowPce, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    phi = eval_tensor_basis(model.basis, model.families, x)
    return phi @ model.weights.T


def mean(model: ShallowPce) -> np.ndarray:
    return model.weights[:, 0].copy()


def variance(model: ShallowPce) -> np.ndarray:
    return (model.weights[:, 1:] ** 2).sum(axis=1)


def covariance(model: ShallowPce) -> np.ndarray:
    w = model.weights[:, 1:]
    return w @ w.T


def conditional_mean(model: ShallowPce, fixed: dict[int, float]) -> np.ndarray:
    T = condition_transform(model.basis, model.families, fixed)
    return model.weights @ T[:, 0]


def conditional_covariance(model: ShallowPce, fixed: dict[int, float]) -> np.ndarray:
    T = condition_transform(model.basis, model.families, fixed)
    v = model.weights @ T
    return v[:, 1:] @ v[:, 1:].T


def covariance_of_conditional_expectation(model: ShallowPce, keep) -> np.ndarray:
    m = restricted_mask(model.basis, keep)
    m = m.copy()
    m[0] = False  # drop the constant: covariance, not second moment
    w = model.weights[:, m]
    return w @ w.T


def expected_conditional_covariance(model: ShallowPce, keep) -> np.ndarray:
    return covariance(model) - covariance_of_conditional_expectation(model, keep)


def sobol_first_order(model: ShallowPce) -> SobolResult:
    var = variance(model)
    zero = ~(var > 0.0)
    safe_var = np.where(zero, 1.0, var)
    d = model.basis.scope_dim
    out = np.zeros((model.n_outputs, d))
    for i in range(d):
        m = restricted_mask(model.basis, {i})
        m = m.copy()
        m[0] = False
        out[:, i] = (model.weights[:, m] ** 2).sum(axis=1) / safe_var
    out[zero] = 0.0
    return SobolResult(indices=out, zero_variance=zero)
