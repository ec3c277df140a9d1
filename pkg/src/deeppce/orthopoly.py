"""Univariate orthonormal polynomial families and Gaussian quadrature.

Two families are supported, one per input marginal:

* ``hermite``: probabilists' Hermite polynomials, orthonormal under N(0, 1).
* ``legendre``: rescaled Legendre polynomials, orthonormal under U(-1, 1).

A family carries an affine map from the user's marginal to the canonical
domain, z = (x - loc) / scale, so e.g. U(1, 2) is served by the canonical
Legendre family evaluated at z = 2x - 3.  Orthonormal means E[p_i p_j] equals
the Kronecker delta under the mapped marginal, which is what collapses every
moment integral downstream into plain weight algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DomainError, UnsupportedDegreeError

__all__ = [
    "DEGREE_CAP",
    "PolyFamily",
    "QuadratureRule",
    "hermite_family",
    "legendre_family",
    "family_from_marginal",
    "eval_basis",
    "recurrence_offdiag",
    "quadrature",
]

# the paper-scale experiments never exceed total order 3; 16 leaves headroom
# without inviting recurrence round-off concerns
DEGREE_CAP = 16

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class PolyFamily:
    """Orthonormal family descriptor: kind plus marginal-to-canonical affine map."""

    kind: str  # "hermite" | "legendre"
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("hermite", "legendre"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("family scale must be positive")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "hermite":
            return (-np.inf, np.inf)
        return (self.loc - self.scale, self.loc + self.scale)

    def to_canonical(self, x):
        return (np.asarray(x, dtype=float) - self.loc) / self.scale

    def from_canonical(self, z):
        return self.loc + self.scale * np.asarray(z, dtype=float)

    def marginal(self) -> dict:
        """Marginal descriptor of the mapped input variable (for file headers)."""
        if self.kind == "hermite":
            return {"dist": "normal", "mean": self.loc, "std": self.scale}
        return {"dist": "uniform", "low": self.loc - self.scale, "high": self.loc + self.scale}


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def hermite_family(mean: float = 0.0, std: float = 1.0) -> PolyFamily:
    """Family for X ~ N(mean, std^2)."""
    return PolyFamily("hermite", loc=float(mean), scale=float(std))


def legendre_family(low: float = -1.0, high: float = 1.0) -> PolyFamily:
    """Family for X ~ U(low, high)."""
    if not high > low:
        raise ValueError("need high > low")
    return PolyFamily("legendre", loc=(low + high) / 2.0, scale=(high - low) / 2.0)


def family_from_marginal(marginal: dict) -> PolyFamily:
    dist = marginal.get("dist")
    if dist == "normal":
        return hermite_family(marginal["mean"], marginal["std"])
    if dist == "uniform":
        return legendre_family(marginal["low"], marginal["high"])
    raise ValueError(f"unsupported marginal {marginal!r}")


def _check_degree(max_degree: int):
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    if max_degree > DEGREE_CAP:
        raise UnsupportedDegreeError(
            f"degree {max_degree} exceeds the supported cap {DEGREE_CAP}"
        )


def recurrence_offdiag(family: PolyFamily, n: int) -> np.ndarray:
    """Off-diagonal b_1..b_{n-1} of the Jacobi matrix; diagonals are zero.

    Both measures are symmetric, so the three-term recurrence is
    z p_k = b_{k+1} p_{k+1} + b_k p_{k-1} with
    b_k = sqrt(k) (hermite) or k / sqrt(4k^2 - 1) (legendre).
    """
    k = np.arange(1, n, dtype=float)
    if family.kind == "hermite":
        return np.sqrt(k)
    return k / np.sqrt(4.0 * k * k - 1.0)


def eval_basis(family: PolyFamily, max_degree: int, x) -> np.ndarray:
    """Evaluate [p_0(x), ..., p_max_degree(x)], stacked on a trailing axis.

    Accepts scalars or arrays; returns shape x.shape + (max_degree + 1,).
    Raises DomainError for points outside a bounded family's support.
    """
    _check_degree(max_degree)
    z = family.to_canonical(x)
    if family.kind == "legendre" and np.any(np.abs(z) > 1.0 + _DOMAIN_SLACK):
        raise DomainError("evaluation point outside the uniform family's support")

    z = np.atleast_1d(z)
    out = np.empty(z.shape + (max_degree + 1,), dtype=float)
    out[..., 0] = 1.0
    if max_degree >= 1:
        b = recurrence_offdiag(family, max_degree + 1)
        out[..., 1] = z / b[0]
        for k in range(1, max_degree):
            out[..., k + 1] = (z * out[..., k] - b[k - 1] * out[..., k - 1]) / b[k]
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return out[0]
    return out


def quadrature(family: PolyFamily, n_nodes: int) -> QuadratureRule:
    """Gauss rule with n_nodes points, exact through degree 2*n_nodes - 1.

    Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are the
    squared first components of the normalized eigenvectors (the measures are
    probability measures, so the zeroth moment is 1 and weights sum to 1).
    """
    if not 1 <= n_nodes <= 64:
        raise ValueError("n_nodes must be in [1, 64]")
    diag = np.zeros(n_nodes)
    if n_nodes == 1:
        nodes_z = np.array([0.0])
        weights = np.array([1.0])
    else:
        off = recurrence_offdiag(family, n_nodes)
        nodes_z, vecs = eigh_tridiagonal(diag, off)
        weights = vecs[0] ** 2
    return QuadratureRule(nodes=family.from_canonical(nodes_z), weights=weights)
