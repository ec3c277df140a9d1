"""Multi-index sets, truncation schemes, and tensor-product basis evaluation.

A multivariate basis function is identified by a multi-index a = (a_1..a_D)
of per-variable degrees; its value is the product of univariate orthonormal
polynomials.  Truncation keeps indices with (sum_d a_d^q)^(1/q) <= K; q = 1
is plain total degree, q < 1 thins out interaction terms.

Also hosts the two column transforms used for exact inference on PCE weight
matrices: conditioning (fix some variables, regroup the rest) and restriction
(keep only indices supported on a subset, for variance-of-conditional-mean).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TooLargeError
from .orthopoly import PolyFamily, eval_basis

__all__ = [
    "MultiIndexSet",
    "generate_indices",
    "eval_tensor_basis",
    "condition_transform",
    "restricted_mask",
]

DEFAULT_MAX_SET_SIZE = 10**6

# slack on the <= K comparison: q-norms of integer vectors are irrational
_Q_SLACK = 1e-12


@dataclass
class MultiIndexSet:
    """Ordered truncated multi-index set; row 0 is always the all-zeros index."""

    scope_dim: int
    max_order: int
    q_norm: float
    indices: np.ndarray = field(repr=False)  # [n, scope_dim] int64, graded-lex order

    def __len__(self) -> int:
        return self.indices.shape[0]


def _graded_lex_order(indices: np.ndarray) -> np.ndarray:
    total = indices.sum(axis=1)
    keys = tuple(indices[:, d] for d in reversed(range(indices.shape[1]))) + (total,)
    return np.lexsort(keys)


def generate_indices(
    scope_dim: int,
    max_order: int,
    q_norm: float = 1.0,
    max_size: int = DEFAULT_MAX_SET_SIZE,
) -> MultiIndexSet:
    """All multi-indices with (sum a_d^q)^(1/q) <= max_order, graded-lex sorted.

    Raises TooLargeError when the set would exceed max_size (for q = 1 the
    cardinality (K + D choose D) is checked up front).
    """
    if scope_dim < 1:
        raise ValueError("scope_dim must be >= 1")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if not 0.0 < q_norm <= 1.0:
        raise ValueError("q_norm must be in (0, 1]")

    if q_norm == 1.0 and math.comb(scope_dim + max_order, scope_dim) > max_size:
        raise TooLargeError(
            f"total-order basis has {math.comb(scope_dim + max_order, scope_dim)} "
            f"indices, above the cap {max_size}"
        )

    # per-degree contribution in q-space; monotone in the degree, so each
    # partial index admits a contiguous range of next degrees
    degree_cost = np.arange(max_order + 1, dtype=float) ** q_norm
    budget = float(max_order + _Q_SLACK) ** q_norm

    rows = np.zeros((1, 0), dtype=np.int64)
    spent = np.zeros(1)
    for _ in range(scope_dim):
        counts = np.searchsorted(degree_cost, budget - spent, side="right")
        counts = np.minimum(counts, max_order + 1)
        n_new = int(counts.sum())
        if n_new > max_size:
            raise TooLargeError(
                f"multi-index set exceeds the cap {max_size} during enumeration"
            )
        rep = np.repeat(np.arange(rows.shape[0]), counts)
        offsets = np.cumsum(counts) - counts
        new_col = np.arange(n_new) - np.repeat(offsets, counts)
        rows = np.hstack([rows[rep], new_col[:, None]])
        spent = spent[rep] + degree_cost[new_col]

    rows = rows[_graded_lex_order(rows)]
    return MultiIndexSet(scope_dim=scope_dim, max_order=max_order, q_norm=q_norm, indices=rows)


def _univariate_tables(index_set: MultiIndexSet, families, x: np.ndarray) -> list:
    tables = []
    for d in range(index_set.scope_dim):
        deg = int(index_set.indices[:, d].max()) if len(index_set) else 0
        tables.append(eval_basis(families[d], deg, x[..., d]))
    return tables


def eval_tensor_basis(index_set: MultiIndexSet, families, x) -> np.ndarray:
    """Evaluate every tensor-product basis function at x.

    x has shape [..., scope_dim]; the result has shape [..., len(index_set)],
    columns in the set's order (column 0 is the constant, identically 1).
    """
    x = np.asarray(x, dtype=float)
    if len(families) != index_set.scope_dim or x.shape[-1] != index_set.scope_dim:
        raise ShapeError(
            f"expected {index_set.scope_dim} input dims, got "
            f"{len(families)} families and trailing axis {x.shape[-1]}"
        )
    tables = _univariate_tables(index_set, families, x)
    out = np.ones(x.shape[:-1] + (len(index_set),))
    for d in range(index_set.scope_dim):
        out *= tables[d][..., index_set.indices[:, d]]
    return out


def condition_transform(
    index_set: MultiIndexSet, families, fixed: dict[int, float]
) -> np.ndarray:
    """Column transform T for conditioning a PCE on fixed variable values.

    ``fixed`` maps scope-local dim positions to values.  For a weight matrix
    W [m, n_indices], V = W @ T is the weight matrix of the conditional PCE
    over the remaining free variables: each original index contributes its
    fixed-dim polynomial factors (numbers) to the group of indices agreeing
    with it on the free dims.  Column 0 of T is the all-zero free pattern, so
    V[:, 0] is the conditional mean and V @ V.T the conditional second moment
    (orthonormality in the free variables does the rest).

    Conditioning on every dim yields a single column of point evaluations.
    """
    dims = range(index_set.scope_dim)
    for d in fixed:
        if not 0 <= d < index_set.scope_dim:
            raise ValueError(f"fixed dim {d} outside scope of size {index_set.scope_dim}")
    free = [d for d in dims if d not in fixed]

    idx = index_set.indices
    factors = np.ones(len(index_set))
    for d, value in fixed.items():
        deg = int(idx[:, d].max()) if len(index_set) else 0
        table = eval_basis(families[d], deg, float(value))
        factors *= table[idx[:, d]]

    free_part = idx[:, free]
    # unique() sorts rows lexicographically, which puts the all-zeros
    # free pattern first
    _, inverse = np.unique(free_part, axis=0, return_inverse=True)
    n_groups = int(inverse.max()) + 1
    T = np.zeros((len(index_set), n_groups))
    T[np.arange(len(index_set)), inverse] = factors
    return T


def restricted_mask(index_set: MultiIndexSet, keep) -> np.ndarray:
    """Boolean column mask: indices whose support lies inside ``keep``.

    ``keep`` holds scope-local dim positions.  Zeroing the complementary
    columns of a weight matrix turns its moment algebra into moments of the
    conditional expectation given X_keep.  The constant index always survives.
    """
    keep = set(keep)
    drop = [d for d in range(index_set.scope_dim) if d not in keep]
    if not drop:
        return np.ones(len(index_set), dtype=bool)
    return (index_set.indices[:, drop] == 0).all(axis=1)
