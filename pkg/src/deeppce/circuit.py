"""Deep PCE circuit: random scope partition, merge tree, layered forward pass.

The model is a tree-shaped polynomial circuit.  Leaf regions carry small
PCEs over disjoint variable scopes (n_nodes of them per region, sharing the
region's basis).  Merge layers repeatedly pair regions: node vectors of the
two children are multiplied elementwise (scopes are disjoint, so products
stay orthogonal expansions) and an affine sum layer remixes the result.  An
odd region count passes the last region through unchanged.  The output head
is one final affine map from the root region's nodes to the outputs.

Batch norm sits after every internal sum layer.  Its training-time statistics
live here; folding them into weights and biases is `training.fold_batchnorm`.
The whole layer stack is stored stacked per merge layer ([pairs, out, in]
weight tensors), so a forward pass is a handful of einsum calls.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .basis import MultiIndexSet, generate_indices
from .errors import (
    FileVersionError,
    MalformedFileError,
    NonFiniteError,
    ShapeError,
)
from .orthopoly import PolyFamily, eval_basis, hermite_family
from .rng import make_rng

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "RegionGraph",
    "LeafLayer",
    "MergeLayer",
    "CircuitModel",
    "build",
    "forward",
    "audit_structure",
    "save",
    "load",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_MAGIC = "DEEPPCE-MODEL"
_VERSION = 1


@dataclass
class MergeLayer:
    """One merge step: pair children, Hadamard-multiply, affine sum, batch norm."""

    left: np.ndarray  # [n_pairs] child region indices
    right: np.ndarray  # [n_pairs]
    passthrough: np.ndarray  # [n_pass] child region indices, appended unchanged
    weight: np.ndarray | None = None  # [n_pairs, width, width]
    bias: np.ndarray | None = None  # [n_pairs, width]
    bn_scale: np.ndarray | None = None
    bn_shift: np.ndarray | None = None
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None

    @property
    def n_pairs(self) -> int:
        return len(self.left)

    @property
    def n_out(self) -> int:
        return len(self.left) + len(self.passthrough)


@dataclass
class LeafLayer:
    bases: list[MultiIndexSet]
    sizes: np.ndarray  # [n_regions] basis cardinalities
    mask: np.ndarray  # [n_regions, 1, max_size] 0/1, zeroes padding columns
    weight: np.ndarray | None = None  # [n_regions, width, max_size]


@dataclass
class RegionGraph:
    partition: list[tuple[int, ...]]
    layer_scopes: list[list[tuple[int, ...]]]  # scopes after each merge layer
    seed: int


@dataclass
class CircuitModel:
    d_in: int
    d_out: int
    scope_size: int
    max_order: int
    n_nodes: int
    seed: int
    families: list[PolyFamily]
    graph: RegionGraph
    leaf: LeafLayer
    layers: list[MergeLayer]
    head_weight: np.ndarray | None = None
    head_bias: np.ndarray | None = None
    initialized: bool = False
    folded: bool = False
    bn_stats_ready: bool = False
    # dims in region order when every scope is a single variable (fast path)
    singleton_dims: np.ndarray | None = field(default=None, repr=False)

    def copy(self) -> "CircuitModel":
        return copy.deepcopy(self)

    def parameters(self):
        """Ordered (name, array) pairs of trainable tensors.

        While batch norm is live its shift parameter is the effective bias of
        each internal sum layer (mean subtraction makes the plain bias inert),
        so unfolded models train weight + bn affine and the bias stays zero
        until folding writes the absorbed shift into it.
        """
        out = [("leaf.weight", self.leaf.weight)]
        for i, layer in enumerate(self.layers):
            out.append((f"layers[{i}].weight", layer.weight))
            if self.folded:
                out.append((f"layers[{i}].bias", layer.bias))
            else:
                out.append((f"layers[{i}].bn_scale", layer.bn_scale))
                out.append((f"layers[{i}].bn_shift", layer.bn_shift))
        out.append(("head.weight", self.head_weight))
        out.append(("head.bias", self.head_bias))
        return out


def _merge_plan(n_regions: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    plan = []
    n = n_regions
    while n > 1:
        pairs = n // 2
        left = np.arange(0, 2 * pairs, 2)
        right = np.arange(1, 2 * pairs, 2)
        passthrough = np.array([n - 1], dtype=int) if n % 2 else np.array([], dtype=int)
        plan.append((left, right, passthrough))
        n = pairs + len(passthrough)
    return plan


def build(
    d_in: int,
    d_out: int,
    scope_size: int,
    max_order: int,
    n_nodes: int,
    seed: int,
    families=None,
) -> CircuitModel:
    """Construct the circuit skeleton (weights unallocated; see training.init_weights).

    The input variables are shuffled with a seeded generator and chunked into
    ceil(d_in / scope_size) scopes; merge layers then halve the region count
    (odd counts pass the last region through) until one region spans all
    inputs.
    """
    if d_in < 1 or d_out < 1:
        raise ValueError("d_in and d_out must be >= 1")
    if not 1 <= scope_size <= d_in:
        raise ValueError("need 1 <= scope_size <= d_in")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")

    if families is None:
        families = [hermite_family() for _ in range(d_in)]
    elif isinstance(families, PolyFamily):
        families = [families] * d_in
    else:
        families = list(families)
        if len(families) != d_in:
            raise ShapeError(f"need {d_in} families, got {len(families)}")

    perm = make_rng(seed, "partition").permutation(d_in)
    partition = [
        tuple(int(v) for v in perm[i : i + scope_size])
        for i in range(0, d_in, scope_size)
    ]
    bases = [generate_indices(len(scope), max_order) for scope in partition]
    sizes = np.array([len(b) for b in bases])
    max_size = int(sizes.max())
    mask = np.zeros((len(partition), 1, max_size))
    for c, s in enumerate(sizes):
        mask[c, 0, :s] = 1.0

    scopes = list(partition)
    layer_scopes = []
    layers = []
    for left, right, passthrough in _merge_plan(len(partition)):
        scopes = [scopes[l] + scopes[r] for l, r in zip(left, right)] + [
            scopes[p] for p in passthrough
        ]
        layer_scopes.append(scopes)
        layers.append(MergeLayer(left=left, right=right, passthrough=passthrough))

    singleton = None
    if all(len(s) == 1 for s in partition):
        singleton = np.array([s[0] for s in partition])

    return CircuitModel(
        d_in=d_in,
        d_out=d_out,
        scope_size=scope_size,
        max_order=max_order,
        n_nodes=n_nodes,
        seed=seed,
        families=families,
        graph=RegionGraph(partition=partition, layer_scopes=layer_scopes, seed=seed),
        leaf=LeafLayer(bases=bases, sizes=sizes, mask=mask),
        layers=layers,
        singleton_dims=singleton,
    )


def leaf_basis_values(model: CircuitModel, x: np.ndarray) -> np.ndarray:
    """Per-region tensor basis values, zero-padded to [B, n_regions, max_size]."""
    n_regions = len(model.graph.partition)
    max_size = model.leaf.mask.shape[2]
    table = np.empty((x.shape[0], model.d_in, model.max_order + 1))
    by_family: dict[PolyFamily, list[int]] = {}
    for d, fam in enumerate(model.families):
        by_family.setdefault(fam, []).append(d)
    for fam, dims in by_family.items():
        table[:, dims, :] = eval_basis(fam, model.max_order, x[:, dims])

    if model.singleton_dims is not None:
        return table[:, model.singleton_dims, :]

    phi = np.zeros((x.shape[0], n_regions, max_size))
    for c, (scope, bset) in enumerate(zip(model.graph.partition, model.leaf.bases)):
        vals = np.ones((x.shape[0], len(bset)))
        for j, d in enumerate(scope):
            vals *= table[:, d, bset.indices[:, j]]
        phi[:, c, : len(bset)] = vals
    return phi


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced at {where}")


def apply_weights(values: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Per-region linear map: [B, P, m] x [P, n, m] -> [B, P, n].

    Batched matmul instead of einsum; the contraction sits on the hot path
    of both training and bulk evaluation.
    """
    return np.matmul(values.transpose(1, 0, 2), weight.transpose(0, 2, 1)).transpose(1, 0, 2)


def forward(
    model: CircuitModel,
    x: np.ndarray,
    training: bool = False,
    cache: dict | None = None,
) -> np.ndarray:
    """Evaluate the circuit on a batch [B, d_in] -> [B, d_out].

    Inference mode applies batch norm with running statistics (no-op on a
    folded model); training mode uses batch statistics, updates the running
    ones, and fills ``cache`` for the backward pass when a dict is passed.
    """
    if not model.initialized:
        raise ValueError("model weights not initialized; call training.init_weights")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeError(f"expected input of shape [B, {model.d_in}], got {x.shape}")

    phi = leaf_basis_values(model, x)
    nodes = apply_weights(phi, model.leaf.weight)
    _check_finite(nodes, "leaf layer")
    if cache is not None:
        cache["phi"] = phi
        cache["nodes"] = [nodes]
        cache["layers"] = []

    for li, layer in enumerate(model.layers):
        prod = nodes[:, layer.left, :] * nodes[:, layer.right, :]
        s = apply_weights(prod, layer.weight) + layer.bias
        entry = {"prod": prod}
        if not model.folded:
            if training:
                if x.shape[0] < 2:
                    raise ValueError("training-mode batch norm needs batch size >= 2")
                mu = s.mean(axis=0)
                var = s.var(axis=0)
                inv = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (s - mu) * inv
                n_b = x.shape[0]
                layer.bn_mean *= 1.0 - BN_MOMENTUM
                layer.bn_mean += BN_MOMENTUM * mu
                layer.bn_var *= 1.0 - BN_MOMENTUM
                layer.bn_var += BN_MOMENTUM * var * n_b / (n_b - 1)
                entry.update(xhat=xhat, inv=inv)
            else:
                inv = 1.0 / np.sqrt(layer.bn_var + BN_EPS)
                xhat = (s - layer.bn_mean) * inv
            s = layer.bn_scale * xhat + layer.bn_shift
        _check_finite(s, f"merge layer {li}")

        out = np.empty((x.shape[0], layer.n_out, model.n_nodes))
        out[:, : layer.n_pairs, :] = s
        out[:, layer.n_pairs :, :] = nodes[:, layer.passthrough, :]
        nodes = out
        if cache is not None:
            cache["layers"].append(entry)
            cache["nodes"].append(nodes)

    if training and model.layers and not model.folded:
        model.bn_stats_ready = True

    root = nodes[:, 0, :]
    out = root @ model.head_weight.T + model.head_bias
    _check_finite(out, "output head")
    if cache is not None:
        cache["root"] = root
        cache["out"] = out
    return out


def audit_structure(model: CircuitModel):
    """Verify decomposability and smoothness; raises ValueError on violation."""
    seen: set[int] = set()
    for scope in model.graph.partition:
        if seen & set(scope):
            raise ValueError("leaf scopes are not pairwise disjoint")
        seen |= set(scope)
    if seen != set(range(model.d_in)):
        raise ValueError("leaf scopes do not cover every input variable")

    scopes = [set(s) for s in model.graph.partition]
    for li, layer in enumerate(model.layers):
        new = []
        for l, r in zip(layer.left, layer.right):
            if scopes[l] & scopes[r]:
                raise ValueError(f"merge layer {li} pairs overlapping scopes")
            new.append(scopes[l] | scopes[r])
        new.extend(scopes[p] for p in layer.passthrough)
        stored = [set(s) for s in model.graph.layer_scopes[li]]
        if new != stored:
            raise ValueError(f"stored scopes disagree at merge layer {li}")
        scopes = new
    if len(scopes) != 1 or scopes[0] != set(range(model.d_in)):
        raise ValueError("root region does not span the full input set")


def _tensor_list(model: CircuitModel) -> list[tuple[str, np.ndarray]]:
    out = [("leaf.weight", model.leaf.weight)]
    for i, layer in enumerate(model.layers):
        out += [
            (f"layers[{i}].weight", layer.weight),
            (f"layers[{i}].bias", layer.bias),
            (f"layers[{i}].bn_scale", layer.bn_scale),
            (f"layers[{i}].bn_shift", layer.bn_shift),
            (f"layers[{i}].bn_mean", layer.bn_mean),
            (f"layers[{i}].bn_var", layer.bn_var),
        ]
    out += [("head.weight", model.head_weight), ("head.bias", model.head_bias)]
    return out


def save(model: CircuitModel, path):
    """Write the model: magic line, JSON header, little-endian float64 payload."""
    if not model.initialized:
        raise ValueError("refusing to save an uninitialized model")
    tensors = _tensor_list(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in tensors)
    header = {
        "d_in": model.d_in,
        "d_out": model.d_out,
        "scope_size": model.scope_size,
        "max_order": model.max_order,
        "n_nodes": model.n_nodes,
        "seed": model.seed,
        "folded": model.folded,
        "bn_stats_ready": model.bn_stats_ready,
        "families": [
            {"kind": f.kind, "loc": f.loc, "scale": f.scale} for f in model.families
        ],
        "partition": [list(s) for s in model.graph.partition],
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} {_VERSION}\n".encode())
        fh.write(json.dumps(header).encode())
        fh.write(b"\n")
        fh.write(payload)


def load(path) -> CircuitModel:
    with open(path, "rb") as fh:
        magic_line = fh.readline().decode(errors="replace").strip()
        parts = magic_line.split()
        if len(parts) != 2 or parts[0] != _MAGIC:
            raise MalformedFileError(f"not a model file: bad magic line {magic_line!r}")
        if parts[1] != str(_VERSION):
            raise FileVersionError(
                f"model schema version {parts[1]} unsupported (expected {_VERSION})"
            )
        try:
            header = json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFileError(f"unreadable model header: {exc}") from None
        payload = fh.read()

    if len(payload) != header["payload_bytes"]:
        raise MalformedFileError(
            f"payload truncated: expected {header['payload_bytes']} bytes, "
            f"got {len(payload)}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise MalformedFileError("payload checksum mismatch")

    families = [
        PolyFamily(kind=f["kind"], loc=f["loc"], scale=f["scale"])
        for f in header["families"]
    ]
    model = build(
        d_in=header["d_in"],
        d_out=header["d_out"],
        scope_size=header["scope_size"],
        max_order=header["max_order"],
        n_nodes=header["n_nodes"],
        seed=header["seed"],
        families=families,
    )
    stored_partition = [tuple(s) for s in header["partition"]]
    if stored_partition != model.graph.partition:
        # seeds and partitions must agree; a mismatch means a foreign file
        raise MalformedFileError("stored partition disagrees with the stored seed")

    offset = 0
    arrays = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset
        ).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(float, copy=True)
        offset += count * 8
    if offset != len(payload):
        raise MalformedFileError("payload length disagrees with tensor shapes")

    model.leaf.weight = arrays["leaf.weight"]
    for i, layer in enumerate(model.layers):
        layer.weight = arrays[f"layers[{i}].weight"]
        layer.bias = arrays[f"layers[{i}].bias"]
        layer.bn_scale = arrays[f"layers[{i}].bn_scale"]
        layer.bn_shift = arrays[f"layers[{i}].bn_shift"]
        layer.bn_mean = arrays[f"layers[{i}].bn_mean"]
        layer.bn_var = arrays[f"layers[{i}].bn_var"]
    model.head_weight = arrays["head.weight"]
    model.head_bias = arrays["head.bias"]
    model.initialized = True
    model.folded = header["folded"]
    model.bn_stats_ready = header["bn_stats_ready"]
    return model
