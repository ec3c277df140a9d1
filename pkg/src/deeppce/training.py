"""Gradient training for circuit models.

Gradients are hand-written reverse mode over the three layer kinds (leaf
expansion contraction, Hadamard merge + affine sum, batch norm); no autograd
framework.  Initialization shrinks high-degree leaf weights geometrically so
early training lives in the low-order part of the expansion.  Restarts are
independent seeded initializations; the one with the lowest validation MSE
wins.  `fold_batchnorm` absorbs the normalization into weights and biases,
after which the model is a pure polynomial circuit ready for exact inference.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .circuit import BN_EPS, CircuitModel, forward
from .errors import MissingStatsError, NonFiniteError, TrainingFailedError
from .rng import make_rng

__all__ = [
    "TrainConfig",
    "TrainReport",
    "init_weights",
    "loss_mse",
    "relative_mse",
    "backward",
    "train",
    "fold_batchnorm",
]

# "adam" here is plain Adam.  The amsgrad variant is kept reachable but is
# not the default: its monotone second-moment cap freezes the batch-norm
# shifts, which are the only escape route from the interaction-only plateau
# that zero-mean initialization creates on mostly-additive targets.
_OPTIMIZER_ALIASES = {
    "adam": "adam",
    "amsgrad": "amsgrad",
    "momentum-adaptive": "adam",
    "sgd": "sgd",
    "plain-sgd": "sgd",
}


@dataclass
class TrainConfig:
    learning_rate: float = 8.5e-3
    batch_size: int = 16
    max_epochs: int = 150
    early_stop_patience: int = 15
    init_base_std: float = 1.0
    init_decay: float = 0.5
    n_restarts: int = 1
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.early_stop_patience < 1 or self.n_restarts < 1:
            raise ValueError("early_stop_patience and n_restarts must be positive")
        if self.init_base_std <= 0 or not 0.0 < self.init_decay <= 1.0:
            raise ValueError("init_base_std > 0 and init_decay in (0, 1] required")
        opt = _OPTIMIZER_ALIASES.get(self.optimizer)
        if opt is None:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.optimizer = opt


@dataclass
class TrainReport:
    best_model: CircuitModel
    best_restart: int
    restarts: list[dict]
    config: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "best_restart": self.best_restart,
                "restarts": self.restarts,
                "config": self.config,
            },
            indent=2,
        )


def init_weights(model: CircuitModel, cfg: TrainConfig, restart: int = 0) -> CircuitModel:
    """Variance-scaled in-place initialization.

    Leaf weight for multi-index a: N(0, (base_std * decay^|a|)^2), so degree-k
    terms start decay^k smaller.  Sum-layer weights use fan-in scaling
    base_std / sqrt(width); batch norm starts as identity (scale 1, shift 0).
    """
    rng = make_rng(cfg.seed, "init", restart)
    width = model.n_nodes

    p0, _, a_max = model.leaf.mask.shape
    stds = np.zeros((p0, 1, a_max))
    for c, bset in enumerate(model.leaf.bases):
        degrees = bset.indices.sum(axis=1)
        stds[c, 0, : len(bset)] = cfg.init_base_std * cfg.init_decay ** degrees
    model.leaf.weight = rng.normal(size=(p0, width, a_max)) * stds

    for layer in model.layers:
        shape = (layer.n_pairs, width, width)
        layer.weight = rng.normal(0.0, cfg.init_base_std / np.sqrt(width), size=shape)
        layer.bias = np.zeros((layer.n_pairs, width))
        layer.bn_scale = np.ones((layer.n_pairs, width))
        layer.bn_shift = np.zeros((layer.n_pairs, width))
        layer.bn_mean = np.zeros((layer.n_pairs, width))
        layer.bn_var = np.ones((layer.n_pairs, width))

    model.head_weight = rng.normal(
        0.0, cfg.init_base_std / np.sqrt(width), size=(model.d_out, width)
    )
    model.head_bias = np.zeros(model.d_out)
    model.initialized = True
    model.folded = False
    model.bn_stats_ready = False
    return model


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def relative_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """mean((y - yhat)^2) / mean(y^2); infinite when the targets are all zero."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    denom = float(np.mean(np.asarray(target) ** 2))
    if denom == 0.0:
        return float("inf")
    return float(np.mean((pred - target) ** 2)) / denom


def backward(model: CircuitModel, x: np.ndarray, target: np.ndarray):
    """Training-mode MSE loss and exact gradients for every trainable tensor.

    Returns (loss, grads) with grads keyed like model.parameters().  Batch
    norm uses batch statistics here, matching the training forward pass.
    """
    cache: dict = {}
    pred = forward(model, x, training=True, cache=cache)
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    b, o = pred.shape
    resid = pred - target
    loss = float(np.mean(resid**2))
    d_out = 2.0 * resid / (b * o)

    grads: dict[str, np.ndarray] = {
        "head.weight": d_out.T @ cache["root"],
        "head.bias": d_out.sum(axis=0),
    }
    d_nodes = np.zeros_like(cache["nodes"][-1])
    d_nodes[:, 0, :] = d_out @ model.head_weight

    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        entry = cache["layers"][li]
        below = cache["nodes"][li]
        n_pairs = layer.n_pairs
        d_s = d_nodes[:, :n_pairs, :]
        d_pass = d_nodes[:, n_pairs:, :]

        if model.folded:
            grads[f"layers[{li}].bias"] = d_s.sum(axis=0)
            d_pre = d_s
        else:
            xhat, inv = entry["xhat"], entry["inv"]
            grads[f"layers[{li}].bn_shift"] = d_s.sum(axis=0)
            grads[f"layers[{li}].bn_scale"] = (d_s * xhat).sum(axis=0)
            d_xhat = d_s * layer.bn_scale
            d_pre = (
                inv
                / b
                * (
                    b * d_xhat
                    - d_xhat.sum(axis=0)
                    - xhat * (d_xhat * xhat).sum(axis=0)
                )
            )

        grads[f"layers[{li}].weight"] = np.matmul(
            d_pre.transpose(1, 2, 0), entry["prod"].transpose(1, 0, 2)
        )
        d_prod = np.matmul(d_pre.transpose(1, 0, 2), layer.weight).transpose(1, 0, 2)
        d_below = np.zeros_like(below)
        d_below[:, layer.left, :] = d_prod * below[:, layer.right, :]
        d_below[:, layer.right, :] = d_prod * below[:, layer.left, :]
        if len(layer.passthrough):
            d_below[:, layer.passthrough, :] = d_pass
        d_nodes = d_below

    grads["leaf.weight"] = (
        np.matmul(d_nodes.transpose(1, 2, 0), cache["phi"].transpose(1, 0, 2))
        * model.leaf.mask
    )
    return loss, grads


class _Adam:
    """Adam, optionally with the max-of-past-second-moment (amsgrad) correction."""

    def __init__(
        self,
        lr: float,
        b1: float = 0.9,
        b2: float = 0.999,
        eps: float = 1e-8,
        amsgrad: bool = False,
    ):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.amsgrad = amsgrad
        self.t = 0
        self.state: dict[str, tuple] = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in params:
            g = grads[name]
            if name not in self.state:
                self.state[name] = (np.zeros_like(p), np.zeros_like(p), np.zeros_like(p))
            m, v, vmax = self.state[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g**2
            if self.amsgrad:
                np.maximum(vmax, v / c2, out=vmax)
                denom = np.sqrt(vmax) + self.eps
            else:
                denom = np.sqrt(v / c2) + self.eps
            p -= self.lr * (m / c1) / denom


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for name, p in params:
            p -= self.lr * grads[name]


def _as_xy(dataset):
    if hasattr(dataset, "inputs") and hasattr(dataset, "targets"):
        return np.asarray(dataset.inputs), np.asarray(dataset.targets)
    x, y = dataset
    y = np.asarray(y, dtype=float)
    return np.asarray(x, dtype=float), y[:, None] if y.ndim == 1 else y


def _stateful_tensors(model):
    # trainable parameters plus batch-norm running stats: early stopping must
    # restore the exact function that won validation, stats included
    out = [p for _, p in model.parameters()]
    for layer in model.layers:
        out += [layer.bn_mean, layer.bn_var]
    return out


def _snapshot(model):
    return [p.copy() for p in _stateful_tensors(model)]


def _restore(model, snap):
    for p, saved in zip(_stateful_tensors(model), snap):
        p[...] = saved


def _train_single(model: CircuitModel, cfg: TrainConfig, restart: int, data):
    x_train, y_train, x_val, y_val = data
    init_weights(model, cfg, restart)
    # start the output bias at the target mean so optimization spends no
    # time drifting toward a large constant offset
    model.head_bias[...] = y_train.mean(axis=0)
    if cfg.optimizer == "sgd":
        opt = _Sgd(cfg.learning_rate)
    else:
        opt = _Adam(cfg.learning_rate, amsgrad=cfg.optimizer == "amsgrad")
    shuffle_rng = make_rng(cfg.seed, "shuffle", restart)
    needs_pairs = bool(model.layers)  # batch norm needs at least 2 rows

    record = {
        "restart": restart,
        "failed": False,
        "val_mse": float("inf"),
        "best_epoch": -1,
        "epochs_run": 0,
        "train_curve": [],
        "val_curve": [],
    }
    best_snap = None
    n = x_train.shape[0]
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            if needs_pairs and len(sel) < 2:
                continue
            try:
                loss, grads = backward(model, x_train[sel], y_train[sel])
            except NonFiniteError:
                record["failed"] = True
                break
            if not np.isfinite(loss):
                record["failed"] = True
                break
            opt.step(model.parameters(), grads)
            batch_losses.append(loss)
        if record["failed"] or not batch_losses:
            record["failed"] = True
            break

        try:
            val_mse = loss_mse(forward(model, x_val), y_val)
        except NonFiniteError:
            record["failed"] = True
            break
        record["train_curve"].append(float(np.mean(batch_losses)))
        record["val_curve"].append(val_mse)
        record["epochs_run"] = epoch + 1
        if not np.isfinite(val_mse):
            record["failed"] = True
            break
        if val_mse < record["val_mse"]:
            record["val_mse"] = val_mse
            record["best_epoch"] = epoch
            best_snap = _snapshot(model)
        elif epoch - record["best_epoch"] >= cfg.early_stop_patience:
            break

    if best_snap is None:
        record["failed"] = True
    else:
        _restore(model, best_snap)
    return record


def train(model: CircuitModel, cfg: TrainConfig, train_set, val_set) -> TrainReport:
    """Multi-restart mini-batch training; returns the lowest-validation-MSE model.

    Restarts diverging to non-finite losses are recorded as failed and
    skipped; if every restart fails a TrainingFailedError is raised.
    """
    x_train, y_train = _as_xy(train_set)
    x_val, y_val = _as_xy(val_set)
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    data = (x_train, y_train, x_val, y_val)

    best = None
    best_model = None
    records = []
    for restart in range(cfg.n_restarts):
        candidate = model.copy()
        record = _train_single(candidate, cfg, restart, data)
        records.append(record)
        if not record["failed"] and (best is None or record["val_mse"] < best):
            best = record["val_mse"]
            best_model = candidate

    if best_model is None:
        raise TrainingFailedError(
            f"all {cfg.n_restarts} restarts diverged or produced no finite validation loss"
        )
    best_restart = int(np.argmin([r["val_mse"] if not r["failed"] else np.inf for r in records]))
    return TrainReport(
        best_model=best_model,
        best_restart=best_restart,
        restarts=records,
        config=dataclasses.asdict(cfg),
    )


def fold_batchnorm(model: CircuitModel) -> CircuitModel:
    """Absorb inference-mode batch norm into sum weights and biases.

    Returns a folded copy whose forward pass matches the unfolded
    inference-mode forward exactly (same affine map, reassociated).  Already
    folded models are returned unchanged, so folding is idempotent.
    """
    if model.folded:
        return model
    if not model.initialized:
        raise ValueError("cannot fold an uninitialized model")
    if model.layers and not model.bn_stats_ready:
        raise MissingStatsError(
            "batch-norm running statistics absent; train first or mark the model folded"
        )
    folded = model.copy()
    for layer in folded.layers:
        inv = 1.0 / np.sqrt(layer.bn_var + BN_EPS)
        scale = layer.bn_scale * inv
        shift = layer.bn_shift - layer.bn_scale * layer.bn_mean * inv
        layer.weight = scale[:, :, None] * layer.weight
        layer.bias = scale * layer.bias + shift
        layer.bn_scale = np.ones_like(layer.bn_scale)
        layer.bn_shift = np.zeros_like(layer.bn_shift)
        layer.bn_mean = np.zeros_like(layer.bn_mean)
        layer.bn_var = np.ones_like(layer.bn_var)
    folded.folded = True
    return folded
