"""Command-line interface: data generation, training, prediction, inference.

One binary with subcommands.  Every command writes its artifacts into a run
directory (nothing outside it) together with a manifest echoing the exact
configuration and seeds, so any output can be regenerated.  Errors exit
nonzero with a single `category: message` line on stderr.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, circuit, data, inference, mc, training
from .errors import ConfigError, DataError, DeepPceError

__all__ = ["main"]


class _UsageError(DeepPceError):
    category = "argument-error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one-line machine-parsable diagnostics instead of argparse's default
        print(f"usage-error: {message}", file=sys.stderr)
        raise SystemExit(2)


_TRAIN_CONFIG_KEYS = {
    # model hyperparameters named after the tuning tables
    "num_sums": 40,
    "scope_size": 1,
    "max_order": 3,
    # optimization
    "learning_rate": 8.5e-3,
    "batch_size": 16,
    "max_epochs": 150,
    "patience": 15,
    "init_base_std": 1.0,
    "init_decay": 0.5,
    "restarts": 1,
    "seed": 0,
    "optimizer": "adam",
    "val_fraction": 0.2,
}


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TRAIN_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(_TRAIN_CONFIG_KEYS)
    cfg.update(raw)
    return cfg


def _load_dataset(path) -> data.Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    if path.suffix == ".csv":
        return data.load_csv(path)
    return data.load_tensor(path)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(outdir: Path, command: str, settings: dict, outputs: list[str]):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "settings": settings,
        "outputs": outputs,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "versions": {"deeppce": __version__, "numpy": np.__version__},
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _parse_index_set(text: str, d_in: int) -> list[int]:
    """1-based comma list ("1,2,5") -> sorted 0-based indices."""
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            k = int(piece)
        except ValueError:
            raise _UsageError(f"bad variable index {piece!r}") from None
        if not 1 <= k <= d_in:
            raise _UsageError(f"variable index {k} outside 1..{d_in}")
        out.append(k - 1)
    if not out:
        raise _UsageError("empty variable set")
    return sorted(set(out))


def _parse_condition(text: str, d_in: int) -> dict[int, float]:
    """"1=0.5,3=-1.2" with 1-based variable indices."""
    fixed = {}
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise _UsageError(f"bad condition {piece!r}, expected i=value")
        k_txt, v_txt = piece.split("=", 1)
        try:
            k, v = int(k_txt), float(v_txt)
        except ValueError:
            raise _UsageError(f"bad condition {piece!r}") from None
        if not 1 <= k <= d_in:
            raise _UsageError(f"variable index {k} outside 1..{d_in}")
        fixed[k - 1] = v
    if not fixed:
        raise _UsageError("empty condition")
    return fixed


def _cmd_gen_data(args) -> int:
    if args.n < 1:
        raise _UsageError("--n must be >= 1")
    if args.problem == "100d":
        dataset = data.gen_100d(args.n, args.seed)
    else:
        dataset = data.gen_quadratic(args.n, d_in=args.d_in, d_out=args.d_out, seed=args.seed)
    out = _outdir(args.out)
    if args.format == "csv":
        target = out / "dataset.csv"
        data.save_csv(dataset, target)
    else:
        target = out / "dataset.dpt"
        data.save_tensor(dataset, target)
    _write_manifest(
        out,
        "gen-data",
        {"problem": args.problem, "n": args.n, "seed": args.seed, "format": args.format},
        [target.name],
    )
    print(f"wrote {target} ({len(dataset)} rows, d_in={dataset.d_in}, d_out={dataset.d_out})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.restarts is not None:
        cfg["restarts"] = args.restarts
    dataset = _load_dataset(args.data)

    val_fraction = float(cfg["val_fraction"])
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must be in (0, 1)")
    train_set, val_set = data.split(
        dataset, [1.0 - val_fraction, val_fraction], seed=int(cfg["seed"])
    )

    model = circuit.build(
        d_in=dataset.d_in,
        d_out=dataset.d_out,
        scope_size=int(cfg["scope_size"]),
        max_order=int(cfg["max_order"]),
        n_nodes=int(cfg["num_sums"]),
        seed=int(cfg["seed"]),
        families=dataset.families(),
    )
    train_cfg = training.TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]),
        max_epochs=int(cfg["max_epochs"]),
        early_stop_patience=int(cfg["patience"]),
        init_base_std=float(cfg["init_base_std"]),
        init_decay=float(cfg["init_decay"]),
        n_restarts=int(cfg["restarts"]),
        seed=int(cfg["seed"]),
        optimizer=str(cfg["optimizer"]),
    )
    report = training.train(model, train_cfg, train_set, val_set)

    out = _outdir(args.out)
    model_path = out / "model.dpc"
    circuit.save(report.best_model, model_path)
    report_path = out / "train_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    _write_manifest(out, "train", cfg, [model_path.name, report_path.name])
    best = report.restarts[report.best_restart]
    print(
        f"trained {cfg['restarts']} restart(s); best restart {report.best_restart} "
        f"val MSE {best['val_mse']:.6g}; wrote {model_path}"
    )
    return 0


def _cmd_predict(args) -> int:
    model = circuit.load(args.model)
    dataset = _load_dataset(args.data)
    if dataset.d_in != model.d_in:
        raise DataError(f"dataset has {dataset.d_in} inputs, model expects {model.d_in}")
    pred = circuit.forward(model, dataset.inputs)
    out = _outdir(args.out)
    pred_path = out / "predictions.csv"
    with open(pred_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"yhat_{k + 1}" for k in range(pred.shape[1])) + "\n")
        for row in pred:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    metrics = {}
    if dataset.d_out == pred.shape[1]:
        metrics["mse"] = training.loss_mse(pred, dataset.targets)
        metrics["relative_mse"] = training.relative_mse(pred, dataset.targets)
    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    _write_manifest(
        out, "predict", {"model": str(args.model), "data": str(args.data)},
        [pred_path.name, metrics_path.name],
    )
    if "relative_mse" in metrics:
        print(f"relative MSE {metrics['relative_mse']:.6g} over {len(dataset)} rows")
    else:
        print(f"wrote predictions for {len(dataset)} rows")
    return 0


def _cmd_moments(args) -> int:
    model = circuit.load(args.model)
    query = args.query
    result: dict = {"query": query}
    if query in ("cond-mean", "cond-cov"):
        if not args.condition:
            raise _UsageError(f"--condition is required for {query}")
        fixed = _parse_condition(args.condition, model.d_in)
        spec = inference.ConditionSpec(fixed)
        value = (
            inference.conditional_mean(model, spec)
            if query == "cond-mean"
            else inference.conditional_covariance(model, spec)
        )
        result["condition"] = {str(k + 1): v for k, v in fixed.items()}
    elif query in ("cov-cond-exp", "exp-cond-cov"):
        if not args.set:
            raise _UsageError(f"--set is required for {query}")
        subset = _parse_index_set(args.set, model.d_in)
        value = (
            inference.covariance_of_conditional_expectation(model, subset)
            if query == "cov-cond-exp"
            else inference.expected_conditional_covariance(model, subset)
        )
        result["set"] = [k + 1 for k in subset]
    elif query == "mean":
        value = inference.mean(model)
    else:
        value = inference.covariance(model)
    result["value"] = np.asarray(value).tolist()
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        out = _outdir(args.out)
        with open(out / "moments.json", "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(out, "moments", {"model": str(args.model), "query": query},
                        ["moments.json"])
    return 0


def _cmd_sobol(args) -> int:
    model = circuit.load(args.model)
    t0 = time.perf_counter()
    result = inference.sobol_first_order(model)
    analytic_seconds = time.perf_counter() - t0
    indices = result.indices
    if args.normalize_sum:
        sums = indices.sum(axis=1, keepdims=True)
        indices = np.where(sums > 0, indices / np.where(sums == 0, 1.0, sums), indices)
    payload = {
        "indices": indices.tolist(),
        "zero_variance_outputs": result.zero_variance.tolist(),
        "normalized": bool(args.normalize_sum),
        "analytic_seconds": analytic_seconds,
    }
    if args.mc_baseline:
        f, families = mc.model_function(model)
        base = max(2, args.mc_baseline // (model.d_in + 2))
        mc_result = mc.mc_sobol_on_function(
            f, model.d_in, families, base, seed=args.seed
        )
        payload["mc_baseline"] = {
            "n_evals": base * (model.d_in + 2),
            "indices": mc_result.indices.tolist(),
            "std_error": mc_result.std_error.tolist(),
            "wall_seconds": mc_result.wall_seconds,
            "speedup": mc_result.wall_seconds / max(analytic_seconds, 1e-12),
        }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        out = _outdir(args.out)
        with open(out / "sobol.json", "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(out, "sobol", {"model": str(args.model), "seed": args.seed},
                        ["sobol.json"])
    return 0


def _cmd_mc_check(args) -> int:
    model = circuit.load(args.model)
    if args.runs < 2:
        raise _UsageError("--runs must be >= 2")
    try:
        sizes = tuple(int(float(s)) for s in args.sizes.split(","))
    except ValueError:
        raise _UsageError(f"bad --sizes {args.sizes!r}") from None
    cfg = mc.McConfig(sample_sizes=sizes, n_runs=args.runs, seed=args.seed)
    if args.set:
        subset = _parse_index_set(args.set, model.d_in)
    else:
        subset = list(range(min(4, model.d_in)))
    report = mc.validation_report(model, cfg, subset)
    for query, entry in report["queries"].items():
        for size, stats in entry["sizes"].items():
            worst = min(stats["p_values"])
            print(f"{query:38s} S={size:>9s}  min p = {worst:.4f}")
    if args.out:
        out = _outdir(args.out)
        with open(out / "mc_report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        _write_manifest(
            out, "mc-check",
            {"model": str(args.model), "runs": args.runs, "sizes": list(sizes),
             "seed": args.seed},
            ["mc_report.json"],
        )
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="deeppce", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset")
    p.add_argument("--problem", choices=["100d", "quadratic"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--d-in", type=int, default=64)
    p.add_argument("--d-out", type=int, default=16)
    p.add_argument("--format", choices=["tensor", "csv"], default="tensor")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a circuit model on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--restarts", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="run the forward pass on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("moments", help="exact moment queries on a trained model")
    p.add_argument("--model", required=True)
    p.add_argument(
        "--query",
        choices=["mean", "cov", "cond-mean", "cond-cov", "cov-cond-exp", "exp-cond-cov"],
        required=True,
    )
    p.add_argument("--condition", help='fixed values, e.g. "1=0.5,3=-1.2" (1-based)')
    p.add_argument("--set", help='variable set, e.g. "1,2,3,5" (1-based)')
    p.add_argument("--out")
    p.set_defaults(func=_cmd_moments)

    p = sub.add_parser("sobol", help="first-order Sobol indices, optional MC baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--normalize-sum", action="store_true")
    p.add_argument("--mc-baseline", type=int, default=0,
                   help="also run the MC estimator with this many model evaluations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sobol)

    p = sub.add_parser("mc-check", help="validate exact queries against MC runs")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--sizes", default="100000,1000000")
    p.add_argument("--set", help='conditioning set, e.g. "1,2,3,5" (1-based)')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_mc_check)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except DeepPceError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
