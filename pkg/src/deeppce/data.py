"""Benchmark problem generators, dataset file formats, and splitting.

Two generators: the 100-input analytic benchmark (uniform marginals, one
widened input that dominates the first-order sensitivities) and a synthetic
quadratic map for multi-output regression smoke tests.  Datasets round-trip
through either a binary tensor format (text header + little-endian float64
payload, lossless) or CSV (repr floats, exact on reload).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, MalformedFileError, FileVersionError
from .orthopoly import PolyFamily, family_from_marginal
from .rng import make_rng

__all__ = [
    "Dataset",
    "gen_100d",
    "gen_quadratic",
    "benchmark_100d_function",
    "save_tensor",
    "load_tensor",
    "save_csv",
    "load_csv",
    "split",
]

_MAGIC = "DEEPPCE-DATA"
_VERSION = 1


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, D]
    targets: np.ndarray  # [N, O]
    marginals: list[dict]  # one descriptor per input column
    provenance: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise DataError("inputs and targets must be 2-d arrays")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataError("inputs and targets disagree on the number of rows")
        if len(self.marginals) != self.inputs.shape[1]:
            raise DataError("need one marginal descriptor per input column")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_out(self) -> int:
        return self.targets.shape[1]

    def families(self) -> list[PolyFamily]:
        return [family_from_marginal(m) for m in self.marginals]


def benchmark_100d_function(x: np.ndarray) -> np.ndarray:
    """The 100-input benchmark response, vectorized over rows of [n, 100]."""
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    i = np.arange(1, d + 1)
    out = (
        3.0
        - (5.0 / d) * (i * x).sum(axis=1)
        + (1.0 / d) * (i * x**3).sum(axis=1)
        + (1.0 / (3.0 * d)) * (i * np.log(x**2 + x**4)).sum(axis=1)
        + x[:, 0] * x[:, 1] ** 2
        + x[:, 1] * x[:, 3]
        - x[:, 2] * x[:, 4]
        + x[:, 50]
        + x[:, 49] * x[:, 53] ** 2
    )
    return out[:, None]


def _marginals_100d() -> list[dict]:
    out = [{"dist": "uniform", "low": 1.0, "high": 2.0} for _ in range(100)]
    out[19] = {"dist": "uniform", "low": 1.0, "high": 3.0}  # X_20 spans a tripled range
    return out


def gen_100d(n: int, seed: int) -> Dataset:
    """Sample the 100-input benchmark: X_i ~ U(1, 2) except X_20 ~ U(1, 3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    marginals = _marginals_100d()
    rng = make_rng(seed, "gen-100d")
    x = np.empty((n, 100))
    for d, m in enumerate(marginals):
        x[:, d] = rng.uniform(m["low"], m["high"], n)
    return Dataset(
        inputs=x,
        targets=benchmark_100d_function(x),
        marginals=marginals,
        provenance=json.dumps({"generator": "100d", "n": n, "seed": seed}),
    )


def gen_quadratic(n: int, d_in: int = 64, d_out: int = 16, seed: int = 0) -> Dataset:
    """Random sparse quadratic map with standard normal inputs.

    Each output is a constant plus a dense linear form plus a handful of
    pairwise products, scaled so outputs have O(1) variance.
    """
    if n < 1 or d_in < 2 or d_out < 1:
        raise ValueError("need n >= 1, d_in >= 2, d_out >= 1")
    coeff_rng = make_rng(seed, "gen-quadratic", "coeffs")
    n_pairs = 8
    const = coeff_rng.normal(size=d_out)
    linear = coeff_rng.normal(size=(d_out, d_in)) / np.sqrt(d_in)
    pairs = coeff_rng.integers(0, d_in, size=(d_out, n_pairs, 2))
    pair_coeff = coeff_rng.normal(size=(d_out, n_pairs)) / np.sqrt(n_pairs)

    x = make_rng(seed, "gen-quadratic", "inputs").standard_normal((n, d_in))
    y = np.empty((n, d_out))
    for o in range(d_out):
        quad = sum(
            pair_coeff[o, k] * x[:, pairs[o, k, 0]] * x[:, pairs[o, k, 1]]
            for k in range(n_pairs)
        )
        y[:, o] = const[o] + x @ linear[o] + quad
    marginals = [{"dist": "normal", "mean": 0.0, "std": 1.0} for _ in range(d_in)]
    return Dataset(
        inputs=x,
        targets=y,
        marginals=marginals,
        provenance=json.dumps(
            {"generator": "quadratic", "n": n, "d_in": d_in, "d_out": d_out, "seed": seed}
        ),
    )


def _marginal_line(k: int, m: dict) -> str:
    if m["dist"] == "normal":
        return f"marginal {k} normal {m['mean']!r} {m['std']!r}"
    if m["dist"] == "uniform":
        return f"marginal {k} uniform {m['low']!r} {m['high']!r}"
    raise DataError(f"unsupported marginal {m!r}")


def _parse_marginal(parts: list[str]) -> dict:
    if len(parts) != 5:
        raise MalformedFileError(f"bad marginal line: {' '.join(parts)}")
    _, _, dist, p1, p2 = parts
    if dist == "normal":
        return {"dist": "normal", "mean": float(p1), "std": float(p2)}
    if dist == "uniform":
        return {"dist": "uniform", "low": float(p1), "high": float(p2)}
    raise MalformedFileError(f"unknown marginal kind {dist!r}")


def save_tensor(dataset: Dataset, path):
    """Text header (counts, marginals, provenance) + raw float64 payload."""
    n, d, o = len(dataset), dataset.d_in, dataset.d_out
    x = np.ascontiguousarray(dataset.inputs, dtype="<f8")
    y = np.ascontiguousarray(dataset.targets, dtype="<f8")
    payload = x.tobytes() + y.tobytes()
    lines = [
        f"{_MAGIC} {_VERSION}",
        f"n {n}",
        f"d {d}",
        f"o {o}",
    ]
    lines += [_marginal_line(k + 1, m) for k, m in enumerate(dataset.marginals)]
    lines.append(f"provenance {json.dumps(dataset.provenance)}")
    lines.append(f"payload {len(payload)}")
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(payload)


def load_tensor(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.readline().decode(errors="replace").split()
        if len(magic) != 2 or magic[0] != _MAGIC:
            raise MalformedFileError("not a dataset tensor file (bad magic)")
        if magic[1] != str(_VERSION):
            raise FileVersionError(f"dataset schema version {magic[1]} unsupported")
        fields = {}
        marginals = []
        while True:
            raw = fh.readline()
            if not raw:
                raise MalformedFileError("header ended before the --- separator")
            line = raw.decode(errors="replace").rstrip("\n")
            if line == "---":
                break
            parts = line.split(" ", 1)
            if parts[0] == "marginal":
                marginals.append(_parse_marginal(line.split()))
            elif parts[0] in ("n", "d", "o", "payload"):
                fields[parts[0]] = int(parts[1])
            elif parts[0] == "provenance":
                fields["provenance"] = json.loads(parts[1])
            else:
                raise MalformedFileError(f"unknown header line {line!r}")
        payload = fh.read()

    for key in ("n", "d", "o", "payload"):
        if key not in fields:
            raise MalformedFileError(f"missing header field {key!r}")
    n, d, o = fields["n"], fields["d"], fields["o"]
    expected = 8 * n * (d + o)
    if fields["payload"] != expected:
        raise MalformedFileError(
            f"declared payload {fields['payload']} bytes does not match n*(d+o) ({expected})"
        )
    if len(payload) != expected:
        raise MalformedFileError(
            f"payload truncated: expected {expected} bytes, got {len(payload)}"
        )
    if len(marginals) != d:
        raise MalformedFileError(f"{len(marginals)} marginal lines for d = {d}")
    x = np.frombuffer(payload, dtype="<f8", count=n * d).reshape(n, d)
    y = np.frombuffer(payload, dtype="<f8", count=n * o, offset=8 * n * d).reshape(n, o)
    return Dataset(
        inputs=x.astype(float, copy=True),
        targets=y.astype(float, copy=True),
        marginals=marginals,
        provenance=fields.get("provenance", ""),
    )


def save_csv(dataset: Dataset, path):
    """Header x_1..x_D,y_1..y_O; repr floats so reload is exact."""
    d, o = dataset.d_in, dataset.d_out
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# marginals={json.dumps(dataset.marginals)}\n")
        if dataset.provenance:
            fh.write(f"# provenance={json.dumps(dataset.provenance)}\n")
        header = [f"x_{k + 1}" for k in range(d)] + [f"y_{k + 1}" for k in range(o)]
        fh.write(",".join(header) + "\n")
        rows = np.hstack([dataset.inputs, dataset.targets])
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path) -> Dataset:
    marginals = None
    provenance = ""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("marginals="):
                    marginals = json.loads(body[len("marginals="):])
                elif body.startswith("provenance="):
                    provenance = json.loads(body[len("provenance="):])
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"line {ln}: expected {len(header)} cells, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DataError(f"line {ln}: non-numeric cell ({exc})") from None

    if header is None:
        raise DataError("no header row found")
    d = sum(1 for h in header if h.startswith("x_"))
    o = sum(1 for h in header if h.startswith("y_"))
    if d + o != len(header) or d == 0 or o == 0:
        raise DataError(f"header must name x_1..x_D then y_1..y_O, got {header}")
    if not rows:
        raise DataError("no data rows")
    arr = np.asarray(rows)
    if marginals is None:
        # permissive default: CSVs from external tools may omit the comment
        marginals = [{"dist": "normal", "mean": 0.0, "std": 1.0} for _ in range(d)]
    return Dataset(
        inputs=arr[:, :d], targets=arr[:, d:], marginals=marginals, provenance=provenance
    )


def split(dataset: Dataset, fractions, seed: int):
    """Seeded shuffle + partition; fractions must sum to 1 within 1e-9."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    n = len(dataset)
    order = make_rng(seed, "split").permutation(n)
    bounds = [int(round(n * c)) for c in np.cumsum(fractions)]
    bounds[-1] = n
    parts = []
    start = 0
    for k, stop in enumerate(bounds):
        sel = order[start:stop]
        parts.append(
            replace(
                dataset,
                inputs=dataset.inputs[sel].copy(),
                targets=dataset.targets[sel].copy(),
                provenance=dataset.provenance,
            )
        )
        start = stop
    return tuple(parts)
