"""Monte Carlo estimators and the statistical validation harness.

Every exact query has a sampling twin here: plain/conditional means and
covariances (the covariance estimators use the n - 1 denominator and can
plug in the analytic mean under test), nested estimators for the two
law-of-total-covariance terms, a one-sample t-test, and a pick-and-freeze
first-order Sobol estimator for black-box functions with chunked streaming
and bootstrap error bars.

All streams are counter-based (Philox) and keyed by (seed, query, size, run),
so every estimate is reproducible bit for bit and runs are independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from .circuit import CircuitModel, forward
from .rng import make_rng
from .training import fold_batchnorm

__all__ = [
    "McConfig",
    "McEstimate",
    "SobolMcResult",
    "sample_inputs",
    "model_function",
    "mc_mean",
    "mc_covariance",
    "mc_conditional_mean",
    "mc_conditional_covariance",
    "mc_expected_conditional_covariance",
    "mc_covariance_of_conditional_expectation",
    "one_sample_ttest",
    "mc_sobol_on_function",
    "validation_report",
]

_CHUNK = 100_000


def _as_columns(y) -> np.ndarray:
    # estimators accept scalar functions returning [n] as well as [n, O]
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


@dataclass
class McConfig:
    sample_sizes: tuple = (10**5, 10**6, 10**7)
    n_runs: int = 30
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sample_sizes)
        if any(s < 2 for s in sizes) or list(sizes) != sorted(sizes):
            raise ValueError("sample_sizes must be ascending and >= 2")
        if self.n_runs < 2:
            raise ValueError("n_runs must be >= 2")
        self.sample_sizes = sizes


@dataclass
class McEstimate:
    query: str
    sizes: list[int]
    runs: dict[int, np.ndarray] = field(repr=False)  # size -> [n_runs, ...]

    def run_mean(self, size: int) -> np.ndarray:
        return self.runs[size].mean(axis=0)

    def std_error(self, size: int) -> np.ndarray:
        r = self.runs[size]
        return r.std(axis=0, ddof=1) / np.sqrt(r.shape[0])


def sample_inputs(families, n: int, rng, fixed: dict[int, float] | None = None) -> np.ndarray:
    """Draw [n, D] from the product of family marginals; ``fixed`` pins columns."""
    out = np.empty((n, len(families)))
    for d, fam in enumerate(families):
        if fixed is not None and d in fixed:
            out[:, d] = fixed[d]
        elif fam.kind == "hermite":
            out[:, d] = rng.standard_normal(n) * fam.scale + fam.loc
        else:
            out[:, d] = rng.uniform(-1.0, 1.0, n) * fam.scale + fam.loc
    return out


def model_function(model: CircuitModel):
    """(callable [n, D] -> [n, O], families) view of a model for the estimators."""
    folded = model if model.folded else fold_batchnorm(model)
    return (lambda x: forward(folded, x)), folded.families


def _as_runs_dict(cfg: McConfig, per_size) -> dict[int, np.ndarray]:
    return {size: np.stack(per_size[size]) for size in cfg.sample_sizes}


def _chunk_starts(n: int, chunk: int):
    for start in range(0, n, chunk):
        yield min(chunk, n - start)


def mc_mean(f, families, cfg: McConfig, fixed: dict[int, float] | None = None,
            query: str = "mean") -> McEstimate:
    per_size = {s: [] for s in cfg.sample_sizes}
    for si, size in enumerate(cfg.sample_sizes):
        for r in range(cfg.n_runs):
            rng = make_rng(cfg.seed, query, si, r)
            acc = 0.0
            for c in _chunk_starts(size, _CHUNK):
                y = _as_columns(f(sample_inputs(families, c, rng, fixed)))
                acc = acc + y.sum(axis=0)
            per_size[size].append(acc / size)
    return McEstimate(query=query, sizes=list(cfg.sample_sizes), runs=_as_runs_dict(cfg, per_size))


def mc_covariance(f, families, cfg: McConfig, mean=None,
                  fixed: dict[int, float] | None = None,
                  query: str = "covariance") -> McEstimate:
    """Covariance runs with the n - 1 denominator.

    When ``mean`` is given (the analytic value under test) it is plugged in
    directly; otherwise the per-run sample mean is used.
    """
    per_size = {s: [] for s in cfg.sample_sizes}
    for si, size in enumerate(cfg.sample_sizes):
        for r in range(cfg.n_runs):
            rng = make_rng(cfg.seed, query, si, r)
            acc = None
            s1 = 0.0
            for c in _chunk_starts(size, _CHUNK):
                y = _as_columns(f(sample_inputs(families, c, rng, fixed)))
                if acc is None:
                    acc = np.zeros((y.shape[1], y.shape[1]))
                if mean is not None:
                    dev = y - np.asarray(mean)
                    acc += dev.T @ dev
                else:
                    acc += y.T @ y
                    s1 = s1 + y.sum(axis=0)
            if mean is None:
                acc -= np.outer(s1, s1) / size
            per_size[size].append(acc / (size - 1))
    return McEstimate(query=query, sizes=list(cfg.sample_sizes), runs=_as_runs_dict(cfg, per_size))


def mc_conditional_mean(f, families, cfg: McConfig, spec) -> McEstimate:
    return mc_mean(f, families, cfg, fixed=dict(spec.fixed), query="conditional-mean")


def mc_conditional_covariance(f, families, cfg: McConfig, spec, mean=None) -> McEstimate:
    return mc_covariance(
        f, families, cfg, mean=mean, fixed=dict(spec.fixed), query="conditional-covariance"
    )


def _nested_runs(f, families, cfg: McConfig, subset, n_outer: int, n_inner: int, query: str):
    """Per run: inner sample means and covariances across n_outer conditioning draws."""
    subset = sorted(int(i) for i in subset)
    for r in range(cfg.n_runs):
        rng_outer = make_rng(cfg.seed, query, "outer", r)
        rng_inner = make_rng(cfg.seed, query, "inner", r)
        mus, covs = [], []
        for _ in range(n_outer):
            fixed = {
                d: float(sample_inputs([families[d]], 1, rng_outer)[0, 0]) for d in subset
            }
            y = _as_columns(f(sample_inputs(families, n_inner, rng_inner, fixed)))
            mu = y.mean(axis=0)
            dev = y - mu
            mus.append(mu)
            covs.append(dev.T @ dev / (n_inner - 1))
        yield np.stack(mus), np.stack(covs)


def mc_expected_conditional_covariance(
    f, families, cfg: McConfig, subset, n_outer: int = 1000, n_inner: int = 1000,
    query: str = "expected-conditional-covariance",
) -> McEstimate:
    """E[cov(Y | X_subset)]: average of inner sample covariances (unbiased)."""
    runs = [
        covs.mean(axis=0)
        for _, covs in _nested_runs(f, families, cfg, subset, n_outer, n_inner, query)
    ]
    size = n_outer * n_inner
    return McEstimate(query=query, sizes=[size], runs={size: np.stack(runs)})


def mc_covariance_of_conditional_expectation(
    f, families, cfg: McConfig, subset, n_outer: int = 1000, n_inner: int = 1000,
    query: str = "covariance-of-conditional-expectation",
) -> McEstimate:
    """cov(E[Y | X_subset]) with the inner-noise bias removed.

    The raw covariance of inner means overshoots by E[cov(Y | X)] / n_inner;
    subtracting the averaged inner covariance over n_inner corrects it.
    """
    runs = []
    for mus, covs in _nested_runs(f, families, cfg, subset, n_outer, n_inner, query):
        dev = mus - mus.mean(axis=0)
        raw = dev.T @ dev / (n_outer - 1)
        runs.append(raw - covs.mean(axis=0) / n_inner)
    size = n_outer * n_inner
    return McEstimate(query=query, sizes=[size], runs={size: np.stack(runs)})


def one_sample_ttest(runs, hypothesized: float) -> float:
    """Two-sided p-value for H0: E[run] = hypothesized, t distribution df = n - 1."""
    runs = np.asarray(runs, dtype=float)
    if runs.ndim != 1 or len(runs) < 2:
        raise ValueError("need a 1-d collection of at least two runs")
    diff = runs - hypothesized
    # spread about the sample mean: shifting by the hypothesized value first
    # can absorb a tiny spread into the offset and misreport zero variance
    sd = runs.std(ddof=1)
    if sd == 0.0:
        if np.all(diff == 0.0):
            return 1.0
        raise ValueError("degenerate runs: zero variance but nonzero offset")
    t = diff.mean() / (sd / np.sqrt(len(runs)))
    return float(2.0 * stdtr(len(runs) - 1, -abs(t)))


@dataclass
class SobolMcResult:
    indices: np.ndarray  # [n_outputs, d_in]
    std_error: np.ndarray  # [n_outputs, d_in]
    variance: np.ndarray  # [n_outputs]
    n: int
    wall_seconds: float


def mc_sobol_on_function(
    f,
    d_in: int,
    families,
    n: int,
    seed: int = 0,
    chunk: int = 50_000,
    n_bootstrap: int = 200,
) -> SobolMcResult:
    """Pick-and-freeze first-order Sobol estimator, streamed in chunks.

    V_i = mean(f(B) * (f(A with column i from B) - f(A))) over n base samples,
    normalized by the variance pooled over the A and B draws; total cost is
    n * (d_in + 2) function evaluations.  Error bars come from a bootstrap
    over chunk-level partial sums.  Wall-clock time of the estimation loop is
    recorded so analytic passes can be compared against it.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    sizes = list(_chunk_starts(n, chunk))
    n_chunks = len(sizes)

    chunk_h = chunk_f = chunk_f2 = None
    counts = np.array(sizes, dtype=float)

    start_time = time.perf_counter()
    for ci, c in enumerate(sizes):
        a = sample_inputs(families, c, make_rng(seed, "pick-freeze-a", ci))
        b = sample_inputs(families, c, make_rng(seed, "pick-freeze-b", ci))
        fa = _as_columns(f(a))
        fb = _as_columns(f(b))
        if chunk_h is None:
            n_out = fa.shape[1]
            chunk_h = np.zeros((n_chunks, d_in, n_out))
            chunk_f = np.zeros((n_chunks, n_out))
            chunk_f2 = np.zeros((n_chunks, n_out))
        for i in range(d_in):
            saved = a[:, i].copy()
            a[:, i] = b[:, i]
            fab = _as_columns(f(a))
            a[:, i] = saved
            chunk_h[ci, i] = (fb * (fab - fa)).sum(axis=0)
        chunk_f[ci] = fa.sum(axis=0) + fb.sum(axis=0)
        chunk_f2[ci] = (fa**2).sum(axis=0) + (fb**2).sum(axis=0)
    wall = time.perf_counter() - start_time

    sum_h = chunk_h.sum(axis=0)
    sum_f = chunk_f.sum(axis=0)
    sum_f2 = chunk_f2.sum(axis=0)

    def _indices(h, sf, sf2, count):
        total = 2.0 * count
        mu = sf / total
        var = (sf2 - total * mu**2) / (total - 1.0)
        return (h / count) / var, var

    indices, variance = _indices(sum_h, sum_f, sum_f2, float(n))

    rng = make_rng(seed, "pick-freeze-bootstrap")
    boots = np.empty((n_bootstrap,) + indices.shape)
    for bi in range(n_bootstrap):
        pick = rng.integers(0, n_chunks, size=n_chunks)
        boots[bi], _ = _indices(
            chunk_h[pick].sum(axis=0),
            chunk_f[pick].sum(axis=0),
            chunk_f2[pick].sum(axis=0),
            counts[pick].sum(),
        )
    se = boots.std(axis=0, ddof=1)

    return SobolMcResult(
        indices=indices.T.copy(),
        std_error=se.T.copy(),
        variance=variance,
        n=n,
        wall_seconds=wall,
    )


def validation_report(
    model: CircuitModel,
    cfg: McConfig,
    subset,
    cond_values: dict[int, float] | None = None,
    n_inner: int = 1000,
) -> dict:
    """Full exact-vs-MC validation: five query types, 30-run t-tests per output.

    Conditioning values default to a seeded U(-2, 2) draw on ``subset``.  The
    nested estimator splits each sample budget into outer x inner draws.
    Returns a JSON-ready report. p-values are per output (diagonals for the
    covariance-like queries).
    """
    from . import inference  # local import keeps module load order simple

    folded = model if model.folded else fold_batchnorm(model)
    f, families = model_function(folded)
    subset = sorted(int(i) for i in subset)
    if cond_values is None:
        rng = make_rng(cfg.seed, "conditioning-values")
        cond_values = {d: float(rng.uniform(-2.0, 2.0)) for d in subset}
    spec = inference.ConditionSpec(dict(cond_values))

    exact_mean = inference.mean(folded)
    exact_cov = inference.covariance(folded)
    exact_cmean = inference.conditional_mean(folded, spec)
    exact_ccov = inference.conditional_covariance(folded, spec)
    exact_ecc = inference.expected_conditional_covariance(folded, subset)

    report = {
        "seed": cfg.seed,
        "n_runs": cfg.n_runs,
        "subset": subset,
        "cond_values": {str(k): v for k, v in cond_values.items()},
        "queries": {},
    }

    def _entry(est: McEstimate, analytic: np.ndarray, diag_only: bool):
        analytic_used = np.diag(analytic) if diag_only else analytic
        sizes = {}
        for size in est.sizes:
            runs = est.runs[size]
            runs_used = (
                np.stack([np.diag(r) for r in runs]) if diag_only else runs
            )
            p_values = [
                one_sample_ttest(runs_used[:, o], float(analytic_used[o]))
                for o in range(runs_used.shape[1])
            ]
            sizes[str(size)] = {
                "run_mean": runs_used.mean(axis=0).tolist(),
                "std_error": (
                    runs_used.std(axis=0, ddof=1) / np.sqrt(runs_used.shape[0])
                ).tolist(),
                "p_values": p_values,
            }
        return {"analytic": analytic_used.tolist(), "sizes": sizes}

    report["queries"]["mean"] = _entry(mc_mean(f, families, cfg), exact_mean, False)
    report["queries"]["covariance"] = _entry(
        mc_covariance(f, families, cfg, mean=exact_mean), exact_cov, True
    )
    report["queries"]["conditional-mean"] = _entry(
        mc_conditional_mean(f, families, cfg, spec), exact_cmean, False
    )
    report["queries"]["conditional-covariance"] = _entry(
        mc_conditional_covariance(f, families, cfg, spec, mean=exact_cmean),
        exact_ccov,
        True,
    )
    ecc_runs = {}
    for si, size in enumerate(cfg.sample_sizes):
        inner = min(n_inner, size // 2)
        outer = max(2, size // inner)
        est = mc_expected_conditional_covariance(
            f, families, cfg, subset, n_outer=outer, n_inner=inner,
            query=f"expected-conditional-covariance-{si}",
        )
        ecc_runs[size] = est.runs[outer * inner]
    ecc = McEstimate(
        query="expected-conditional-covariance",
        sizes=list(cfg.sample_sizes),
        runs=ecc_runs,
    )
    report["queries"]["expected-conditional-covariance"] = _entry(ecc, exact_ecc, True)
    return report
