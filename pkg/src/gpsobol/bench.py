"""Analytical test functions, a pick-freeze Monte-Carlo oracle and replicated studies.

The studies repeat "LHS design -> fit -> Q2 on a test sample -> both Sobol
estimators (-> simulated confidence intervals)" over learning sizes and
replicates, and write the summary CSV files.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .effects import SimulationConfig, build_main_effect, simulate_index
from .errors import DegenerateVarianceError
from .gp import FitOptions, fit, q2_coefficient
from .inputs import Design, InputSpace, Uniform, lhs_sample
from .quadrature import build_table
from .sobol import global_decomposition, l2_error, predictor_decomposition

log = logging.getLogger(__name__)

GSOBOL_A = (0.0, 1.0, 4.5, 9.0, 99.0)


@dataclass(frozen=True)
class TestFunction:
    """Benchmark function with known first-order indices."""

    __test__ = False

    name: str
    space: InputSpace
    func: Callable[[np.ndarray], np.ndarray]
    true_indices: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.space.d

    def __call__(self, X) -> np.ndarray:
        return self.func(np.atleast_2d(np.asarray(X, dtype=float)))

    def evaluate(self, point) -> float:
        return float(self(np.asarray(point, dtype=float)[None, :])[0])


def gsobol_first_order(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    v = 1.0 / (3.0 * (1.0 + a) ** 2)
    return v / (np.prod(1.0 + v) - 1.0)


def gsobol(a: Sequence[float] = GSOBOL_A) -> TestFunction:
    """Sobol g-function ``prod_k (|4 x_k - 2| + a_k) / (1 + a_k)`` on ``[0, 1]^d``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("g-function coefficients must be nonnegative")

    def func(X):
        return np.prod((np.abs(4.0 * X - 2.0) + a) / (1.0 + a), axis=1)

    return TestFunction("gsobol", InputSpace.uniform(a.size), func, gsobol_first_order(a), {"a": a.tolist()})


def ishigami(a: float = 7.0, b: float = 0.1) -> TestFunction:
    """Ishigami function on ``[-pi, pi]^3``."""
    pi4 = math.pi**4
    v1 = 0.5 * (1.0 + b * pi4 / 5.0) ** 2
    v2 = a**2 / 8.0
    total = 0.5 + a**2 / 8.0 + b * pi4 / 5.0 + b**2 * math.pi**8 / 18.0

    def func(X):
        return np.sin(X[:, 0]) + a * np.sin(X[:, 1]) ** 2 + b * X[:, 2] ** 4 * np.sin(X[:, 0])

    space = InputSpace(tuple(Uniform(-math.pi, math.pi) for _ in range(3)))
    return TestFunction("ishigami", space, func, np.array([v1 / total, v2 / total, 0.0]), {"a": a, "b": b})


FUNCTIONS = {"gsobol": gsobol, "ishigami": ishigami}


@dataclass(frozen=True)
class PickFreezeResult:
    estimate: float
    se: float


def pick_freeze(f, space: InputSpace, i: int, N: int, seed=None) -> PickFreezeResult:
    """First-order index of input ``i`` from two sample matrices sharing column ``i``.

    Uses the symmetric estimator of Janon et al. with a delta-method standard
    error.
    """
    if N < 1000:
        raise ValueError("N must be at least 1000")
    rng = np.random.default_rng(seed)
    A = space.sample(N, rng)
    B = space.sample(N, rng)
    B[:, i] = A[:, i]
    ya, yb = np.asarray(f(A), dtype=float), np.asarray(f(B), dtype=float)
    terms = np.vstack([ya * yb, 0.5 * (ya + yb), 0.5 * (ya**2 + yb**2)])
    m = terms.mean(axis=1)
    num = m[0] - m[1] ** 2
    den = m[2] - m[1] ** 2
    if not den > 0:
        raise DegenerateVarianceError("output variance is zero")
    est = num / den
    grad = np.array([1.0 / den, 2.0 * m[1] * (num - den) / den**2, -num / den**2])
    se = math.sqrt(max(grad @ np.cov(terms) @ grad, 0.0) / N)
    return PickFreezeResult(float(est), se)


@dataclass
class StudyConfig:
    fit: FitOptions = field(default_factory=FitOptions)
    trend: str = "linear"
    n_nodes: int = 64
    n_test: int = 10_000
    simulation: SimulationConfig | None = None
    level: float = 0.9


def default_config(name: str, simulate: bool = False) -> StudyConfig:
    """Study settings used for the benchmark functions.

    The g-function has a kink at 0.5 in every input, which the Gaussian kernel
    fits poorly; its exponents are estimated.
    """
    fit_opts = FitOptions(estimate_p=(name == "gsobol"))
    return StudyConfig(fit=fit_opts, simulation=SimulationConfig() if simulate else None)


@dataclass(frozen=True)
class ReplicateResult:
    n: int
    replicate: int
    q2: float
    predictor: np.ndarray
    global_mean: np.ndarray
    global_std: np.ndarray | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    hits: np.ndarray | None = None
    err_predictor: float = float("nan")
    err_global: float = float("nan")


def _replicate_seeds(seed: int, n: int, replicate: int) -> list[int]:
    ss = np.random.SeedSequence([int(seed), int(n), int(replicate)])
    return [int(s) for s in ss.generate_state(4)]


def run_replicate(f: TestFunction, n: int, replicate: int, cfg: StudyConfig, seed: int = 0) -> ReplicateResult:
    s_design, s_test, s_fit, s_sim = _replicate_seeds(seed, n, replicate)
    design = lhs_sample(f.space, n, s_design)
    design = design.with_responses(f(design.points))
    gp = fit(design, f.space, cfg.trend, replace(cfg.fit, seed=s_fit))
    X_test = f.space.sample(cfg.n_test, np.random.default_rng(s_test))
    q2 = q2_coefficient(f(X_test), gp.predict_mean(X_test))
    table = build_table(gp, f.space, cfg.n_nodes)
    pred = predictor_decomposition(gp, table).indices
    glob = global_decomposition(gp, table)
    out = dict(
        n=n, replicate=replicate, q2=q2, predictor=pred, global_mean=glob.indices,
        err_predictor=l2_error(pred, f.true_indices), err_global=l2_error(glob.indices, f.true_indices),
    )
    if cfg.simulation is not None:
        sim = replace(cfg.simulation, seed=s_sim)
        std, lo, hi = np.empty(f.d), np.empty(f.d), np.empty(f.d)
        for i in range(f.d):
            effect = build_main_effect(gp, f.space, table, i, sim.n_dis)
            std[i] = math.sqrt(effect.moments()[1]) / glob.total_variance
            lo[i], hi[i] = simulate_index(effect, glob.total_variance, replace(sim, seed=s_sim + i)).ci(cfg.level)
        hits = (lo <= f.true_indices) & (f.true_indices <= hi)
        out.update(global_std=std, ci_lower=lo, ci_upper=hi, hits=hits)
    log.info("%s n=%d rep=%d Q2=%.4f", f.name, n, replicate, q2)
    return ReplicateResult(**out)


@dataclass
class StudyResult:
    function: str
    truth: np.ndarray
    rows: list[ReplicateResult]
    level: float = 0.9

    @property
    def sizes(self) -> list[int]:
        return sorted({r.n for r in self.rows})

    def at(self, n: int) -> list[ReplicateResult]:
        return [r for r in self.rows if r.n == n]

    def q2(self, n: int) -> np.ndarray:
        return np.array([r.q2 for r in self.at(n)])

    def estimates(self, n: int, approach: str) -> np.ndarray:
        attr = "predictor" if approach == "predictor_only" else "global_mean"
        return np.array([getattr(r, attr) for r in self.at(n)])

    def errors(self, n: int, approach: str) -> np.ndarray:
        attr = "err_predictor" if approach == "predictor_only" else "err_global"
        return np.array([getattr(r, attr) for r in self.at(n)])

    def coverage(self, rows: Sequence[ReplicateResult] | None = None) -> np.ndarray:
        rows = self.rows if rows is None else rows
        hits = np.array([r.hits for r in rows if r.hits is not None])
        return hits.mean(axis=0) if hits.size else np.full(self.truth.size, np.nan)

    def table1(self) -> list[dict]:
        return [
            {"n": n, "replicates": len(self.at(n)), "q2_mean": float(self.q2(n).mean()),
             "q2_std": float(self.q2(n).std(ddof=1)) if len(self.at(n)) > 1 else 0.0}
            for n in self.sizes
        ]

    def convergence_rows(self) -> list[dict]:
        out = []
        for n in self.sizes:
            q2_mean = float(self.q2(n).mean())
            for approach in ("predictor_only", "global_model"):
                est = self.estimates(n, approach)
                columns = [(f"X{i + 1}", est[:, i]) for i in range(est.shape[1])]
                columns.append(("err_L2", self.errors(n, approach)))
                for name, vals in columns:
                    q05, q95 = np.quantile(vals, [0.05, 0.95])
                    out.append({"n": n, "q2_mean": q2_mean, "approach": approach, "quantity": name,
                                "mean": float(vals.mean()), "q05": float(q05), "q95": float(q95)})
        return out

    def coverage_rows(self, q2_edges=(-np.inf, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0)) -> list[dict]:
        out = []
        groups = [("n", n, n, self.at(n)) for n in self.sizes]
        for lo, hi in zip(q2_edges[:-1], q2_edges[1:]):
            rows = [r for r in self.rows if lo < r.q2 <= hi]
            if rows:
                groups.append(("q2", lo, hi, rows))
        for axis, lo, hi, rows in groups:
            if rows[0].hits is None:
                continue
            level = self.coverage(rows)
            q2_mean = float(np.mean([r.q2 for r in rows]))
            for i, v in enumerate(level):
                out.append({"axis": axis, "bin_lo": lo, "bin_hi": hi, "q2_mean": q2_mean, "input": f"X{i + 1}",
                            "observed_level": float(v), "replicates": len(rows)})
        return out

    def table2(self) -> list[dict]:
        mu = np.array([r.global_mean for r in self.rows])
        s = np.array([r.predictor for r in self.rows])
        level = self.coverage()
        return [
            {"input": f"X{i + 1}", "truth": float(self.truth[i]), "mu_mean": float(mu[:, i].mean()),
             "s_mean": float(s[:, i].mean()), "observed_level": float(level[i])}
            for i in range(self.truth.size)
        ]


def _run_study(f: TestFunction, sizes, replicates, cfg, seed, threads) -> StudyResult:
    jobs = [(n, r) for n in sizes for r in range(replicates)]

    def job(args):
        return run_replicate(f, args[0], args[1], cfg, seed)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, jobs))
    else:
        rows = [job(a) for a in jobs]
    return StudyResult(f.name, np.asarray(f.true_indices), rows, cfg.level)


def convergence_study(f: TestFunction, sizes: Sequence[int], replicates: int, cfg: StudyConfig | None = None,
                      seed: int = 0, threads: int = 1) -> StudyResult:
    """Both estimators over ``replicates`` learning samples of every size."""
    if replicates < 10:
        raise ValueError("at least 10 replicates are required")
    cfg = cfg or default_config(f.name)
    return _run_study(f, sizes, replicates, cfg, seed, threads)


def coverage_study(f: TestFunction, sizes: Sequence[int], replicates: int, level: float = 0.9,
                   cfg: StudyConfig | None = None, seed: int = 0, threads: int = 1) -> StudyResult:
    """Observed coverage of the simulated ``level`` intervals of the global-model index."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    cfg = cfg or default_config(f.name, simulate=True)
    if cfg.simulation is None:
        cfg = replace(cfg, simulation=SimulationConfig())
    cfg = replace(cfg, level=level)
    return _run_study(f, sizes, replicates, cfg, seed, threads)


def fmt(value) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return str(value)


def write_csv(path, rows: list[dict], columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([fmt(row[c]) for c in columns])


def write_study_csvs(outdir, convergence: StudyResult | None, coverage: StudyResult | None) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if convergence is not None:
        write_csv(outdir / "table1.csv", convergence.table1(), ["n", "replicates", "q2_mean", "q2_std"])
        write_csv(outdir / "fig_convergence.csv", convergence.convergence_rows(),
                  ["n", "q2_mean", "approach", "quantity", "mean", "q05", "q95"])
        written += [outdir / "table1.csv", outdir / "fig_convergence.csv"]
    if coverage is not None:
        write_csv(outdir / "fig_coverage.csv", coverage.coverage_rows(),
                  ["axis", "bin_lo", "bin_hi", "q2_mean", "input", "observed_level", "replicates"])
        write_csv(outdir / "table2.csv", coverage.table2(), ["input", "truth", "mu_mean", "s_mean", "observed_level"])
        written += [outdir / "fig_coverage.csv", outdir / "table2.csv"]
    return written
