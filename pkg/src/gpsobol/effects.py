"""Main-effect Gaussian process of one input and simulation of its random Sobol index.

The main effect ``A_i(t) = E_{X_-i}[Y(X) | X_i = t]`` of the conditional
process is itself Gaussian.  It is discretized on quantile-spaced points of
``X_i`` with equal weights (midpoint rule in probability space), its
covariance is factored once, and ``k_sim`` draws of the centered weighted
square ``sum_j w_j (V_j - sum_k w_k V_k)^2`` divided by the expected total
variance give samples of the random index.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import NumericalError
from .gp import FittedGp, kernel_1d
from .inputs import InputSpace
from .quadrature import KernelIntegralTable
from .sobol import quadratic_form_moments

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


@dataclass(frozen=True)
class MainEffectProcess:
    input_index: int
    grid: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    weights: np.ndarray
    sigma2: float

    @property
    def n_dis(self) -> int:
        return self.grid.size

    def moments(self) -> tuple[float, float]:
        """Exact mean and variance of the discretized centered square."""
        return quadratic_form_moments(self.mean, self.cov, self.weights)


@dataclass(frozen=True)
class SimulationConfig:
    n_dis: int = 200
    k_sim: int = 10_000
    seed: int = 0
    jitter: float = 1e-10

    def __post_init__(self):
        if self.n_dis < 8:
            raise ValueError("n_dis must be at least 8")
        if self.k_sim < 100:
            raise ValueError("k_sim must be at least 100")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class IndexDistribution:
    input_index: int
    samples: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        return float(np.std(self.samples, ddof=1))

    def quantile(self, q):
        return np.quantile(self.samples, q)

    def ci(self, level: float = 0.9) -> tuple[float, float]:
        """Equal-tailed empirical interval."""
        if not 0 < level < 1:
            raise ValueError("level must be in (0, 1)")
        lo, hi = np.quantile(self.samples, [(1 - level) / 2, (1 + level) / 2])
        return float(lo), float(hi)


def write_samples_csv(path, distributions: Sequence[IndexDistribution], names: Sequence[str] | None = None) -> None:
    """Sample vectors side by side, one column per input."""
    header = [names[d.input_index] if names is not None else f"X{d.input_index + 1}" for d in distributions]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in zip(*(d.samples for d in distributions)):
            out.writerow([format(float(v), ".17g") for v in row])


def quantile_grid(space: InputSpace, i: int, n_dis: int) -> np.ndarray:
    u = (np.arange(n_dis) + 0.5) / n_dis
    return space.dims[i].quantile(u)


def build_main_effect(gp: FittedGp, space: InputSpace, table: KernelIntegralTable, i: int,
                      n_dis: int = 200) -> MainEffectProcess:
    """Mean and covariance of the main effect of input ``i`` on its grid."""
    if not 0 <= i < gp.d:
        raise IndexError(f"input index {i} out of range")
    grid = quantile_grid(space, i, n_dis)
    theta, p = gp.params.theta[i], gp.params.p[i]
    P = table.others_u1(i)
    B = kernel_1d(theta, p, grid[:, None] - gp.X[None, :, i]) * P[None, :]

    const = gp.beta[0]
    slope = 0.0
    if gp.trend.kind == "linear":
        slopes = gp.beta[1:]
        const += float(np.sum(np.delete(slopes * table.mean, i)))
        slope = slopes[i]
    mean = const + slope * grid + B @ gp.alpha

    V = linalg.solve_triangular(gp.chol, B.T, lower=True, check_finite=False)
    prior = kernel_1d(theta, p, grid[:, None] - grid[None, :]) * table.others_w(i)
    cov = gp.sigma2 * (prior - V.T @ V)
    cov = 0.5 * (cov + cov.T)
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    if min_eig < -PSD_TOL * gp.sigma2:
        raise NumericalError(f"main-effect covariance of input {i} not PSD (min eigenvalue {min_eig:.3e})")
    weights = np.full(n_dis, 1.0 / n_dis)
    return MainEffectProcess(i, grid, mean, cov, weights, gp.sigma2)


def _factor(cov: np.ndarray, sigma2: float, jitter: float) -> np.ndarray:
    """Cholesky factor with escalating jitter, then a clipped eigen-decomposition."""
    n = cov.shape[0]
    if not np.any(cov):
        return np.zeros_like(cov)
    eps = jitter * sigma2
    while eps <= 1e-6 * sigma2 * (1 + 1e-9):
        try:
            return linalg.cholesky(cov + eps * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            eps = eps * 10 if eps > 0 else 1e-10 * sigma2
    log.debug("Cholesky failed up to jitter 1e-6 sigma2; falling back to eigen-decomposition")
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < -PSD_TOL * sigma2:
        raise NumericalError(f"covariance not PSD (min eigenvalue {vals[0]:.3e})")
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def simulate_index(effect: MainEffectProcess, denom: float, cfg: SimulationConfig | None = None) -> IndexDistribution:
    """Draw ``k_sim`` realizations of the random Sobol index of one input.

    Draws use a counter-based Philox stream keyed by ``cfg.seed``, so a seed
    always reproduces the same sample vector.
    """
    cfg = cfg or SimulationConfig()
    if not denom > 0:
        raise ValueError("denominator must be positive")
    L = _factor(effect.cov, effect.sigma2, cfg.jitter)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    z = rng.standard_normal((cfg.k_sim, effect.n_dis))
    V = effect.mean[None, :] + z @ L.T
    w = effect.weights
    centered = V - (V @ w)[:, None]
    samples = (centered**2 @ w) / denom
    return IndexDistribution(effect.input_index, samples)


@dataclass(frozen=True)
class ConvergenceReport:
    input_index: int
    mean: float
    std: float
    mean_drift_grid: float
    std_drift_grid: float
    mean_drift_sim: float
    std_drift_sim: float
    converged: bool
    threshold: float = 0.02

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _drift(new: float, ref: float, floor: float) -> float:
    return abs(new - ref) / max(abs(ref), floor)


def convergence_check(gp: FittedGp, space: InputSpace, table: KernelIntegralTable, i: int, denom: float,
                      cfg: SimulationConfig | None = None, threshold: float = 0.02,
                      floor: float = 0.01) -> ConvergenceReport:
    """Check that ``n_dis`` and ``k_sim`` are large enough for input ``i``.

    Grid direction: the exact mean and standard deviation of the discretized
    index at ``n_dis`` are compared with those at ``2 n_dis``.  Sampling
    direction: ``2 k_sim`` draws from the same stream (the first ``k_sim``
    coincide with the base run) are compared with the base run.  Drifts are
    relative with ``floor`` as the smallest reference magnitude, since indices
    live on [0, 1].  Any drift above ``threshold`` flags non-convergence.
    """
    cfg = cfg or SimulationConfig()
    base = build_main_effect(gp, space, table, i, cfg.n_dis)
    fine = build_main_effect(gp, space, table, i, 2 * cfg.n_dis)
    (m0, v0), (m1, v1) = base.moments(), fine.moments()
    d_base = simulate_index(base, denom, cfg)
    d_more = simulate_index(base, denom, replace(cfg, k_sim=2 * cfg.k_sim))
    drifts = (
        _drift(m1 / denom, m0 / denom, floor),
        _drift(np.sqrt(v1) / denom, np.sqrt(v0) / denom, floor),
        _drift(d_more.mean, d_base.mean, floor),
        _drift(d_more.std, d_base.std, floor),
    )
    return ConvergenceReport(i, d_base.mean, d_base.std, *map(float, drifts),
                             converged=bool(max(drifts) <= threshold), threshold=threshold)
