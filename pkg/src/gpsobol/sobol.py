"""First-order Sobol indices of a fitted Gaussian-process metamodel.

Two estimators are provided:

* predictor only: the Sobol index of the conditional mean ``m(x)``;
* global model: the mean (and spread) of the random index obtained by applying
  the variance decomposition to the whole conditional process.  The
  denominator is the expected total variance ``E_omega Var_X[Y]``; the
  randomness lives in the numerator only.

All quantities are assembled from :class:`~gpsobol.quadrature.KernelIntegralTable`
entries, so no sampling is involved.  Notation used in the code, with
``a = R^-1 (Y - F beta)`` and ``P_i[j] = prod_{l != i} u1[l, j]``:

    m_i(t) = const + beta_i t + sum_j a_j P_i[j] R_i(t - x_ji)       (main effect of the mean)
    c_i(t, t') = sigma2 [R_i(t - t') prod_{l != i} w_l - b(t)^T R^-1 b(t')],
                 b_j(t) = P_i[j] R_i(t - x_ji)                        (main-effect covariance)
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVarianceError, NumericalError
from .gp import FittedGp
from .inputs import InputSpace
from .quadrature import KernelIntegralTable

NEG_INDEX_TOL = 1e-6


@dataclass(frozen=True)
class SobolEstimate:
    input_index: int
    approach: str
    value: float
    std: float | None = None
    ci: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        out = {"input_index": self.input_index, "approach": self.approach, "value": self.value}
        if self.std is not None:
            out["std"] = self.std
        if self.ci is not None:
            out["ci"] = {"level": self.ci[0], "lower": self.ci[1], "upper": self.ci[2]}
        return out


@dataclass(frozen=True)
class VarianceDecomposition:
    total_variance: float
    numerators: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return self.numerators / self.total_variance


def _trend_slopes(gp: FittedGp) -> np.ndarray:
    return gp.beta[1:] if gp.trend.kind == "linear" else np.zeros(gp.d)


def _quad_form_trace(rinv: np.ndarray, M: np.ndarray) -> float:
    """``sum_jk rinv_jk M_jk`` = tr(R^-1 M) for symmetric M."""
    return float(np.sum(rinv * M))


def main_effect_variances(gp: FittedGp, table: KernelIntegralTable) -> np.ndarray:
    """``Var_{X_i} E[m(X) | X_i]`` for every input."""
    a, slopes = gp.alpha, _trend_slopes(gp)
    out = np.empty(gp.d)
    for i in range(gp.d):
        ai = a * table.others_u1(i)
        u1 = table.u1[i]
        cross = table.t1[i] - table.mean[i] * u1
        cov_k = table.u2[i] - np.outer(u1, u1)
        out[i] = slopes[i] ** 2 * table.var[i] + 2.0 * slopes[i] * (ai @ cross) + ai @ cov_k @ ai
    return out


def predictor_variance(gp: FittedGp, table: KernelIntegralTable) -> float:
    """``Var_X m(X)``."""
    a, slopes = gp.alpha, _trend_slopes(gp)
    q = np.prod(table.u1, axis=0)
    prod_u2 = np.prod(table.u2, axis=0)
    trend_var = float(np.sum(slopes**2 * table.var))
    cross = 0.0
    for l in range(gp.d):
        cross += slopes[l] * (a @ ((table.t1[l] - table.mean[l] * table.u1[l]) * table.others_u1(l)))
    kernel_var = a @ prod_u2 @ a - (a @ q) ** 2
    return trend_var + 2.0 * cross + kernel_var


def expected_total_variance(gp: FittedGp, table: KernelIntegralTable) -> float:
    """``E_omega Var_X[Y]`` = Var_X m + int v - int int c."""
    q = np.prod(table.u1, axis=0)
    prod_u2 = np.prod(table.u2, axis=0)
    rinv = gp.rinv
    mean_kriging_var = 1.0 - _quad_form_trace(rinv, prod_u2)
    mean_cov = float(np.prod(table.w)) - q @ rinv @ q
    return predictor_variance(gp, table) + gp.sigma2 * (mean_kriging_var - mean_cov)


def main_effect_expected_extra(gp: FittedGp, table: KernelIntegralTable) -> np.ndarray:
    """``int c_i(t, t) - int int c_i(t, t')`` for every input.

    This is the part of ``E_omega Var_{X_i}[A_i]`` contributed by the
    covariance of the main-effect process.
    """
    rinv = gp.rinv
    out = np.empty(gp.d)
    for i in range(gp.d):
        P = table.others_u1(i)
        u1 = table.u1[i]
        cov_k = (table.u2[i] - np.outer(u1, u1)) * np.outer(P, P)
        out[i] = gp.sigma2 * ((1.0 - table.w[i]) * table.others_w(i) - _quad_form_trace(rinv, cov_k))
    return out


def _check_denominator(total: float, gp: FittedGp) -> None:
    if not total > 1e-12 * gp.sigma2:
        raise DegenerateVarianceError(f"total variance {total:.3e} is negligible (constant predictor)")


def _clamp_indices(numerators: np.ndarray, total: float) -> np.ndarray:
    ratio = numerators / total
    if np.any(ratio < -NEG_INDEX_TOL):
        raise NumericalError(f"negative variance share {ratio.min():.3e} beyond quadrature round-off")
    return np.maximum(numerators, 0.0)


def predictor_decomposition(gp: FittedGp, table: KernelIntegralTable) -> VarianceDecomposition:
    total = predictor_variance(gp, table)
    _check_denominator(total, gp)
    return VarianceDecomposition(total, _clamp_indices(main_effect_variances(gp, table), total))


def global_decomposition(gp: FittedGp, table: KernelIntegralTable) -> VarianceDecomposition:
    total = expected_total_variance(gp, table)
    _check_denominator(total, gp)
    num = main_effect_variances(gp, table) + main_effect_expected_extra(gp, table)
    return VarianceDecomposition(total, _clamp_indices(num, total))


def sobol_predictor(gp: FittedGp, space: InputSpace, table: KernelIntegralTable) -> list[SobolEstimate]:
    """Sobol indices of the conditional-mean predictor."""
    _check_shapes(gp, space, table)
    dec = predictor_decomposition(gp, table)
    return [SobolEstimate(i, "predictor_only", float(s)) for i, s in enumerate(dec.indices)]


def sobol_global_mean(gp: FittedGp, space: InputSpace, table: KernelIntegralTable) -> list[SobolEstimate]:
    """Expected value of the random Sobol index of the conditional process."""
    _check_shapes(gp, space, table)
    dec = global_decomposition(gp, table)
    return [SobolEstimate(i, "global_model", float(s)) for i, s in enumerate(dec.indices)]


def quadratic_form_moments(mean: np.ndarray, cov: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Mean and variance of ``Q = sum_j w_j (V_j - sum_k w_k V_k)^2`` for ``V ~ N(mean, cov)``.

    ``Q = V^T L V`` with ``L = diag(w) - w w^T``, hence
    ``E Q = tr(L C) + mu^T L mu`` and ``Var Q = 2 tr((L C)^2) + 4 mu^T L C L mu``.
    """
    w = np.asarray(weights, dtype=float)
    lam = np.diag(w) - np.outer(w, w)
    LC = lam @ cov
    Lmu = w * (mean - w @ mean)
    e_q = float(np.trace(LC) + mean @ Lmu)
    var_q = float(2.0 * np.sum(LC * LC.T) + 4.0 * Lmu @ cov @ Lmu)
    return e_q, max(var_q, 0.0)


def sobol_global_std(gp: FittedGp, space: InputSpace, table: KernelIntegralTable,
                     effects: Sequence | None = None, n_dis: int = 200) -> list[SobolEstimate]:
    """Global-model indices with their standard deviation.

    The variance of the numerator is evaluated on the discretized main-effect
    processes ``effects`` (built on demand when omitted); the denominator is
    the expected total variance, squared.
    """
    from .effects import build_main_effect

    _check_shapes(gp, space, table)
    dec = global_decomposition(gp, table)
    if effects is None:
        effects = [build_main_effect(gp, space, table, i, n_dis) for i in range(gp.d)]
    out = []
    for eff in effects:
        _, var_q = quadratic_form_moments(eff.mean, eff.cov, eff.weights)
        i = eff.input_index
        out.append(SobolEstimate(i, "global_model", float(dec.indices[i]), float(np.sqrt(var_q)) / dec.total_variance))
    return out


def l2_error(estimates, truth) -> float:
    """Sum of squared deviations from the true indices."""
    values = np.array([e.value if isinstance(e, SobolEstimate) else e for e in estimates], dtype=float)
    truth = np.asarray(truth, dtype=float)
    if values.shape != truth.shape:
        raise ValueError("estimates and truth differ in length")
    return float(np.sum((truth - values) ** 2))


ESTIMATE_COLUMNS = ("input", "approach", "value", "std", "ci_lo", "ci_hi")


def estimate_rows(estimates: Sequence[SobolEstimate], names: Sequence[str] | None = None) -> list[dict]:
    """One flat record per estimate; missing std / CI fields are empty strings."""
    rows = []
    for e in estimates:
        rows.append({
            "input": names[e.input_index] if names is not None else e.input_index,
            "approach": e.approach,
            "value": e.value,
            "std": e.std if e.std is not None else "",
            "ci_lo": e.ci[1] if e.ci is not None else "",
            "ci_hi": e.ci[2] if e.ci is not None else "",
        })
    return rows


def write_estimates_csv(path, estimates: Sequence[SobolEstimate], names: Sequence[str] | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(ESTIMATE_COLUMNS)
        for row in estimate_rows(estimates, names):
            out.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row.values()])


def estimates_to_json(estimates: Sequence[SobolEstimate], names: Sequence[str] | None = None) -> str:
    docs = []
    for e in estimates:
        doc = e.to_dict()
        if names is not None:
            doc["input"] = names[e.input_index]
        docs.append(doc)
    return json.dumps(docs, indent=1, sort_keys=True)


def _check_shapes(gp, space, table):
    if space.d != gp.d or table.u1.shape != (gp.d, gp.n):
        raise ValueError("model, space and table do not match")
