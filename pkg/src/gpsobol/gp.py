"""Gaussian-process metamodel with a polynomial trend and a product power-exponential kernel.

The stochastic part has covariance ``sigma2 * prod_l exp(-theta_l |x_l - u_l|^p_l)``.
Hyperparameters are fitted by maximizing the profile log-likelihood with a
multi-start Hooke-Jeeves search in ``log(theta)``.  A relative nugget is added
to the learning correlation matrix before factorization.

The Cholesky factor is that of the *correlation* matrix ``R_s + nugget * I``
and drives every covariance computation (multiply by ``sigma2``).  The
weights ``alpha = R_s^-1 (Y - F beta)`` of the conditional mean are solved
against the unregularized ``R_s`` by refinement on that factor, so the
predictor interpolates the data.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DegenerateDesignError, NumericalError
from .inputs import Design, InputSpace
from .optimize import hooke_jeeves

log = logging.getLogger(__name__)

MODEL_FORMAT = "gpsobol-model"
MODEL_VERSION = 1
NEG_VAR_TOL = 1e-8
REFINE_STEPS = 5


@dataclass(frozen=True)
class TrendBasis:
    """Regression basis: ``constant`` (1) or ``linear`` (1, x_1, ..., x_d)."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"unknown trend kind {self.kind!r}")

    def size(self, d: int) -> int:
        return 1 if self.kind == "constant" else d + 1

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ones = np.ones((X.shape[0], 1))
        return ones if self.kind == "constant" else np.hstack([ones, X])


def _as_trend(trend) -> TrendBasis:
    return trend if isinstance(trend, TrendBasis) else TrendBasis(str(trend))


@dataclass(frozen=True)
class KernelParams:
    theta: np.ndarray
    p: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        p = np.broadcast_to(np.asarray(self.p, dtype=float), theta.shape).copy()
        if np.any(theta < 0):
            raise ValueError("theta must be nonnegative")
        if np.any((p <= 0) | (p > 2)):
            raise ValueError("p must lie in (0, 2]")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sigma2", float(self.sigma2))


def kernel_1d(theta: float, p: float, h):
    """One-dimensional factor ``exp(-theta |h|^p)``."""
    h = np.abs(h)
    return np.exp(-theta * (h * h if p == 2.0 else h**p))


def correlation_matrix(theta, p, X, U) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    acc = np.zeros((X.shape[0], U.shape[0]))
    for l in range(X.shape[1]):
        h = np.abs(X[:, l, None] - U[None, :, l])
        acc += theta[l] * (h * h if p[l] == 2.0 else h ** p[l])
    return np.exp(-acc)


def correlation(params: KernelParams, x, u) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != u.shape or x.size != params.theta.size:
        raise ValueError("dimension mismatch")
    return float(correlation_matrix(params.theta, params.p, x[None], u[None])[0, 0])


@dataclass
class FitOptions:
    """Controls for :func:`fit`.

    ``theta`` fixes the correlation lengths and skips the search.  With
    ``estimate_p`` each exponent is searched in ``(0.5, 2]`` alongside theta,
    otherwise ``p`` is held at its given value.
    """

    theta: np.ndarray | None = None
    p: float | np.ndarray = 2.0
    estimate_p: bool = False
    nugget: float = 1e-8
    n_starts: int = 5
    step_tol: float = 1e-4
    theta_range: tuple[float, float] = (1e-3, 1e3)
    max_evals: int = 4000
    seed: int | None = 0

    @classmethod
    def from_dict(cls, data: dict) -> "FitOptions":
        data = dict(data)
        if "theta_range" in data:
            data["theta_range"] = tuple(data["theta_range"])
        if data.get("theta") is not None:
            data["theta"] = np.asarray(data["theta"], dtype=float)
        if isinstance(data.get("p"), (list, tuple)):
            data["p"] = np.asarray(data["p"], dtype=float)
        return cls(**data)


@dataclass(frozen=True)
class StartRecord:
    start: np.ndarray
    start_loglik: float
    end: np.ndarray
    end_loglik: float
    n_evals: int


@dataclass(frozen=True)
class FittedGp:
    """Trained Gaussian-process metamodel; immutable after :func:`fit`."""

    X: np.ndarray
    Y: np.ndarray
    trend: TrendBasis
    params: KernelParams
    beta: np.ndarray
    nugget: float
    chol: np.ndarray
    alpha: np.ndarray
    loglik: float = float("nan")
    trace: tuple[StartRecord, ...] = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def sigma2(self) -> float:
        return self.params.sigma2

    @property
    def nugget_variance(self) -> float:
        return self.nugget * self.sigma2

    @property
    def design(self) -> Design:
        return Design(self.X, self.Y)

    @cached_property
    def F(self) -> np.ndarray:
        return self.trend.evaluate(self.X)

    @cached_property
    def rinv(self) -> np.ndarray:
        """Inverse of the regularized learning correlation matrix."""
        inv = linalg.cho_solve((self.chol, True), np.eye(self.n), check_finite=False)
        return 0.5 * (inv + inv.T)

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b, check_finite=False)

    def cross_corr(self, x) -> np.ndarray:
        """Correlations ``R(x, x^(j))``, shape (m, n)."""
        x = self._points(x)
        return correlation_matrix(self.params.theta, self.params.p, x, self.X)

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {x2.shape[1]}")
        return x2

    def predict_mean(self, x):
        """Conditional mean ``F(x) beta + r(x)^T R^-1 (Y - F beta)``."""
        single = np.ndim(x) == 1
        pts = self._points(x)
        out = self.trend.evaluate(pts) @ self.beta + self.cross_corr(pts) @ self.alpha
        return float(out[0]) if single else out

    def predict_var(self, x):
        """Kriging variance, clamped at zero after a round-off check."""
        single = np.ndim(x) == 1
        pts = self._points(x)
        v = linalg.solve_triangular(self.chol, self.cross_corr(pts).T, lower=True, check_finite=False)
        var = self.sigma2 * (1.0 - np.sum(v * v, axis=0))
        var = _clamp_variance(var, self.sigma2)
        return float(var[0]) if single else var

    def predict_cov(self, x, u):
        """Conditional covariance ``sigma2 (R(x,u) - r(x)^T R^-1 r(u))``.

        Returns a float for two single points, else the (m_x, m_u) matrix.
        """
        single = np.ndim(x) == 1 and np.ndim(u) == 1
        px, pu = self._points(x), self._points(u)
        vx = linalg.solve_triangular(self.chol, self.cross_corr(px).T, lower=True, check_finite=False)
        vu = linalg.solve_triangular(self.chol, self.cross_corr(pu).T, lower=True, check_finite=False)
        prior = correlation_matrix(self.params.theta, self.params.p, px, pu)
        cov = self.sigma2 * (prior - vx.T @ vu)
        return float(cov[0, 0]) if single else cov

    def to_dict(self, space: InputSpace | None = None) -> dict:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "trend": self.trend.kind,
            "theta": self.params.theta.tolist(),
            "p": self.params.p.tolist(),
            "sigma2": self.params.sigma2,
            "beta": self.beta.tolist(),
            "nugget": self.nugget,
            "loglik": self.loglik,
            "design": {"points": self.X.tolist(), "responses": self.Y.tolist()},
        }
        if space is not None:
            doc["space"] = space.to_list()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedGp":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
        params = KernelParams(np.array(doc["theta"]), np.array(doc["p"]), doc["sigma2"])
        return _assemble(
            np.array(doc["design"]["points"], dtype=float),
            np.array(doc["design"]["responses"], dtype=float),
            TrendBasis(doc["trend"]),
            params,
            np.array(doc["beta"], dtype=float),
            float(doc["nugget"]),
            loglik=float(doc.get("loglik", float("nan"))),
        )

    def save(self, path, space: InputSpace | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(space), indent=1), encoding="utf-8")


def load_model(path) -> tuple[FittedGp, InputSpace | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    space = InputSpace.from_list(doc["space"]) if "space" in doc else None
    return FittedGp.from_dict(doc), space


def _clamp_variance(var, sigma2):
    if np.any(var < -NEG_VAR_TOL * sigma2):
        raise NumericalError(f"negative variance {np.min(var):.3e} beyond round-off level")
    return np.maximum(var, 0.0)


def _assemble(X, Y, trend, params, beta, nugget, loglik=float("nan"), trace=()) -> FittedGp:
    R = correlation_matrix(params.theta, params.p, X, X)
    R[np.diag_indices_from(R)] += nugget
    try:
        L = linalg.cholesky(R, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise DegenerateDesignError("learning correlation matrix is not positive definite") from exc
    resid = Y - trend.evaluate(X) @ beta
    R[np.diag_indices_from(R)] -= nugget
    alpha = _refined_solve(L, R, resid)
    return FittedGp(X, Y, trend, params, np.asarray(beta, dtype=float), float(nugget), L, alpha, loglik, tuple(trace))


def _refined_solve(L, R, b, max_steps=REFINE_STEPS):
    """Solve ``R x = b`` using the factor ``L`` of ``R + nugget I`` plus iterative refinement.

    The nugget keeps the factorization stable but shifts the predictor at the
    data by ``nugget * x``.  Refinement removes that shift in the directions
    the factor resolves well; a step is kept only if it at least halves the
    residual, so near-null directions stay regularized.
    """
    x = linalg.cho_solve((L, True), b, check_finite=False)
    r = b - R @ x
    err = np.max(np.abs(r))
    for _ in range(max_steps):
        trial = x + linalg.cho_solve((L, True), r, check_finite=False)
        r_trial = b - R @ trial
        err_trial = np.max(np.abs(r_trial))
        if not err_trial <= 0.5 * err:
            break
        x, r, err = trial, r_trial, err_trial
    return x


def profile_loglik(X, Y, F, theta, p, nugget):
    """Profile log-likelihood with beta and sigma2 concentrated out.

    Returns ``(loglik, beta, sigma2)``; ``loglik`` is ``-inf`` when the
    correlation matrix cannot be factored.
    """
    n = X.shape[0]
    R = correlation_matrix(theta, p, X, X)
    R[np.diag_indices_from(R)] += nugget
    try:
        L = linalg.cholesky(R, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf, None, None
    Ft = linalg.solve_triangular(L, F, lower=True, check_finite=False)
    yt = linalg.solve_triangular(L, Y, lower=True, check_finite=False)
    Q, Rq = np.linalg.qr(Ft)
    beta = linalg.solve_triangular(Rq, Q.T @ yt, check_finite=False)
    resid = yt - Ft @ beta
    sigma2 = float(resid @ resid) / n
    if not sigma2 > 0:
        return -np.inf, beta, sigma2
    ll = -0.5 * n * np.log(sigma2) - np.sum(np.log(np.diag(L))) - 0.5 * n * (np.log(2 * np.pi) + 1.0)
    return float(ll), beta, sigma2


def maximin_lhs(n: int, d: int, rng: np.random.Generator, candidates: int = 20) -> np.ndarray:
    """Best of ``candidates`` random unit-cube LHS designs by minimum pairwise distance."""
    best, best_score = None, -np.inf
    for _ in range(candidates):
        u = np.empty((n, d))
        for k in range(d):
            u[:, k] = (rng.permutation(n) + rng.random(n)) / n
        if n > 1:
            diff = u[:, None, :] - u[None, :, :]
            dist = np.sqrt(np.sum(diff**2, axis=-1))
            score = np.min(dist[np.triu_indices(n, 1)])
        else:
            score = 0.0
        if score > best_score:
            best, best_score = u, score
    return best


def _check_design(design: Design, trend: TrendBasis) -> tuple[np.ndarray, np.ndarray]:
    if design.responses is None:
        raise DegenerateDesignError("design has no responses")
    X, Y = design.points, design.responses
    if X.shape[0] <= trend.size(X.shape[1]):
        raise DegenerateDesignError(f"need more than {trend.size(X.shape[1])} points, got {X.shape[0]}")
    if np.ptp(Y) == 0:
        raise DegenerateDesignError("all responses are equal")
    if np.unique(X, axis=0).shape[0] < X.shape[0]:
        raise DegenerateDesignError("design contains duplicated points")
    return X, Y


def fit(design: Design, space: InputSpace | None = None, trend="linear", options: FitOptions | None = None) -> FittedGp:
    """Fit the metamodel by maximum profile likelihood.

    ``theta_l`` is searched on ``[lo/range_l^p, hi/range_l^p]`` (log scale)
    where ``range_l`` is the support width of input ``l`` (design range when
    no space is given).  The best multi-start result wins, ties broken by
    start index.
    """
    options = options or FitOptions()
    trend = _as_trend(trend)
    X, Y = _check_design(design, trend)
    n, d = X.shape
    F = trend.evaluate(X)
    nugget = options.nugget
    p_fixed = np.broadcast_to(np.asarray(options.p, dtype=float), (d,)).copy()

    if options.theta is not None:
        theta = np.broadcast_to(np.asarray(options.theta, dtype=float), (d,)).copy()
        ll, beta, sigma2 = profile_loglik(X, Y, F, theta, p_fixed, nugget)
        if beta is None:
            raise DegenerateDesignError("correlation matrix not positive definite at the given theta")
        return _assemble(X, Y, trend, KernelParams(theta, p_fixed, sigma2), beta, nugget, ll)

    ranges = space.widths if space is not None else np.ptp(X, axis=0)
    ranges = np.where(ranges > 0, ranges, 1.0)
    log_lo, log_hi = np.log(options.theta_range[0]), np.log(options.theta_range[1])
    n_var = 2 * d if options.estimate_p else d
    lower = np.full(n_var, log_lo)
    upper = np.full(n_var, log_hi)
    if options.estimate_p:
        lower[d:], upper[d:] = 0.5 + 1e-6, 2.0

    def unpack(z):
        p = z[d:] if options.estimate_p else p_fixed
        # scaled parametrization: theta_l * range_l^p_l is searched on a fixed box
        theta = np.exp(z[:d]) / ranges**p
        return theta, p

    def objective(z):
        theta, p = unpack(z)
        return -profile_loglik(X, Y, F, theta, p, nugget)[0]

    rng = np.random.default_rng(options.seed)
    starts = lower + maximin_lhs(options.n_starts, n_var, rng) * (upper - lower)
    records = []
    for z0 in starts:
        res = hooke_jeeves(objective, z0, lower, upper, tol=options.step_tol, max_evals=options.max_evals)
        records.append(StartRecord(res.x0, -res.fun0, res.x, -res.fun, res.n_evals))
        log.debug("start %s -> loglik %.6g (%d evals)", np.round(z0, 3), -res.fun, res.n_evals)
    best = max(range(len(records)), key=lambda k: (records[k].end_loglik, -k))
    if not np.isfinite(records[best].end_loglik):
        raise DegenerateDesignError("no start produced a finite likelihood")
    theta, p = unpack(records[best].end)
    ll, beta, sigma2 = profile_loglik(X, Y, F, theta, p, nugget)
    return _assemble(X, Y, trend, KernelParams(theta, p, sigma2), beta, nugget, ll, records)


@dataclass(frozen=True)
class ValidationReport:
    q2: float
    rmse: float
    n_test: int
    method: str
    observed: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"q2": self.q2, "rmse": self.rmse, "n_test": self.n_test, "method": self.method}


def q2_coefficient(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    total = np.sum((y.mean() - y) ** 2)
    if total == 0:
        raise ValueError("test responses have zero variance")
    return float(1.0 - np.sum((y - y_hat) ** 2) / total)


def _report(y, y_hat, method) -> ValidationReport:
    q2 = q2_coefficient(y, y_hat)
    rmse = float(np.sqrt(np.mean((y - y_hat) ** 2)))
    return ValidationReport(q2, rmse, int(len(y)), method, np.asarray(y), np.asarray(y_hat))


def q2_score(gp: FittedGp, test: Design) -> ValidationReport:
    if test.responses is None:
        raise ValueError("test design has no responses")
    return _report(test.responses, gp.predict_mean(test.points), "holdout")


def loo_residuals(gp: FittedGp) -> np.ndarray:
    """Leave-one-out residuals ``y_i - yhat_{-i}`` at fixed hyperparameters.

    The trend coefficients are re-estimated without point ``i`` (universal
    kriging), using the block inverse of the bordered system.
    """
    Rinv = gp.rinv
    F = gp.F
    RiF = Rinv @ F
    G = F.T @ RiF
    Q = Rinv - RiF @ np.linalg.solve(G, RiF.T)
    return (Q @ gp.Y) / np.diag(Q)


def loo_q2(gp: FittedGp) -> ValidationReport:
    if gp.n < 3:
        raise ValueError("leave-one-out needs at least 3 points")
    resid = loo_residuals(gp)
    return _report(gp.Y, gp.Y - resid, "leave_one_out")
