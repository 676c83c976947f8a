"""Density-weighted one- and two-dimensional integrals of the correlation kernel.

With independent inputs and a product kernel, every Sobol quantity of the
metamodel reduces to the per-dimension primitives gathered in
:class:`KernelIntegralTable`.  Integrals are computed with Gauss-Legendre
rules placed in probability space: nodes on ``[0, 1]`` are pushed through the
input's quantile function, so the weights already carry the density and the
nodes crowd where the density is high.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NotConvergedError
from .gp import FittedGp, kernel_1d
from .inputs import InputDistribution, InputSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights with ``sum(weights) = 1``; ``per_piece`` is set for composite mapped rules."""

    nodes: np.ndarray
    weights: np.ndarray
    target: InputDistribution
    per_piece: int | None = None

    @property
    def degree(self) -> int:
        """Polynomial degree integrated exactly on a uniform target (on each piece when composite)."""
        if self.per_piece is None:
            return 2 * self.nodes.size - 1
        return max((2 * self.per_piece - 7) // 7, 0)

    def integrate(self, g) -> float:
        return float(self.weights @ g(self.nodes))


def _smooth_map(s):
    """``u = I_s(4, 4)`` and its derivative ``140 s^3 (1 - s)^3``.

    Clusters nodes at both ends of a piece so that endpoint behaviour like
    ``u^(1/k)``, ``sqrt(u)``, ``log(1 - u)`` or ``|t - x|^p`` becomes smooth.
    """
    u = s**4 * (35.0 - 84.0 * s + 70.0 * s**2 - 20.0 * s**3)
    du = 140.0 * s**3 * (1.0 - s) ** 3
    return u, du


def _probability_cuts(dist: InputDistribution, breaks) -> np.ndarray:
    inner = list(dist.kinks())
    if breaks is not None:
        inner += list(np.asarray(breaks, dtype=float).ravel())
    lo, hi = dist.support
    inner = [x for x in inner if lo < x < hi]
    cuts = np.unique(np.concatenate([[0.0, 1.0], dist.cdf(np.array(inner, dtype=float))]))
    keep = np.concatenate([[True], np.diff(cuts) > 1e-13])
    cuts = cuts[keep]
    cuts[-1] = 1.0
    return cuts


def build_rule(dist: InputDistribution, n_nodes: int, breaks=None) -> QuadratureRule:
    """Gauss-Legendre rule for ``int g d(dist)`` placed in probability space.

    Plain ``n_nodes``-point Gauss-Legendre on ``[0, 1]`` pushed through the
    quantile function for uniform targets.  Otherwise probability space is cut
    at the density kinks and at ``breaks`` (points where the integrand has a
    kink), and every piece gets ``n_nodes`` Gauss-Legendre nodes through
    :func:`_smooth_map`.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes")
    s, w = np.polynomial.legendre.leggauss(n_nodes)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    cuts = _probability_cuts(dist, breaks)
    if cuts.size == 2 and dist.kind == "uniform":
        return QuadratureRule(dist.quantile(s), w, dist)
    phi, dphi = _smooth_map(s)
    pw = dphi * w
    pw = pw / pw.sum()  # exact already for n_nodes >= 4
    width = np.diff(cuts)
    u = (cuts[:-1, None] + width[:, None] * phi[None, :]).ravel()
    wu = (width[:, None] * pw[None, :]).ravel()
    return QuadratureRule(dist.quantile(np.clip(u, 0.0, 1.0)), wu, dist, per_piece=n_nodes)


@dataclass(frozen=True)
class KernelIntegralTable:
    """Per-dimension kernel integrals over the learning coordinates.

    For dimension ``l`` with kernel factor ``R_l`` and input law ``eta_l``:

    - ``u1[l, j]    = int R_l(t - x_jl) deta_l(t)``
    - ``u2[l, j, k] = int R_l(t - x_jl) R_l(t - x_kl) deta_l(t)``
    - ``w[l]        = int int R_l(t - t') deta_l(t) deta_l(t')``
    - ``t1[l, j]    = int t R_l(t - x_jl) deta_l(t)``
    - ``mean[l]``, ``var[l]``: moments of ``X_l`` under the same rule.

    ``n_nodes`` is the per-piece node count; ``nodes_per_dim`` the resulting
    total per dimension.
    """

    u1: np.ndarray
    u2: np.ndarray
    w: np.ndarray
    t1: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n_nodes: int
    nodes_per_dim: tuple[int, ...] = ()

    def entries(self) -> np.ndarray:
        """All entries flattened in a fixed order, for convergence checks."""
        return np.concatenate([self.u1.ravel(), self.u2.ravel(), self.w, self.t1.ravel(), self.mean, self.var])

    def others_u1(self, i: int) -> np.ndarray:
        """``prod_{l != i} u1[l]``, shape (n,)."""
        out = np.ones(self.u1.shape[1])
        for l in range(self.u1.shape[0]):
            if l != i:
                out = out * self.u1[l]
        return out

    def others_w(self, i: int) -> float:
        return float(np.prod(np.delete(self.w, i)))

    def dump_csv(self, path) -> None:
        """Diagnostic dump, one row per (dimension, quantity, j, k)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["dim", "quantity", "j", "k", "value"])
            d, n = self.u1.shape
            for l in range(d):
                out.writerow([l, "w", "", "", repr(float(self.w[l]))])
                out.writerow([l, "mean", "", "", repr(float(self.mean[l]))])
                out.writerow([l, "var", "", "", repr(float(self.var[l]))])
                for j in range(n):
                    out.writerow([l, "u1", j, "", repr(float(self.u1[l, j]))])
                    out.writerow([l, "t1", j, "", repr(float(self.t1[l, j]))])
                    for k in range(n):
                        out.writerow([l, "u2", j, k, repr(float(self.u2[l, j, k]))])


def _kernel_mean_at(dist, n_nodes, theta, p, points) -> np.ndarray:
    """``int R(t - s) d(dist)(t)`` for each ``s`` in ``points``, split at ``s``."""
    out = np.empty(points.size)
    for k, pt in enumerate(points):
        rule = build_rule(dist, n_nodes, breaks=[pt])
        out[k] = rule.weights @ kernel_1d(theta, p, rule.nodes - pt)
    return out


def build_table(gp: FittedGp, space: InputSpace, n_nodes: int = 64) -> KernelIntegralTable:
    """Kernel integrals of every dimension with ``n_nodes`` nodes per quadrature piece.

    Smooth kernels (``p = 2``) use one rule per dimension.  For ``p < 2`` the
    kernel has a kink at each learning coordinate, so the rule is cut there
    and ``w`` is computed with an inner rule cut at each outer node.
    """
    if space.d != gp.d:
        raise ValueError("space and model dimensions differ")
    d, n = gp.d, gp.n
    u1 = np.empty((d, n))
    u2 = np.empty((d, n, n))
    w = np.empty(d)
    t1 = np.empty((d, n))
    mean = np.empty(d)
    var = np.empty(d)
    sizes = []
    for l, dist in enumerate(space.dims):
        theta, p = gp.params.theta[l], gp.params.p[l]
        smooth = p == 2.0 or theta == 0.0
        outer = build_rule(dist, n_nodes)
        rule = outer if smooth else build_rule(dist, n_nodes, breaks=gp.X[:, l])
        t, wt = rule.nodes, rule.weights
        sizes.append(t.size)
        K = kernel_1d(theta, p, t[:, None] - gp.X[None, :, l])
        u1[l] = wt @ K
        u2[l] = K.T @ (K * wt[:, None])
        u2[l] = 0.5 * (u2[l] + u2[l].T)
        t1[l] = (wt * t) @ K
        to, wo = outer.nodes, outer.weights
        if smooth:
            w[l] = wo @ kernel_1d(theta, p, to[:, None] - to[None, :]) @ wo
        else:
            w[l] = wo @ _kernel_mean_at(dist, n_nodes, theta, p, to)
        mean[l] = wo @ to
        var[l] = wo @ (to - mean[l]) ** 2
    return KernelIntegralTable(u1, u2, w, t1, mean, var, n_nodes, tuple(sizes))


def refine_until_stable(gp: FittedGp, space: InputSpace, tol: float = 1e-8, start: int = 32,
                        max_nodes: int = 4096) -> KernelIntegralTable:
    """Double the node count until no table entry moves by more than ``tol``.

    The change is measured relative to the entry with an absolute floor of
    1e-12.  Raises :class:`NotConvergedError` naming the worst entry when
    ``max_nodes`` is reached.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if 2 * start > max_nodes:
        raise ValueError("max_nodes must allow at least one doubling of start")
    prev = build_table(gp, space, start)
    n_nodes = start
    while True:
        n_nodes *= 2
        if n_nodes > max_nodes:
            break
        table = build_table(gp, space, n_nodes)
        new, old = table.entries(), prev.entries()
        change = np.abs(new - old) / np.maximum(np.abs(new), 1e-12 / tol)
        worst = int(np.argmax(change))
        log.debug("n_nodes=%d worst relative change %.3e", n_nodes, change[worst])
        if change[worst] < tol:
            return table
        prev = table
    raise NotConvergedError(
        f"kernel integrals not stable to {tol:g} at {max_nodes} nodes (worst change {change[worst]:.3e})",
        {"entry": worst, "change": float(change[worst]), "value": float(new[worst]), "n_nodes": n_nodes // 2},
    )
