"""Box-constrained Hooke-Jeeves pattern search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SearchResult:
    x: np.ndarray
    fun: float
    x0: np.ndarray
    fun0: float
    n_evals: int
    converged: bool


def hooke_jeeves(fun, x0, lower, upper, step=None, tol=1e-4, shrink=0.5, max_evals=5000):
    """Minimize ``fun`` over the box ``[lower, upper]`` by pattern search.

    Exploratory moves probe ``+step`` then ``-step`` along each coordinate and
    keep any improvement.  A successful exploration is followed by a pattern
    move along the direction of progress.  When no coordinate improves, the
    step is multiplied by ``shrink``; the search stops once every step is
    below ``tol``.

    Parameters
    ----------
    fun : callable
        Objective ``fun(x) -> float``; non-finite values count as +inf.
    x0 : array_like
        Starting point, clipped into the box.
    lower, upper : array_like
        Box bounds.
    step : array_like, optional
        Initial step per coordinate, by default a quarter of the box width.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    h = np.asarray(step, dtype=float) if step is not None else 0.25 * (upper - lower)
    h = np.where(h > 0, h, tol)
    n_evals = 0

    def f(z):
        nonlocal n_evals
        n_evals += 1
        val = fun(z)
        return float(val) if np.isfinite(val) else np.inf

    def explore(base, fbase):
        z, fz = base.copy(), fbase
        for k in range(z.size):
            for sign in (1.0, -1.0):
                trial = z.copy()
                trial[k] = np.clip(z[k] + sign * h[k], lower[k], upper[k])
                if trial[k] == z[k]:
                    continue
                ft = f(trial)
                if ft < fz:
                    z, fz = trial, ft
                    break
        return z, fz

    fx = f(x)
    x_start, f_start = x.copy(), fx
    while np.max(h) >= tol and n_evals < max_evals:
        z, fz = explore(x, fx)
        if fz < fx:
            # pattern moves while they keep paying off
            while n_evals < max_evals:
                pattern = np.clip(z + (z - x), lower, upper)
                x, fx = z, fz
                zp, fzp = explore(pattern, f(pattern))
                if fzp < fx:
                    z, fz = zp, fzp
                else:
                    break
        else:
            h = h * shrink
    return SearchResult(x, fx, x_start, f_start, n_evals, bool(np.max(h) < tol))
