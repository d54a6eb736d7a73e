"""Monte Carlo estimators built on the simulator: semigroup values, coupled
gradient moduli, coupling-time survival, rate fits and a two-sample KS check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .simulator import simulate_coupled_batch, simulate_single_batch

MIN_PATHS = 100
MIN_KS_SIZE = 100


class InsufficientPointsError(ValueError):
    """Fewer usable points than a fit needs."""


def _observable(f, f_sup=None):
    """Return ``(callable on (n, d) arrays, sup norm)`` for a function or SmoothFunction."""
    if hasattr(f, "value") and hasattr(f, "sup_norm"):
        sup = f.sup_norm() if f_sup is None else f_sup
        fn = f.value
    else:
        sup = f_sup
        fn = f
    if sup is None or not math.isfinite(sup):
        raise ValueError("the observable needs a declared finite sup norm")
    return (lambda p: np.asarray(fn(np.atleast_2d(p)), dtype=float).reshape(-1)), float(sup)


def _check_paths(n_paths):
    if n_paths < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths")


def _mean_stderr(v):
    n = v.size
    sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
    return float(np.mean(v)), sd / math.sqrt(n)


def estimate_semigroup(spec, field, f, x, t, n_paths, params, f_sup=None, workers=1):
    """``E f(X_t)`` started at x: ``(value, stderr)``."""
    fn, _ = _observable(f, f_sup)
    _check_paths(n_paths)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if t == 0:
        return float(fn(x)[0]), 0.0
    res = simulate_single_batch(spec, field, x[0], params, n_paths, t_grid=[t], workers=workers)
    return _mean_stderr(fn(res.x[-1]))


@dataclass
class GradientPoint:
    t: float
    value: float
    stderr: float
    survival: float
    survival_stderr: float
    bound: float  # 2 ||f|| (P(T > t) + 3 stderr) / |x - y|

    @property
    def within_bound(self):
        return self.value <= self.bound


def gradient_curve(spec, field, f, x, y, t_grid, n_paths, params, f_sup=None, workers=1):
    """Coupled estimates of ``|P_t f(x) - P_t f(y)| / |x - y|`` on a time grid.

    One batch of coupled pairs is followed to the last grid time; pairs are
    not followed past their coupling time since their difference is zero
    from then on.
    """
    fn, sup = _observable(f, f_sup)
    _check_paths(n_paths)
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    gap = float(np.linalg.norm(x - y))
    if gap == 0:
        raise ValueError("the gradient estimator needs x != y")
    grid = np.asarray(t_grid, dtype=float).reshape(-1)
    out = []
    pos = grid[grid > 0]
    if np.any(grid == 0):
        v = abs(float(fn(x[None])[0] - fn(y[None])[0])) / gap
        out.append(GradientPoint(0.0, v, 0.0, 1.0, 0.0, 2 * sup * 1.0 / gap))
    if pos.size:
        res = simulate_coupled_batch(spec, field, x, y, params, n_paths, t_grid=pos, workers=workers,
                                     follow_merged=False)
        for i, t in enumerate(pos):
            alive = res.coupling_time > t
            diff = np.zeros(n_paths)
            if np.any(alive):
                diff[alive] = fn(res.x[i, alive]) - fn(res.y[i, alive])
            m, se = _mean_stderr(diff)
            p = float(np.mean(alive))
            pse = math.sqrt(p * (1 - p) / n_paths)
            out.append(GradientPoint(float(t), abs(m) / gap, se / gap, p, pse,
                                     2 * sup * (p + 3 * pse) / gap))
    return out


def estimate_gradient_modulus(spec, field, f, x, y, t, n_paths, params, f_sup=None, workers=1):
    """``(value, stderr)`` of the coupled estimator at a single time t."""
    pt = gradient_curve(spec, field, f, x, y, [t], n_paths, params, f_sup, workers)[0]
    return pt.value, pt.stderr


@dataclass
class SurvivalCurve:
    t: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_paths: int


def wilson_band(k, n, level=0.95):
    """Wilson score interval for binomial proportions ``k / n``."""
    zq = stats.norm.ppf(0.5 + level / 2)
    p = np.asarray(k, dtype=float) / n
    den = 1 + zq**2 / n
    mid = (p + zq**2 / (2 * n)) / den
    half = zq * np.sqrt(p * (1 - p) / n + zq**2 / (4 * n * n)) / den
    return np.clip(mid - half, 0, 1), np.clip(mid + half, 0, 1)


def coupling_survival(spec, field, x0, y0, t_grid, n_paths, params, workers=1, level=0.95):
    """Empirical ``P(T > t)`` with binomial standard errors and Wilson bands."""
    _check_paths(n_paths)
    grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise ValueError("t_grid must be nonempty, nonnegative and increasing")
    res = simulate_coupled_batch(spec, field, x0, y0, params, n_paths, t_grid=grid[-1:], workers=workers,
                                 follow_merged=False)
    tau = res.coupling_time
    k = np.array([np.sum(tau > t) for t in grid])
    p = k / n_paths
    lo, hi = wilson_band(k, n_paths, level)
    return SurvivalCurve(grid, p, np.sqrt(p * (1 - p) / n_paths), lo, hi, n_paths)


@dataclass
class RateFit:
    t: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    used: np.ndarray  # mask of points entering the fit
    slope: float
    intercept: float
    half_width: float
    predicted: float
    tolerance: float
    trend_monotone: bool  # value * t^(-predicted) monotone on the used points

    @property
    def agrees(self):
        return abs(self.slope - self.predicted) <= self.tolerance


def fit_rate(points, predicted_exponent, tolerance=0.25, level=0.95):
    """Least-squares slope of ``log value`` against ``log t``.

    ``points`` is a sequence of ``(t, value, stderr)``; only points with
    ``value > 3 stderr`` are used and at least four are required.
    """
    arr = np.asarray(list(points), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("points must be (t, value, stderr) triples")
    t, v, se = arr.T
    used = (t > 0) & (v > 0) & (v > 3 * se)
    if used.sum() < 4:
        raise InsufficientPointsError(f"only {int(used.sum())} usable points; at least 4 are needed")
    lt, lv = np.log(t[used]), np.log(v[used])
    fit = stats.linregress(lt, lv)
    dof = used.sum() - 2
    half = float(stats.t.ppf(0.5 + level / 2, dof) * fit.stderr)
    comp = v[used] * t[used] ** (-predicted_exponent)
    steps = np.diff(comp)
    mono = bool(np.all(steps >= 0) or np.all(steps <= 0))
    return RateFit(t, v, se, used, float(fit.slope), float(fit.intercept), half,
                   float(predicted_exponent), float(tolerance), mono)


def ks_two_sample(a, b, directions=None):
    """Two-sample Kolmogorov-Smirnov statistic.

    Multi-dimensional samples of shape (n, d) are projected on ``directions``
    (default: the coordinate axes) and the largest statistic is returned.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < MIN_KS_SIZE or b.shape[0] < MIN_KS_SIZE:
        raise ValueError(f"both samples need at least {MIN_KS_SIZE} points")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples have different dimensions")
    dirs = np.eye(a.shape[1]) if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    return max(float(stats.ks_2samp(a @ e, b @ e).statistic) for e in dirs)
