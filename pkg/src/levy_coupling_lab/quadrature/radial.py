"""Polar-coordinate integration over R^d (d = 1, 2) around a singular origin.

Radial integrals are done in ``s = log r`` so that power-law singularities at
the origin and slowly decaying tails both become smooth, evenly spread
integrands.  Along each ray the breakpoints are the crossings with the
integrand's features; in 2-d the angular integral is itself adaptive with the
radial errors propagated into its error estimate.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Plane, Point, Sphere, angle_breaks
from .gk import integrate_tagged

COARSE_STEP = 4.0
FINE_STEP = 1.0
MAX_LINEAR_NODES = 4000
MAX_LINEAR_NODES_2D = 64


def crossing_matrix(features, dirs):
    """Radii where each ray ``r * dirs[i]`` meets each feature; NaN where it does not."""
    m, d = dirs.shape
    cols = []
    for f in features:
        if isinstance(f, Sphere):
            c = np.asarray(f.center, dtype=float)
            b = dirs @ c
            disc = b * b - c @ c + f.radius**2
            s = np.sqrt(np.where(disc >= 0, disc, np.nan))
            cols.extend([b - s, b + s])
        elif isinstance(f, Plane):
            n = np.asarray(f.normal, dtype=float)
            den = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                cols.append(np.where(den != 0, f.offset / den, np.nan))
        elif isinstance(f, Point):
            p = np.asarray(f.where, dtype=float)
            norm = float(np.sqrt(p @ p))
            if norm == 0:
                continue
            if d == 1:
                cols.append(np.where(dirs[:, 0] * p[0] > 0, norm, np.nan))
            else:
                cols.append(np.full(m, norm))
    if not cols:
        return np.empty((m, 0))
    out = np.column_stack(cols)
    out[~(out > 0)] = np.nan
    return out


def _base_grid(r_min, r_max, dense_from, length_scale, max_linear=MAX_LINEAR_NODES):
    s_lo, s_hi = math.log(r_min), math.log(r_max)
    s_dense = min(max(math.log(dense_from) - 2.0, s_lo), s_hi)
    coarse = np.arange(s_lo, s_dense, COARSE_STEP)
    fine = np.arange(s_dense, s_hi, FINE_STEP)
    grid = [coarse, fine, [s_hi]]
    if length_scale is not None and r_max > 1.0:
        n = min(int((r_max - 1.0) / length_scale), max_linear)
        if n > 1:
            grid.append(np.log(np.linspace(1.0, r_max, n + 1)))
    return np.unique(np.concatenate(grid))


def integrate_rays(g, dirs, features, r_min, r_max, rtol, atol, limit,
                   dense_from=1.0, length_scale=None, max_linear=MAX_LINEAR_NODES):
    """``∫_{r_min}^{r_max} g(r e) r^(d-1) dr`` for every direction ``e`` in ``dirs``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    m, d = dirs.shape
    base = _base_grid(r_min, r_max, dense_from, length_scale, max_linear)
    cross = crossing_matrix(features, dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        sc = np.log(cross)
    sc[~((sc > base[0]) & (sc < base[-1]))] = np.nan
    pts = np.sort(np.hstack([np.broadcast_to(base, (m, base.size)), sc]), axis=1)
    lo, hi = pts[:, :-1], pts[:, 1:]
    ok = np.isfinite(lo) & np.isfinite(hi) & (hi - lo > 1e-13 * (1 + np.abs(lo)))
    rows = np.nonzero(ok)[0]
    a, b = lo[ok], hi[ok]

    def func(s, tags):
        r = np.exp(s)
        z = (r[:, :, None] * dirs[tags][:, None, :]).reshape(-1, d)
        return g(z).reshape(s.shape) * r**d

    return integrate_tagged(func, a, b, rows, m, rtol, atol, limit=limit * m)


def integrate_space(g, d, features, r_min, r_max, rtol, atol, limit=20000,
                    dense_from=1.0, length_scale=None):
    """Integrate ``g(z)`` over ``r_min < |z| < r_max`` in R^d, d in {1, 2}.

    ``g`` maps points of shape (n, d) to values of shape (n,).  Returns
    ``(value, error_estimate)``.
    """
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        vals, errs = integrate_rays(g, dirs, features, r_min, r_max, rtol, 0.5 * atol, limit,
                                    dense_from, length_scale)
        return float(vals.sum()), float(errs.sum())
    if d != 2:
        raise ValueError("deterministic quadrature supports d = 1 and d = 2 only")
    inner_rtol = rtol / 20
    inner_atol = atol / (20 * 2 * math.pi)

    def outer(theta, tags):
        t = theta.reshape(-1)
        dirs = np.column_stack([np.cos(t), np.sin(t)])
        vals, errs = integrate_rays(g, dirs, features, r_min, r_max, inner_rtol, inner_atol, limit,
                                    dense_from, length_scale, MAX_LINEAR_NODES_2D)
        return vals.reshape(theta.shape), errs.reshape(theta.shape)

    breaks = np.unique(np.concatenate([angle_breaks(features), np.linspace(0, 2 * math.pi, 9)]))
    breaks = breaks[breaks <= 2 * math.pi]
    a, b = breaks[:-1], breaks[1:]
    keep = b - a > 1e-12
    a, b = a[keep], b[keep]
    val, err = integrate_tagged(outer, a, b, np.zeros(len(a), dtype=np.int64), 1, rtol, 0.5 * atol, limit)
    return float(val[0]), float(err[0])
