"""Vectorised adaptive Gauss-Kronrod (G10/K21) integration over tagged intervals.

Many independent integrals are refined in lockstep: every interval carries an
integer tag and the result is summed per tag.  The 2-d operator quadrature
uses this with one tag per angular node, so an entire outer-rule level of
radial integrals costs a handful of numpy calls.
"""

from __future__ import annotations

import numpy as np

# 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
_XGK = np.array([
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208980029534,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG = np.array([
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS = np.zeros(21)
GAUSS[1:10:2] = _WG
GAUSS[11:20:2] = _WG[::-1]

EPS = np.finfo(float).eps


class QuadratureBudgetError(RuntimeError):
    """The subdivision budget ran out before the tolerance was met."""


CHUNK = 8192


def gk21(func, a, b, tags):
    """One G10/K21 pass over intervals ``[a_i, b_i]``.

    Returns per-interval integrals, error estimates, and a flag marking
    intervals whose error is already at the round-off floor.
    """
    if len(a) > CHUNK:
        parts = [gk21(func, a[i:i + CHUNK], b[i:i + CHUNK], tags[i:i + CHUNK])
                 for i in range(0, len(a), CHUNK)]
        return tuple(np.concatenate(p) for p in zip(*parts))
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * NODES[None, :]
    out = func(x, tags)
    inner = None
    if isinstance(out, tuple):
        out, inner = out
    fx = np.asarray(out, dtype=float)
    res_k = (fx @ KRONROD) * half
    res_g = (fx @ GAUSS) * half
    ahalf = np.abs(half)
    resabs = (np.abs(fx) @ KRONROD) * ahalf
    mean = res_k / np.where(half != 0, half, 1.0) * 0.5
    resasc = (np.abs(fx - mean[:, None]) @ KRONROD) * ahalf
    err = np.abs(res_k - res_g)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where(resasc > 0, scaled, err)
    floor = 50 * EPS * resabs
    err = np.maximum(err, floor)
    if inner is not None:
        err = err + (np.abs(np.asarray(inner, dtype=float)) @ KRONROD) * ahalf
    bad = ~np.isfinite(res_k)
    if np.any(bad):
        raise FloatingPointError("non-finite integrand value inside an integration interval")
    return res_k, err, err <= floor * (1 + 1e-9)


def integrate_tagged(func, a, b, tags, n_tags, rtol, atol, limit=20000, min_width=0.0):
    """Integrate ``func`` over the union of tagged intervals, separately per tag.

    ``func(x, tags)`` receives nodes of shape (k, 21) and the tag of each row
    and returns values of the same shape, or ``(values, inner_errors)`` when
    each value is itself an approximate integral.  Convergence is declared per
    tag once its summed error is below ``max(atol, rtol * |integral|)``.
    ``limit`` bounds the total number of bisections.  Returns arrays
    ``(values, errors)`` of length ``n_tags``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tags = np.asarray(tags, dtype=np.int64)
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (n_tags,))
    done_val = np.zeros(n_tags)
    done_err = np.zeros(n_tags)
    res, err, flat = gk21(func, a, b, tags)
    splits = 0
    while True:
        val = done_val + np.bincount(tags, res, n_tags)
        tot = done_err + np.bincount(tags, err, n_tags)
        target = np.maximum(atol, rtol * np.abs(val))
        open_tag = tot > target
        if not np.any(open_tag):
            return val, tot
        count = np.bincount(tags, minlength=n_tags).astype(float)
        share = target / np.maximum(count, 1.0)
        refine = open_tag[tags] & (err > share[tags])
        # always split the worst interval of every open tag
        order = np.lexsort((-err, tags))
        first = np.ones(len(order), dtype=bool)
        first[1:] = tags[order][1:] != tags[order][:-1]
        worst = order[first]
        refine[worst[open_tag[tags[worst]]]] = True
        wide = (b - a) > np.maximum(min_width, 1e3 * EPS * np.maximum(np.abs(a), np.abs(b)))
        refine &= wide & ~flat
        if not np.any(refine):
            # only round-off limited intervals are left: nothing more to gain
            if np.all(flat[open_tag[tags]]):
                return val, tot
            raise QuadratureBudgetError("intervals cannot be refined further; tolerance not met")
        keep = ~refine
        # finished tags and unsplit intervals are banked so they are not recomputed
        bank = keep & ~open_tag[tags]
        done_val += np.bincount(tags[bank], res[bank], n_tags)
        done_err += np.bincount(tags[bank], err[bank], n_tags)
        stay = keep & open_tag[tags]
        splits += int(refine.sum())
        if splits > limit:
            raise QuadratureBudgetError(
                f"subdivision budget of {limit} exhausted; error {tot.max():.3g} above target {target.max():.3g}"
            )
        ra, rb, rt = a[refine], b[refine], tags[refine]
        mid = 0.5 * (ra + rb)
        na = np.concatenate([ra, mid])
        nb = np.concatenate([mid, rb])
        nt = np.concatenate([rt, rt])
        new_res, new_err, new_flat = gk21(func, na, nb, nt)
        a = np.concatenate([a[stay], na])
        b = np.concatenate([b[stay], nb])
        tags = np.concatenate([tags[stay], nt])
        res = np.concatenate([res[stay], new_res])
        err = np.concatenate([err[stay], new_err])
        flat = np.concatenate([flat[stay], new_flat])


def integrate(func, breaks, rtol=1e-10, atol=0.0, limit=20000):
    """Scalar convenience wrapper: integrate ``func(x)`` over consecutive ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    val, err = integrate_tagged(
        lambda x, t: func(x), a, b, np.zeros(len(a), dtype=np.int64), 1, rtol, atol, limit
    )
    return float(val[0]), float(err[0])
