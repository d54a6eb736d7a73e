"""Quadrature evaluation of the Lévy-type operator, its perturbation and its couplings.

Every operator here is an integral over jump sizes z of

    bracket(z) = h(P + D(z)) - h(P) - sum_j <grad_j h(P), D_j(z)> 1{|D_j(z)| <= 1}

against one or more branch densities, where ``P`` is the current state (a
point, or a pair of points) and ``D`` is the displacement the branch applies
to each component.  The ball ``|z| < eps_quad`` is left out and replaced by a
Taylor bound; in the Taylor zone of small displacements the bracket is
computed from the integral form of the remainder to avoid cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..functions import PairFunction, SmoothFunction
from ..geometry import Plane, Point, Sphere
from ..kernels import (
    CoefficientField,
    LevyMeasureSpec,
    PerturbationKernel,
    _branch_densities,
    _coeff4,
    _norm,
    clip_displacement,
)
from .gk import QuadratureBudgetError
from .radial import integrate_space

__all__ = [
    "QuadratureConfig", "OperatorResult", "QuadratureBudgetError",
    "apply_L", "apply_L_mu", "apply_L_star", "apply_coupling", "apply_coupling_mu",
    "apply_LC", "apply_LR", "lc_closed_form", "mass_nu_u", "mass_mu",
]

EPS_FLOOR = 1e-150
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_S = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W * (1.0 - _GL_S)


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and limits of the operator quadrature.

    ``tol`` is relative, ``atol`` absolute (default ``tol / 100``).
    ``inner_cutoff`` is the radius of the Taylor shell and ``far_cutoff`` the
    outer radius for untruncated measures; both are chosen automatically when
    left as None.
    """

    tol: float = 1e-8
    atol: float | None = None
    max_subdivisions: int = 20000
    inner_cutoff: float | None = None
    far_cutoff: float | None = None
    taylor_radius: float = 1.0 / 16

    def __post_init__(self):
        if not 0 < self.tol <= 1e-2:
            raise ValueError("quad tol must lie in (0, 1e-2]")
        if self.atol is not None and self.atol <= 0:
            raise ValueError("quad atol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be a positive integer")
        if self.inner_cutoff is not None and self.inner_cutoff <= 0:
            raise ValueError("inner_cutoff must be positive")
        if not 0 < self.taylor_radius < 1:
            raise ValueError("taylor_radius must lie in (0, 1)")

    @property
    def abs_tol(self):
        return self.atol if self.atol is not None else self.tol * 1e-2


@dataclass(frozen=True)
class OperatorResult:
    value: float
    error_estimate: float
    shell_remainder_bound: float

    def __post_init__(self):
        for name in ("value", "error_estimate", "shell_remainder_bound"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def total_error(self):
        return self.error_estimate + self.shell_remainder_bound

    def __add__(self, other):
        return OperatorResult(
            self.value + other.value,
            self.error_estimate + other.error_estimate,
            self.shell_remainder_bound + other.shell_remainder_bound,
        )


@dataclass
class _Problem:
    """A jump integral: branches, geometry and the constants of its error bounds."""

    d: int
    func: object
    state: np.ndarray
    branches: object  # z -> list of (density, displacement)
    features: list
    r_support: float  # outer radius of all densities (inf if untruncated)
    scale: float  # smallest geometric length of the problem
    singular: list  # (measure-like, weight, |D|^2/|z|^2 factor) of the singular branches
    bounded_shell: object = None  # eps -> bound of bounded branches inside the shell
    tail_weight: float = 0.0  # sum_i d_i <= tail_weight * q outside the support of bounded terms
    tail_spec: object = None


def _bracket(func, p0, f0, g0, dp, delta, rel=None):
    """Integrand bracket for displacements ``dp`` of shape (n, k*d).

    ``rel`` is the exact change of ``x - y`` for pair states, if known.
    """
    n = dp.shape[0]
    d = func.dimension
    comps = dp.reshape(n, -1, d)
    nrm = np.sqrt(np.sum(comps * comps, axis=2))
    out = np.empty(n)
    taylor = nrm.max(axis=1) < delta
    naive = ~taylor
    if np.any(naive):
        dn = dp[naive]
        lin = (comps[naive] * g0.reshape(1, -1, d)).sum(axis=2)
        lin = np.sum(lin * (nrm[naive] <= 1.0), axis=1)
        if rel is not None and isinstance(func, PairFunction):
            moved = func.value_shift(p0, dn, rel[naive])
        else:
            moved = func.value_shift(p0, dn)
        out[naive] = moved - f0 - lin
    if np.any(taylor):
        dt = dp[taylor]
        acc = np.zeros(len(dt))
        for s, w in zip(_GL_S, _GL_W):
            acc += w * func.quad_form(p0 + s * dt, dt)
        out[taylor] = acc
    return out


def _local_hessian_bound(func, p0, radius):
    pts = [p0]
    for i in range(p0.shape[1]):
        for sgn in (-1.0, 1.0):
            q = p0.copy()
            q[0, i] += sgn * radius
            pts.append(q)
    est = float(np.max(func.hess_norm(np.vstack(pts))))
    return 1.01 * est + 1e-300


def _eps_floor(problem):
    """Smallest inner cutoff at which every singular density stays far from overflow."""
    floor = EPS_FLOOR
    for meas, weight, _ in problem.singular:
        if isinstance(meas, PerturbationKernel):
            s, amp = meas.beta, meas.amplitude * (meas.a + abs(meas.b))
        else:
            s, amp = meas.alpha, meas.amplitude
        scale = max(1.0, weight * amp)
        floor = max(floor, (scale * 1e-250) ** (1.0 / (problem.d + s)))
    return floor


def _solve(problem, cfg):
    func = problem.func
    d = problem.d
    p0 = problem.state
    f0 = float(func.value(p0)[0])
    g0 = func.grad(p0)[0]
    atol = cfg.abs_tol
    top = 1e-3 * problem.scale
    hess = _local_hessian_bound(func, p0, top)

    def shell_bound(eps):
        total = 0.0
        for meas, weight, factor in problem.singular:
            total += 0.5 * hess * weight * factor * meas.small_ball_second_moment(eps)
        if problem.bounded_shell is not None:
            total += problem.bounded_shell(eps)
        return total

    eps = cfg.inner_cutoff
    if eps is None:
        floor = _eps_floor(problem)
        eps = top
        while eps > floor and shell_bound(eps) > atol / 10:
            eps *= 1e-2
        eps = max(eps, floor)
    if eps >= problem.r_support:
        raise ValueError("inner cutoff must be smaller than the support radius")
    shell = shell_bound(eps)

    far_bound = 0.0
    r_max = problem.r_support
    if not math.isfinite(r_max):
        sup = func.sup_norm()
        if not math.isfinite(sup):
            raise ValueError("untruncated measures need a bounded test function")
        spec = problem.tail_spec
        zf = cfg.far_cutoff
        if zf is None:
            zf = max(4.0, 4 * problem.scale)
            while 2 * sup * problem.tail_weight * spec.mass_outside(zf) > atol / 10 and zf < 1e200:
                zf *= 4.0
        r_max = zf
        far_bound = 2 * sup * problem.tail_weight * spec.mass_outside(zf)

    delta = min(cfg.taylor_radius, func.smooth_radius(p0))

    def g(z):
        total = np.zeros(len(z))
        for dens, disp, *rel in problem.branches(z):
            live = dens != 0
            if not np.any(live):
                continue
            rl = rel[0][live] if rel else None
            total[live] += dens[live] * _bracket(func, p0, f0, g0, disp[live], delta, rl)
        return total

    val, err = integrate_space(
        g, d, problem.features, eps, r_max, cfg.tol, 0.8 * atol, cfg.max_subdivisions,
        dense_from=problem.scale, length_scale=getattr(func, "length_scale", None),
    )
    return OperatorResult(val, err + far_bound, shell)


def _check_dim(spec, *objs):
    for o in objs:
        if o is not None and getattr(o, "dimension", spec.dimension) != spec.dimension:
            raise ValueError("dimension mismatch between measure, coefficient and function")
    if spec.dimension not in (1, 2):
        raise ValueError("operator quadrature supports d in {1, 2}; use the simulator for d >= 3")


def _point(x, d):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != d:
        raise ValueError(f"expected a point of dimension {d}")
    return x


def _geometry_scale(spec, field, extra=()):
    vals = [1.0, spec.radius] + [t for t in extra if t > 0]
    if field is not None and field.family == "user-table":
        vals += [r for r in field._table[1] if r > 0]
    return min(vals)


def _base_features(spec, field, pert=None, center=None):
    d = spec.dimension
    c = np.zeros(d) if center is None else center
    feats = list(spec.features(c)) + [Sphere(tuple(c), 1.0)]
    if field is not None:
        feats += field.z_features(c)
    if pert is not None:
        feats += pert.features()
    return feats


def _single_problem(spec, field, pert, func, x, use_main=True):
    d = spec.dimension
    x = _point(x, d)
    xa = x[None, :]
    state = xa.copy()

    def branches(z):
        dens = np.zeros(len(z))
        if use_main:
            dens = dens + field._value(xa, z) * spec._q(z)
        if pert is not None and not pert.is_null:
            dens = dens + pert._value(xa, z)
        return [(dens, z)]

    singular = []
    if use_main:
        singular.append((spec, field.c_upper, 1.0))
    if pert is not None and not pert.is_null:
        singular.append((pert, 1.0, 1.0))
    r_support = spec.radius if use_main else pert.radius
    if pert is not None and not pert.is_null and use_main:
        r_support = max(r_support, pert.radius)
    scale = _geometry_scale(spec, field if use_main else None,
                            [pert.radius] if pert is not None and not pert.is_null else [])
    feats = _base_features(spec, field, pert) if use_main else [Point((0.0,) * d), Sphere((0.0,) * d, 1.0)] + pert.features()
    return _Problem(d, func, state, branches, feats, r_support, scale, singular,
                    tail_weight=field.c_upper if use_main else 0.0, tail_spec=spec)


def apply_L(spec, field, f, x, cfg=None):
    """``∫ (f(x+z) - f(x) - <grad f(x), z> 1{|z|<=1}) c(x,z) q(z) dz``."""
    cfg = cfg or QuadratureConfig()
    _check_dim(spec, field, f)
    return _solve(_single_problem(spec, field, None, f, x), cfg)


def apply_L_mu(pert, f, x, spec, cfg=None):
    """The same integral against the perturbation density ``m(x, z)`` alone."""
    cfg = cfg or QuadratureConfig()
    _check_dim(spec, pert, f)
    if pert.is_null:
        return OperatorResult(0.0, 0.0, 0.0)
    return _solve(_single_problem(spec, None, pert, f, x, use_main=False), cfg)


def apply_L_star(spec, field, pert, f, x, cfg=None):
    """Operator with kernel ``c(x,z) q(z) dz + m(x,z) dz``."""
    cfg = cfg or QuadratureConfig()
    _check_dim(spec, field, pert, f)
    if pert is None or pert.is_null:
        return apply_L(spec, field, f, x, cfg)
    return _solve(_single_problem(spec, field, pert, f, x), cfg)


# -- coupling operators --------------------------------------------------------------


def _pair_state(x, y, d):
    x = _point(x, d)
    y = _point(y, d)
    if np.array_equal(x, y):
        raise ValueError("the coupling operator needs x != y")
    return x, y


def _coupling_features(spec, field, x, y, v):
    d = spec.dimension
    feats = []
    for c in (np.zeros(d), -v, v):
        feats += spec.features(c)
        feats.append(Sphere(tuple(c), 1.0))
        feats += field.z_features(c)
    w = x - y
    feats += [Point(tuple(w)), Point(tuple(-w))]
    nv = float(np.linalg.norm(v))
    e = v / nv
    feats += [Plane(tuple(e), -0.5 * nv), Plane(tuple(e), 0.5 * nv)]
    return feats


def _coupling_problem(spec, field, h, x, y, kappa, which):
    d = spec.dimension
    x, y = _pair_state(x, y, d)
    v = clip_displacement(x - y, kappa)
    xa, ya = x[None, :], y[None, :]
    state = np.concatenate([x, y])[None, :]
    use = tuple(which)

    def branches(z):
        dens = _branch_densities(spec, field, xa, ya, z, kappa)
        dens[2] = np.maximum(dens[2], 0.0)
        zero = np.zeros_like(z)
        # (displacement of the pair, exact change of x - y)
        maps = {
            0: (np.hstack([z, z + v]), np.broadcast_to(-v, z.shape)),
            1: (np.hstack([z, z - v]), np.broadcast_to(v, z.shape)),
            2: (np.hstack([z, z]), zero),
            3: (np.hstack([z, zero]), z),
            4: (np.hstack([zero, z]), -z),
        }
        return [(dens[i], *maps[i]) for i in use]

    nv = float(np.linalg.norm(v))
    r = float(np.linalg.norm(x - y))
    singular = []
    if any(i in use for i in (2, 3, 4)):
        singular.append((spec, field.c_upper, 2.0))
    bounded = None
    if any(i in use for i in (0, 1)):
        sup = h.sup_norm()
        gnorm = float(np.linalg.norm(h.grad(state)[0]))

        def bounded(eps):
            if eps >= 0.5 * nv:
                return math.inf
            dens = 0.5 * field.c_upper * spec.amplitude * (nv - eps) ** (-(d + spec.alpha))
            brk = 2 * sup + gnorm * (2 * eps + nv)
            vol = spec.direction_measure * eps**d / d
            return 2 * dens * brk * vol

    scale = _geometry_scale(spec, field, [nv, r, h.smooth_radius(state)])
    feats = _coupling_features(spec, field, x, y, v)
    return _Problem(d, h, state, branches, feats, spec.radius, scale, singular, bounded,
                    tail_weight=field.c_upper, tail_spec=spec)


def apply_coupling(spec, field, h, x, y, kappa=1.0, cfg=None, branches=(0, 1, 2, 3, 4)):
    """The coupling operator acting on a pair function ``h`` at ``(x, y)``."""
    cfg = cfg or QuadratureConfig()
    if not isinstance(h, (PairFunction, SmoothFunction)):
        h = PairFunction.of_distance(spec.dimension, h)
    _check_dim(spec, field, h)
    if not 0 < kappa <= 1:
        raise ValueError("kappa must lie in (0, 1]")
    return _solve(_coupling_problem(spec, field, h, x, y, kappa, branches), cfg)


def apply_LC(spec, field, f, x, y, kappa=1.0, cfg=None):
    """Synchronous and reflected branches (1-3) acting on ``f(|x - y|)``."""
    h = f if isinstance(f, PairFunction) else PairFunction.of_distance(spec.dimension, f)
    return apply_coupling(spec, field, h, x, y, kappa, cfg, branches=(0, 1, 2))


def apply_LR(spec, field, f, x, y, kappa=1.0, cfg=None):
    """Marginal-remainder branches (4, 5) acting on ``f(|x - y|)``."""
    h = f if isinstance(f, PairFunction) else PairFunction.of_distance(spec.dimension, f)
    return apply_coupling(spec, field, h, x, y, kappa, cfg, branches=(3, 4))


def lc_closed_form(spec, field, profile, x, y, kappa=1.0, cfg=None):
    """``½ mass_mu(x, y, (x-y)_κ) [f(r + κ∧r) + f(r - κ∧r) - 2 f(r)]``."""
    d = spec.dimension
    x, y = _pair_state(x, y, d)
    r = float(np.linalg.norm(x - y))
    s = min(kappa, r)
    v = clip_displacement(x - y, kappa)
    m = mass_mu(spec, field, x, y, v, cfg)
    jump = float(profile.phi(np.array([r + s]))[0] + profile.phi(np.array([r - s]))[0]
                 - 2 * profile.phi(np.array([r]))[0])
    return OperatorResult(0.5 * m.value * jump, 0.5 * m.error_estimate * abs(jump), 0.0)


def apply_coupling_mu(pert, h, x, y, spec=None, cfg=None):
    """Coupling of the perturbation part: synchronous ``m(x,z) ∧ m(y,z)`` plus remainders."""
    cfg = cfg or QuadratureConfig()
    d = pert.dimension
    x, y = _pair_state(x, y, d)
    if pert.is_null:
        return OperatorResult(0.0, 0.0, 0.0)
    xa, ya = x[None, :], y[None, :]
    state = np.concatenate([x, y])[None, :]

    def branches(z):
        mx = pert._value(xa, z)
        my = pert._value(ya, z)
        mn = np.minimum(mx, my)
        zero = np.zeros_like(z)
        return [(mn, np.hstack([z, z])), (mx - mn, np.hstack([z, zero])), (my - mn, np.hstack([zero, z]))]

    r = float(np.linalg.norm(x - y))
    scale = min(1.0, pert.radius, r, h.smooth_radius(state))
    w = x - y
    feats = [Point((0.0,) * d), Sphere((0.0,) * d, 1.0), Point(tuple(w)), Point(tuple(-w))] + pert.features()
    prob = _Problem(d, h, state, branches, feats, pert.radius, scale, [(pert, 1.0, 2.0)])
    return _solve(prob, cfg)


# -- kernel masses -------------------------------------------------------------------


def _mass(spec, weight, u, cfg, features_extra=()):
    """``∫ weight(z) min(q(z), q(z-u)) dz`` with an analytic far-field correction."""
    cfg = cfg or QuadratureConfig()
    d = spec.dimension
    nu = float(np.linalg.norm(u))
    atol = cfg.abs_tol
    amp, alpha = spec.amplitude, spec.alpha
    wmax = weight.upper
    near = 0.5 * nu
    # the integrand is bounded by wmax q(u/2) near the origin and near u
    peak = wmax * amp * near ** (-(d + alpha))
    r_min = min(1e-3 * min(nu, spec.radius), (atol / (10 * peak * spec.direction_measure / d)) ** (1.0 / d))
    inner_bound = 2 * peak * spec.direction_measure * r_min**d / d
    feats = []
    for c in (np.zeros(d), u):
        feats += spec.features(c)
    e = u / nu
    feats += [Plane(tuple(e), 0.5 * nu)] + list(features_extra)

    def g(z):
        return weight(z) * np.minimum(spec._q(z), spec._q(z - u))

    r_max = spec.radius + nu
    tail, tail_err = 0.0, 0.0
    if not math.isfinite(spec.radius):
        z = max(8.0 * nu, 8.0, weight.far_radius)
        while True:
            hi = spec.mass_outside(z)
            lo = (z / (z + nu)) ** (d - 1) * spec.mass_outside(z + nu)
            if 0.5 * wmax * (hi - lo) <= atol / 10 or z > 1e250:
                break
            z *= 2.0
        wf = float(weight(z * e[None, :])[0])
        tail, tail_err = wf * 0.5 * (hi + lo), wf * 0.5 * (hi - lo)
        r_max = z
    val, err = integrate_space(
        g, d, feats, r_min, r_max, cfg.tol, 0.8 * atol, cfg.max_subdivisions,
        dense_from=min(nu, spec.radius, 1.0),
    )
    return OperatorResult(val + tail, err + tail_err + inner_bound, 0.0)


class _UnitWeight:
    upper = 1.0
    far_radius = 0.0

    def __call__(self, z):
        return np.ones(len(z))


class _Coeff4Weight:
    def __init__(self, field, x, y, u):
        self.field = field
        self.x = x[None, :]
        self.y = y[None, :]
        self.u = u[None, :]
        self.upper = field.c_upper
        self.far_radius = 0.0
        if field.family == "user-table":
            self.far_radius = float(field._table[1][-1]) + float(np.linalg.norm(u)) + 1.0

    def __call__(self, z):
        return _coeff4(self.field, self.x, self.y, self.u, z)


def mass_nu_u(spec, u, cfg=None):
    """Total mass of ``min(q(z), q(z-u))``."""
    _check_dim(spec)
    u = _point(u, spec.dimension)
    if not np.any(u != 0):
        raise ValueError("mass_nu_u needs u != 0")
    if np.linalg.norm(u) >= 2 * spec.radius:
        return OperatorResult(0.0, 0.0, 0.0)
    return _mass(spec, _UnitWeight(), u, cfg)


def mass_mu(spec, field, x, y, u, cfg=None):
    """Total mass of ``coeff4(x, y, u, z) min(q(z), q(z-u))``."""
    _check_dim(spec, field)
    d = spec.dimension
    x, y, u = _point(x, d), _point(y, d), _point(u, d)
    if not np.any(u != 0):
        raise ValueError("mass_mu needs u != 0")
    if np.linalg.norm(u) >= 2 * spec.radius:
        return OperatorResult(0.0, 0.0, 0.0)
    extra = field.z_features() + field.z_features(u)
    return _mass(spec, _Coeff4Weight(field, x, y, u), u, cfg, extra)
