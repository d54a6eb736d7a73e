"""Lévy measures, jump coefficients and the kernels of the refined basic coupling.

Points are numpy arrays with the coordinate axis last: a single point has
shape ``(d,)`` and a batch has shape ``(n, d)``.  The vectorised helpers that
start with an underscore never validate and are what the quadrature and the
simulator call in their inner loops; the public functions check poles and
preconditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, optimize
from scipy.special import gamma

from .geometry import Plane, Point, Sphere

LEVY_FAMILIES = ("homogeneous-stable", "truncated-stable", "cone-stable")
COEFF_FAMILIES = ("constant", "separable-sinusoidal", "separable-holder", "user-table")
PERT_FAMILIES = ("none", "stable-like")

NEGATIVITY_SLACK = 1e-12


class PoleError(ValueError):
    """A density was evaluated at one of its poles."""


class KernelError(RuntimeError):
    """A kernel identity that holds by construction was violated numerically."""


class FirstMomentError(ValueError):
    """A first-moment modulus was requested for a kernel without that moment."""


def _points(z, d):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {z.shape}")
    return z, single


def _norm(z):
    if z.shape[-1] == 1:
        return np.abs(z[..., 0])
    return np.sqrt(np.einsum("...i,...i->...", z, z))


def sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2 * math.pi ** (d / 2) / gamma(d / 2)


def clip_displacement(v, kappa):
    """Return ``(1 ∧ kappa/|v|) v``; the zero vector maps to itself."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    v = np.asarray(v, dtype=float)
    r = _norm(np.atleast_1d(v)[None, :] if v.ndim <= 1 else v)
    scale = np.where(r > kappa, kappa / np.where(r > 0, r, 1.0), 1.0)
    if v.ndim <= 1:
        return v * float(scale[0])
    return v * scale[:, None]


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Stable-like Lévy measure with density ``amplitude * |z|^(-d-alpha)`` on its support.

    ``homogeneous-stable`` lives on all of R^d, ``truncated-stable`` on the
    ball of radius ``truncation_radius`` and ``cone-stable`` on
    ``{|z| <= 1, <z, xi> >= delta |z|}``.
    """

    dimension: int
    family: str
    alpha: float
    amplitude: float = 1.0
    truncation_radius: float = math.inf
    cone_direction: tuple | None = None
    cone_aperture: float | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if self.family not in LEVY_FAMILIES:
            raise ValueError(f"unknown Lévy family {self.family!r}")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.family == "homogeneous-stable" and math.isfinite(self.truncation_radius):
            raise ValueError("homogeneous-stable measures are not truncated")
        if self.family == "truncated-stable" and not (0 < self.truncation_radius < math.inf):
            raise ValueError("truncated-stable needs a finite positive truncation radius")
        if self.family == "cone-stable":
            if self.cone_direction is None or self.cone_aperture is None:
                raise ValueError("cone-stable needs cone_direction and cone_aperture")
            xi = np.asarray(self.cone_direction, dtype=float).reshape(-1)
            if xi.size != self.dimension:
                raise ValueError("cone direction has the wrong dimension")
            if not np.isclose(np.linalg.norm(xi), 1.0, atol=1e-12):
                raise ValueError("cone direction must be a unit vector")
            if not 0 < self.cone_aperture < 1:
                raise ValueError("cone aperture delta must lie in (0, 1)")
            object.__setattr__(self, "cone_direction", tuple(float(t) for t in xi))
            object.__setattr__(self, "truncation_radius", 1.0)

    # -- geometry of the support ------------------------------------------------

    @property
    def is_cone(self):
        return self.family == "cone-stable"

    @property
    def radius(self):
        return self.truncation_radius

    @property
    def xi(self):
        return np.asarray(self.cone_direction, dtype=float)

    @property
    def half_angle(self):
        return math.acos(self.cone_aperture)

    @property
    def rotation_invariant(self):
        return not self.is_cone

    @property
    def symmetric(self):
        return not self.is_cone

    @property
    def direction_measure(self):
        """Surface measure of the set of jump directions."""
        d = self.dimension
        if not self.is_cone:
            return sphere_area(d)
        if d == 1:
            return 1.0
        a = self.half_angle
        if d == 2:
            return 2 * a
        val, _ = integrate.quad(lambda p: math.sin(p) ** (d - 2), 0.0, a)
        return sphere_area(d - 1) * val

    @property
    def direction_mean(self):
        """``∫ theta sigma(d theta)`` over the jump directions."""
        d = self.dimension
        if not self.is_cone:
            return np.zeros(d)
        if d == 1:
            return self.xi.copy()
        a = self.half_angle
        return self.xi * sphere_area(d - 1) * math.sin(a) ** (d - 1) / (d - 1)

    def in_support(self, z):
        z = np.asarray(z, dtype=float)
        r = _norm(z)
        ok = r <= self.truncation_radius
        if self.is_cone:
            ok &= (z @ self.xi) >= self.cone_aperture * r
        return ok & (r > 0)

    # -- density ----------------------------------------------------------------

    def _log_q(self, z):
        r = _norm(z)
        with np.errstate(divide="ignore"):
            lq = math.log(self.amplitude) - (self.dimension + self.alpha) * np.log(r)
        return np.where(self.in_support(z) | (r == 0), lq, -np.inf)

    def _q(self, z):
        return np.exp(self._log_q(z))

    def density(self, z):
        """Evaluate q(z); raises :class:`PoleError` at z = 0."""
        pts, single = _points(z, self.dimension)
        if np.any(_norm(pts) == 0):
            raise PoleError("the Lévy density has a pole at z = 0")
        q = self._q(pts)
        return float(q[0]) if single else q

    def upper_radius(self, center_norm=0.0):
        return self.truncation_radius + center_norm

    def features(self, center=None):
        """Kinks of ``z -> q(z - center)``."""
        d = self.dimension
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        out = [Point(tuple(c))]
        if math.isfinite(self.truncation_radius):
            out.append(Sphere(tuple(c), self.truncation_radius))
        if self.is_cone and d == 2:
            a = self.half_angle
            base = math.atan2(self.xi[1], self.xi[0])
            for s in (-1, 1):
                t = base + s * a
                normal = np.array([-math.sin(t), math.cos(t)])
                out.append(Plane(tuple(normal), float(normal @ c)))
        return out

    # -- closed-form radial integrals -------------------------------------------

    def radial_moment(self, p, lo=0.0, hi=math.inf):
        """``∫_{lo < |z| <= hi} |z|^p q(z) dz`` (infinite when it diverges)."""
        hi = min(hi, self.truncation_radius)
        if hi <= lo:
            return 0.0
        e = p - self.alpha
        k = self.amplitude * self.direction_measure
        if e == 0:
            if lo == 0 or math.isinf(hi):
                return math.inf
            return k * math.log(hi / lo)
        if (lo == 0 and e < 0) or (math.isinf(hi) and e > 0):
            return math.inf
        top = 0.0 if math.isinf(hi) else hi**e
        bottom = 0.0 if lo == 0 else lo**e
        return k * (top - bottom) / e

    def mass_outside(self, rho):
        """``nu(|z| > rho)``."""
        return self.radial_moment(0.0, rho, math.inf)

    def small_ball_second_moment(self, eps):
        return self.radial_moment(2.0, 0.0, eps)

    # -- sampling of jumps above a cutoff ----------------------------------------

    def n_direction_uniforms(self):
        d = self.dimension
        if d <= 2:
            return 1
        extra = d + (d % 2)
        return extra + (1 if self.is_cone else 0)

    def sample_radius(self, u, eps):
        """Inverse transform for ``|z|`` under q restricted to ``eps <= |z| <= R``."""
        a = self.alpha
        lo = eps ** (-a)
        hi = 0.0 if math.isinf(self.truncation_radius) else self.truncation_radius ** (-a)
        return (lo - np.asarray(u) * (lo - hi)) ** (-1.0 / a)

    def sample_direction(self, u):
        """Map uniforms of shape ``(n, n_direction_uniforms())`` to jump directions."""
        u = np.asarray(u, dtype=float)
        n = u.shape[0]
        d = self.dimension
        if d == 1:
            if self.is_cone:
                return np.full((n, 1), self.xi[0])
            return np.where(u[:, :1] < 0.5, 1.0, -1.0)
        if d == 2:
            if self.is_cone:
                base = math.atan2(self.xi[1], self.xi[0])
                t = base + self.half_angle * (2 * u[:, 0] - 1)
            else:
                t = 2 * math.pi * u[:, 0]
            return np.column_stack([np.cos(t), np.sin(t)])
        k = d + (d % 2)
        g = _box_muller(u[:, :k])[:, :d]
        if not self.is_cone:
            return g / _norm(g)[:, None]
        phi = self._cap_angle_inverse(u[:, k])
        xi = self.xi
        perp = g - (g @ xi)[:, None] * xi
        perp /= _norm(perp)[:, None]
        return np.cos(phi)[:, None] * xi + np.sin(phi)[:, None] * perp

    def _cap_angle_inverse(self, u):
        grid = np.linspace(0.0, self.half_angle, 2049)
        dens = np.sin(grid) ** (self.dimension - 2)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return np.interp(u * cdf[-1], cdf, grid)

    def sample_jumps(self, u_radius, u_dir, eps):
        r = self.sample_radius(u_radius, eps)
        return r[:, None] * self.sample_direction(u_dir)


def _box_muller(u):
    u = np.asarray(u, dtype=float)
    a, b = u[:, 0::2], u[:, 1::2]
    rad = np.sqrt(-2.0 * np.log1p(-a))
    ang = 2 * math.pi * b
    out = np.empty_like(u)
    out[:, 0::2] = rad * np.cos(ang)
    out[:, 1::2] = rad * np.sin(ang)
    return out


def _holder_osc_1d(k, gam, r):
    """``max_a | |sin(a + k r)|^g - |sin a|^g |`` over one period."""
    s = k * r
    if s <= math.pi / 2:
        return math.sin(s) ** gam
    h = lambda a: -abs(abs(math.sin(a + s)) ** gam - abs(math.sin(a)) ** gam)
    grid = np.linspace(0.0, math.pi, 4097)
    vals = [h(a) for a in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    return -min(res.fun, vals[i])


@dataclass(frozen=True)
class CoefficientField:
    """Bounded continuous jump coefficient ``c(x, z)``.

    Families (``params`` in order):

    * ``constant``: ``(c0,)``
    * ``separable-sinusoidal``: ``(a, b[, k])`` with ``c = a + b sin(k x1)``
    * ``separable-holder``: ``(a, b, gamma[, k])`` with ``c = a + b |sin(k x1)|^gamma``
    * ``user-table``: ``(nx, nr, x nodes..., r nodes..., values...)``; bilinear in
      ``(x1, |z|)`` with values listed row by row over x, clamped outside the grid.
    """

    dimension: int
    family: str
    params: tuple = (1.0,)
    c_lower: float | None = None
    c_upper: float | None = None
    _table: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in COEFF_FAMILIES:
            raise ValueError(f"unknown coefficient family {self.family!r}")
        p = tuple(float(t) for t in self.params)
        object.__setattr__(self, "params", p)
        if self.family == "constant":
            if len(p) != 1:
                raise ValueError("constant coefficient takes one parameter")
            lo = hi = p[0]
        elif self.family == "separable-sinusoidal":
            if len(p) not in (2, 3):
                raise ValueError("separable-sinusoidal takes (a, b[, k])")
            lo, hi = p[0] - abs(p[1]), p[0] + abs(p[1])
        elif self.family == "separable-holder":
            if len(p) not in (3, 4):
                raise ValueError("separable-holder takes (a, b, gamma[, k])")
            if not 0 < p[2] <= 1:
                raise ValueError("holder exponent must lie in (0, 1]")
            lo, hi = p[0] + min(0.0, p[1]), p[0] + max(0.0, p[1])
        else:
            nx, nr = int(p[0]), int(p[1])
            if nx < 2 or nr < 2 or len(p) != 2 + nx + nr + nx * nr:
                raise ValueError("user-table params must be (nx, nr, x..., r..., values...)")
            xs = np.array(p[2 : 2 + nx])
            rs = np.array(p[2 + nx : 2 + nx + nr])
            vals = np.array(p[2 + nx + nr :]).reshape(nx, nr)
            if np.any(np.diff(xs) <= 0) or np.any(np.diff(rs) <= 0):
                raise ValueError("user-table nodes must be strictly increasing")
            table = interpolate.RegularGridInterpolator((xs, rs), vals, method="linear")
            object.__setattr__(self, "_table", (xs, rs, table))
            lo, hi = float(vals.min()), float(vals.max())
        if self.c_lower is None:
            object.__setattr__(self, "c_lower", lo)
        if self.c_upper is None:
            object.__setattr__(self, "c_upper", hi)
        if not 0 < self.c_lower <= self.c_upper:
            raise ValueError("coefficient bounds must satisfy 0 < c_lower <= c_upper")
        if lo < self.c_lower - 1e-12 or hi > self.c_upper + 1e-12:
            raise ValueError("declared coefficient bounds do not contain the family's range")

    @property
    def z_independent(self):
        return self.family != "user-table"

    @property
    def separable(self):
        return self.family in ("constant", "separable-sinusoidal", "separable-holder")

    @property
    def family_min(self):
        """Exact infimum of c over all (x, z) for the separable families."""
        p = self.params
        if self.family == "constant":
            return p[0]
        if self.family == "separable-sinusoidal":
            return p[0] - abs(p[1])
        if self.family == "separable-holder":
            return p[0] + min(0.0, p[1])
        return float(np.min(self._table[2].values))

    @property
    def slope(self):
        """The factor b in ``c = a + b g(x)`` (0 for constants)."""
        return 0.0 if self.family == "constant" else self.params[1]

    def _g(self, x1):
        p = self.params
        if self.family == "separable-sinusoidal":
            k = p[2] if len(p) > 2 else 1.0
            return np.sin(k * x1)
        k = p[3] if len(p) > 3 else 1.0
        return np.abs(np.sin(k * x1)) ** p[2]

    def _value(self, x, z):
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            shape = np.broadcast_shapes(x.shape[:-1], np.shape(z)[:-1])
            return np.full(shape, self.params[0])
        if self.family == "user-table":
            xs, rs, table = self._table
            z = np.asarray(z, dtype=float)
            x1, r = np.broadcast_arrays(x[..., 0], _norm(z))
            pts = np.stack([np.clip(x1, xs[0], xs[-1]), np.clip(r, rs[0], rs[-1])], axis=-1)
            return table(pts.reshape(-1, 2)).reshape(x1.shape)
        val = self.params[0] + self.params[1] * self._g(x[..., 0])
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(z)[:-1])
        return np.broadcast_to(val, shape)

    def value(self, x, z):
        """Evaluate c(x, z) for points or batches of points."""
        xa = np.asarray(x, dtype=float)
        za = np.asarray(z, dtype=float)
        out = self._value(np.atleast_2d(xa), np.atleast_2d(za))
        if xa.ndim <= 1 and za.ndim <= 1:
            return float(out[0])
        return np.asarray(out, dtype=float)

    def z_features(self, center=None):
        """Radii (around ``center``) at which ``c(x, .)`` has kinks."""
        if self.family != "user-table":
            return []
        c = np.zeros(self.dimension) if center is None else np.asarray(center, dtype=float)
        return [Sphere(tuple(c), float(r)) for r in self._table[1] if r > 0]

    def oscillation(self, r):
        """Exact ``sup_{|x-y|=r} |g(x) - g(y)|`` for separable families (None otherwise)."""
        if self.family == "constant":
            return 0.0
        if self.family == "user-table":
            return None
        p = self.params
        d = self.dimension
        if self.family == "separable-sinusoidal":
            k = abs(p[2]) if len(p) > 2 else 1.0
            s = k * r
            if d == 1:
                return 2 * abs(math.sin(s / 2))
            return 2 * math.sin(min(s, math.pi) / 2)
        k = abs(p[3]) if len(p) > 3 else 1.0
        if d == 1:
            return _holder_osc_1d(k, p[2], r)
        return math.sin(min(k * r, math.pi / 2)) ** p[2]

    def spot_check(self, n=2000, seed=0, scale=10.0):
        """Sample c at random points; returns (min, max) and whether the bounds hold."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-scale, scale, size=(n, self.dimension))
        z = rng.uniform(-2, 2, size=(n, self.dimension))
        c = self._value(x, z)
        ok = bool(np.all(c >= self.c_lower - 1e-12) and np.all(c <= self.c_upper + 1e-12))
        return float(c.min()), float(c.max()), ok


@dataclass(frozen=True)
class PerturbationKernel:
    """Absolutely continuous perturbing kernel ``m(x, z)``.

    ``stable-like``: ``m(x, z) = (a + b cos(k x1)) * amplitude * |z|^(-d-beta)`` on
    ``|z| <= truncation_radius``.  ``none`` is the null kernel.
    """

    dimension: int
    family: str = "none"
    beta: float = 0.5
    amplitude: float = 1.0
    a: float = 1.0
    b: float = 0.0
    k: float = 1.0
    truncation_radius: float = 1.0

    def __post_init__(self):
        if self.family not in PERT_FAMILIES:
            raise ValueError(f"unknown perturbation family {self.family!r}")
        if self.family == "stable-like":
            if not 0 < self.beta < 2:
                raise ValueError("perturbation beta must lie in (0, 2)")
            if self.a - abs(self.b) < 0 or self.amplitude < 0:
                raise ValueError("perturbation density must be nonnegative")
            if not self.truncation_radius > 0:
                raise ValueError("perturbation truncation radius must be positive")

    @property
    def is_null(self):
        return self.family == "none" or self.amplitude == 0 or (self.a == 0 and self.b == 0)

    @property
    def has_first_moment(self):
        return self.is_null or self.beta < 1

    @property
    def x_independent(self):
        return self.is_null or self.b == 0

    @property
    def radius(self):
        return 0.0 if self.is_null else self.truncation_radius

    def _radial(self):
        return LevyMeasureSpec(
            self.dimension, "truncated-stable", self.beta, self.amplitude,
            self.truncation_radius if math.isfinite(self.truncation_radius) else 1.0,
        )

    def _value(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
        if self.is_null:
            return np.zeros(shape)
        r = _norm(z)
        weight = self.a + self.b * np.cos(self.k * x[..., 0])
        with np.errstate(divide="ignore"):
            base = self.amplitude * r ** (-(self.dimension + self.beta))
        return np.broadcast_to(weight * np.where(r <= self.truncation_radius, base, 0.0), shape)

    def value(self, x, z):
        xa = np.asarray(x, dtype=float)
        za = np.asarray(z, dtype=float)
        out = self._value(np.atleast_2d(xa), np.atleast_2d(za))
        if xa.ndim <= 1 and za.ndim <= 1:
            return float(out[0])
        return out

    def radial_moment(self, p, lo=0.0, hi=math.inf):
        """``∫_{lo<|z|<=hi} |z|^p amplitude |z|^(-d-beta) dz`` without the x-weight."""
        if self.is_null:
            return 0.0
        return self._radial().radial_moment(p, lo, hi)

    def weight_bounds(self):
        if self.is_null:
            return 0.0, 0.0
        return self.a - abs(self.b), self.a + abs(self.b)

    def integrability_certificate(self):
        """``sup_x ∫ (1 ∧ |z|^2) m(x, z) dz``."""
        if self.is_null:
            return 0.0
        w = self.weight_bounds()[1]
        return w * (self.radial_moment(2.0, 0.0, 1.0) + self.radial_moment(0.0, 1.0, math.inf))

    def first_moment_certificate(self):
        if self.is_null:
            return 0.0
        return self.weight_bounds()[1] * self.radial_moment(1.0, 0.0, 1.0)

    def features(self):
        if self.is_null:
            return []
        return [Sphere((0.0,) * self.dimension, self.truncation_radius)]

    def small_ball_second_moment(self, eps):
        if self.is_null:
            return 0.0
        return self.weight_bounds()[1] * self.radial_moment(2.0, 0.0, eps)

    def oscillation(self, r):
        if self.x_independent:
            return 0.0
        s = abs(self.k) * r
        if self.dimension == 1:
            return 2 * abs(math.sin(s / 2))
        return 2 * math.sin(min(s, math.pi) / 2)


# -- coupling kernels -----------------------------------------------------------


def _coeff4(field, x, y, u, z):
    cxz = field._value(x, z)
    cyz = field._value(y, z)
    if field.z_independent:
        return np.minimum(cxz, cyz)
    zu = z - u
    return np.minimum(np.minimum(cxz, cyz), np.minimum(field._value(x, zu), field._value(y, zu)))


def coeff4(field, x, y, u, z):
    """``c(x,z) ∧ c(y,z) ∧ c(x,z-u) ∧ c(y,z-u)``."""
    d = field.dimension
    pts = [_points(t, d) for t in (x, y, u, z)]
    out = _coeff4(field, *(p for p, _ in pts))
    if all(s for _, s in pts):
        return float(out[0])
    return out


def _nu_u(spec, u, z):
    return np.minimum(spec._q(z), spec._q(z - u))


def nu_u_density(spec, u, z):
    """Density ``min(q(z), q(z-u))`` of the displaced-minimum measure."""
    d = spec.dimension
    uu, _ = _points(u, d)
    zz, single = _points(z, d)
    if np.any(_norm(uu) == 0):
        raise PoleError("nu_u needs u != 0")
    if np.any(_norm(zz) == 0) or np.any(_norm(zz - uu) == 0):
        raise PoleError("nu_u density evaluated at a pole (z = 0 or z = u)")
    out = _nu_u(spec, uu, zz)
    return float(out[0]) if single else out


def _branch_densities(spec, field, x, y, z, kappa):
    """Five branch intensities at z for (batches of) pairs; returns shape (5, n)."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    v = x - y
    r = _norm(v)
    scale = np.where(r > kappa, kappa / np.where(r > 0, r, 1.0), 1.0)
    v = v * scale[..., None]
    qz = spec._q(z)
    cxz = field._value(x, z)
    cyz = field._value(y, z)
    cmin = np.minimum(cxz, cyz)
    if field.z_independent:
        k1 = k2 = cmin
    else:
        zp, zm = z + v, z - v
        k1 = np.minimum(cmin, np.minimum(field._value(x, zp), field._value(y, zp)))
        k2 = np.minimum(cmin, np.minimum(field._value(x, zm), field._value(y, zm)))
    d1 = 0.5 * k1 * np.minimum(qz, spec._q(z + v))
    d2 = 0.5 * k2 * np.minimum(qz, spec._q(z - v))
    same = r == 0
    if np.any(same):
        d1 = np.where(same, 0.0, d1)
        d2 = np.where(same, 0.0, d2)
    d3 = cmin * qz - d1 - d2
    d4 = (cxz - cmin) * qz
    d5 = (cyz - cmin) * qz
    return np.stack(np.broadcast_arrays(d1, d2, d3, d4, d5))


def branch_densities(spec, field, x, y, z, kappa=1.0):
    """Intensities ``(d1, ..., d5)`` of the coupled jump system at displacement z."""
    d = spec.dimension
    xx, _ = _points(x, d)
    yy, _ = _points(y, d)
    zz, single = _points(z, d)
    v = clip_displacement(xx - yy, kappa)
    same = _norm(xx - yy) == 0
    poles = _norm(zz) == 0
    poles |= ~same & ((_norm(zz - v) == 0) | (_norm(zz + v) == 0))
    if np.any(poles):
        raise PoleError("branch densities evaluated at a pole")
    out = _branch_densities(spec, field, xx, yy, zz, kappa)
    scale = field.c_upper * spec._q(zz)
    if np.any(out[2] < -NEGATIVITY_SLACK * np.maximum(scale, 1.0)):
        raise KernelError("synchronous branch density is negative")
    out[2] = np.maximum(out[2], 0.0)
    return out[:, 0] if single else out


@dataclass(frozen=True)
class KernelBundle:
    """Kernels of the coupling for one pair ``(x, y)``."""

    spec: LevyMeasureSpec
    field: CoefficientField
    x: tuple
    y: tuple
    kappa: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        object.__setattr__(self, "x", tuple(np.asarray(self.x, dtype=float).reshape(-1)))
        object.__setattr__(self, "y", tuple(np.asarray(self.y, dtype=float).reshape(-1)))

    @property
    def xa(self):
        return np.asarray(self.x)

    @property
    def ya(self):
        return np.asarray(self.y)

    @property
    def shift(self):
        """``(x - y)_kappa``."""
        return clip_displacement(self.xa - self.ya, self.kappa)

    def nu_u(self, u, z):
        return nu_u_density(self.spec, u, z)

    def mu(self, u, z):
        """Density of ``mu_{x,y,u}``: ``coeff4 * min(q(z), q(z-u))``."""
        d = self.spec.dimension
        uu, _ = _points(u, d)
        zz, single = _points(z, d)
        out = _coeff4(self.field, self.xa, self.ya, uu, zz) * self.nu_u(u, z)
        return float(np.asarray(out).reshape(-1)[0]) if single else out

    def nu_tilde(self, z):
        zz, single = _points(z, self.spec.dimension)
        out = np.minimum(self.field._value(self.xa, zz), self.field._value(self.ya, zz)) * self.spec._q(zz)
        return float(out[0]) if single else out

    def c_tilde(self, z, swap=False):
        """``c(x,z) - c(x,z) ∧ c(y,z)`` (or with x and y exchanged)."""
        zz, single = _points(z, self.spec.dimension)
        a, b = (self.ya, self.xa) if swap else (self.xa, self.ya)
        ca = self.field._value(a, zz)
        out = ca - np.minimum(ca, self.field._value(b, zz))
        return float(out[0]) if single else out

    def branches(self, z):
        return branch_densities(self.spec, self.field, self.xa, self.ya, z, self.kappa)


# -- continuity moduli --------------------------------------------------------------


def _check_p(p):
    if p not in (1, 2):
        raise ValueError("modulus exponent p must be 1 or 2")


def _pair_panel(d, r, n_pairs, x_range):
    """Deterministic pairs at distance r used for sampled suprema and infima."""
    xs = np.linspace(x_range[0], x_range[1], max(n_pairs, 1))
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        dirs = np.zeros((8, d))
        dirs[:, 0] = np.cos(ang)
        dirs[:, 1] = np.sin(ang)
    for x1 in xs:
        x = np.zeros(d)
        x[0] = x1
        for e in dirs:
            yield x, x + r * e


def _table_modulus_integral(spec, field, x, y, p):
    """``∫_{|z|<=1} |z|^p |c(x,z)-c(y,z)| q(z) dz`` for radially dependent c."""
    d = spec.dimension
    e = np.zeros(d)
    e[0] = 1.0

    def f(rho):
        z = (rho * e)[None, :]
        return abs(float(field._value(x[None, :], z)[0] - field._value(y[None, :], z)[0]))

    hi = min(1.0, spec.radius)
    rs = [t for t in field._table[1] if 0 < t < hi]
    pieces = [0.0] + rs + [hi]
    total = 0.0
    for lo, up in zip(pieces[:-1], pieces[1:]):
        if lo == 0:
            val, _ = integrate.quad(f, lo, up, weight="alg", wvar=(p - 1 - spec.alpha, 0.0), limit=200)
        else:
            val, _ = integrate.quad(lambda t: f(t) * t ** (p - 1 - spec.alpha), lo, up, limit=200)
        total += val
    return spec.amplitude * spec.direction_measure * total


def coefficient_gap_moment(spec, field, x, y, p):
    """``∫_{|z|<=1} |z|^p |c(x,z) - c(y,z)| q(z) dz`` at one pair."""
    d = spec.dimension
    x = np.asarray(x, dtype=float).reshape(d)
    y = np.asarray(y, dtype=float).reshape(d)
    if field.z_independent:
        gap = abs(float(field._value(x[None, :], x[None, :])[0] - field._value(y[None, :], x[None, :])[0]))
        return gap * spec.radial_moment(p, 0.0, 1.0) if gap else 0.0
    return _table_modulus_integral(spec, field, x, y, p)


def modulus_w(spec, field, r, p, pair_samples=64, x_range=(-4.0, 4.0)):
    """``sup_{|x-y|=r} ∫_{|z|<=1} |z|^p |c(x,z)-c(y,z)| q(z) dz``.

    Exact for the separable families.  For ``user-table`` it is the maximum
    over a deterministic pair panel, hence a lower bound of the supremum.
    """
    _check_p(p)
    if r <= 0:
        raise ValueError("r must be positive")
    if field.family == "constant":
        return 0.0
    if field.separable:
        osc = field.oscillation(r)
        if osc == 0:
            return 0.0
        return abs(field.slope) * osc * spec.radial_moment(p, 0.0, 1.0)
    best = 0.0
    for x, y in _pair_panel(spec.dimension, r, pair_samples, x_range):
        best = max(best, _table_modulus_integral(spec, field, x, y, p))
    return best


def modulus_w_mu(pert, r, p):
    """``sup_{|x-y|=r} ∫_{|z|<=1} |z|^p |m(x,z)-m(y,z)| dz``."""
    _check_p(p)
    if r <= 0:
        raise ValueError("r must be positive")
    if p == 1 and not pert.has_first_moment:
        raise FirstMomentError("p = 1 requires a perturbation with finite first moment")
    if pert.x_independent:
        return 0.0
    return abs(pert.b) * pert.oscillation(r) * pert.radial_moment(p, 0.0, 1.0)


def modulus_w_star(spec, field, pert, r, p, **kw):
    return modulus_w(spec, field, r, p, **kw) + modulus_w_mu(pert, r, p)


@dataclass
class BoundsReport:
    passed: bool
    worst_ratio: float
    worst_upper_ratio: float
    worst_lower_ratio: float
    worst_point: tuple


def _direction_panel(d):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    eye = np.eye(d)
    diag = np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T / math.sqrt(d)
    return np.vstack([eye, -eye, diag])


def stable_bounds_check(spec, alpha1, alpha2, c1, c2, cone=None, radii=None):
    """Check ``c1|z|^(-d-alpha1) 1_V(z) <= q(z) <= c2|z|^(-d-alpha2)`` on a sample.

    ``cone`` is ``(xi, delta)``; ``None`` means V is the whole unit ball.
    """
    if not 0 < alpha1 <= alpha2 < 2:
        raise ValueError("need 0 < alpha1 <= alpha2 < 2")
    d = spec.dimension
    radii = np.logspace(-6, 3, 361) if radii is None else np.asarray(radii, dtype=float)
    dirs = _direction_panel(d)
    z = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    r = _norm(z)
    q = spec._q(z)
    inside = r <= 1.0
    if cone is not None:
        xi, delta = cone
        xi = np.asarray(xi, dtype=float).reshape(-1)
        inside &= z @ xi >= delta * r - 1e-15 * r
    lower = np.where(inside, c1 * r ** (-(d + alpha1)), 0.0)
    upper = c2 * r ** (-(d + alpha2))
    up_ratio = q / upper
    with np.errstate(divide="ignore", invalid="ignore"):
        lo_ratio = np.where(lower > 0, lower / q, 0.0)
    lo_ratio = np.nan_to_num(lo_ratio, nan=np.inf, posinf=np.inf)
    worst_up = float(up_ratio.max())
    worst_lo = float(lo_ratio.max())
    i = int(np.argmax(np.maximum(up_ratio, lo_ratio)))
    tol = 1 + 1e-12
    return BoundsReport(
        passed=bool(worst_up <= tol and worst_lo <= tol),
        worst_ratio=max(worst_up, worst_lo),
        worst_upper_ratio=worst_up,
        worst_lower_ratio=worst_lo,
        worst_point=tuple(z[i]),
    )
