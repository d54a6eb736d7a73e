"""Coupling-rate functionals: J_nu, J, the drift condition and the Prop-3.2 style margin."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..functions import PairFunction, RadialProfile
from ..kernels import _pair_panel, coefficient_gap_moment, modulus_w, modulus_w_star
from ..modulus import ModulusFunction, psi_eval
from .operators import QuadratureConfig, apply_coupling, mass_mu, mass_nu_u


def _directions(spec, grid_size):
    d = spec.dimension
    if spec.rotation_invariant:
        e = np.zeros(d)
        e[0] = 1.0
        return [e]
    if d == 1:
        return [np.array([1.0]), np.array([-1.0])]
    # nu_u and nu_-u have equal mass, so half a circle suffices
    ang = np.linspace(0.0, math.pi, max(grid_size, 1), endpoint=False)
    return [np.array([math.cos(t), math.sin(t)]) for t in ang]


def j_nu(spec, r, direction_grid_size=32, cfg=None):
    """``min_e mass(nu_{r e})`` over a deterministic direction grid (one direction if isotropic)."""
    if r <= 0:
        raise ValueError("r must be positive")
    return min(mass_nu_u(spec, r * e, cfg).value for e in _directions(spec, direction_grid_size))


def j_of_r(spec, field, r, kappa=1.0, pair_samples=16, cfg=None, direction_grid_size=32,
           extra_pairs=()):
    """Approximate ``inf_{|x-y|=r} mu_{x,y,x-y}(R^d)``.

    For z-independent separable coefficients ``coeff4 = c(x) ∧ c(y)`` and the
    infimum factorises exactly into the coefficient minimum times J_nu.
    Otherwise it is the minimum over a deterministic pair panel plus
    ``extra_pairs``, which is an upper bound of the true infimum.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if field.separable:
        return field.family_min * j_nu(spec, r, direction_grid_size, cfg)
    best = math.inf
    pairs = list(_pair_panel(spec.dimension, r, pair_samples, (-4.0, 4.0)))
    pairs += [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in extra_pairs]
    for x, y in pairs:
        best = min(best, mass_mu(spec, field, x, y, x - y, cfg).value)
    return best


def default_c2(spec, field, psi):
    """``2 nu(|z| > 1) c^* ||psi||_inf`` (psi taken through its bounded extension)."""
    sup = psi.sup_extended if isinstance(psi, ModulusFunction) else psi.sup
    return 2.0 * spec.mass_outside(1.0) * field.c_upper * sup


def drift_margin(spec, field, psi, r, c1=1.0, c2=None, kappa=1.0, variant="p2", pert=None,
                 cfg=None, direction_grid_size=32):
    """``J_nu(r) r^2 psi''(2r) + c1 w(r) psi'(r)/r + c2`` (variant p1: ``c1 w(r) psi'(r)``)."""
    if variant not in ("p1", "p2"):
        raise ValueError("variant must be 'p1' or 'p2'")
    if not 0 < r <= kappa <= 1:
        raise ValueError("need 0 < r <= kappa <= 1")
    d2 = psi_eval(psi, 2 * r, 2)
    d1 = psi_eval(psi, r, 1)
    if c2 is None:
        c2 = default_c2(spec, field, psi)
    jn = j_nu(spec, r, direction_grid_size, cfg)
    if variant == "p2":
        w = _w(spec, field, pert, r, 2)
        return jn * r * r * d2 + c1 * w * d1 / r + c2
    w = _w(spec, field, pert, r, 1)
    return jn * r * r * d2 + c1 * w * d1 + c2


def _w(spec, field, pert, r, p):
    if pert is None:
        return modulus_w(spec, field, r, p)
    return modulus_w_star(spec, field, pert, r, p)


def log_grid(eps, grid_size=50, decades=6.0):
    return np.logspace(math.log10(eps) - decades, math.log10(eps), grid_size)


def lambda_psi(spec, psi, eps, grid_size=50, decades=6.0, cfg=None, direction_grid_size=32):
    """``-max_r J_nu(r) r^2 psi''(2r)`` over a log grid of ``(0, eps]`` that ends at eps."""
    vals = [j_nu(spec, r, direction_grid_size, cfg) * r * r * psi_eval(psi, 2 * r, 2)
            for r in log_grid(eps, grid_size, decades)]
    return -max(vals)


@dataclass
class Prop32Report:
    margin: float
    bound: float
    coupling_value: float
    coupling_error: float
    j_value: float
    lc_term: float
    lr_term: float
    tail_term: float


def _profile(f):
    if isinstance(f, ModulusFunction):
        return f.extended()
    if isinstance(f, RadialProfile):
        return f
    raise TypeError("f must be a ModulusFunction or a RadialProfile")


def _check_profile(profile):
    if abs(float(profile.phi(np.array([0.0]))[0])) > 0:
        raise ValueError("f must vanish at 0")
    r = np.logspace(-8, math.log10(2.0), 400)
    if np.any(profile.d1(r) < 0) or np.any(profile.d2(r) > 0):
        raise ValueError("f must satisfy f' >= 0 and f'' <= 0 on (0, 2]")


def prop32_report(spec, field, f, x, y, kappa=1.0, eps0=None, variant="p2", cfg=None):
    """Upper bound on the coupling operator applied to ``f(|x-y|)`` and its slack."""
    if variant not in ("p1", "p2"):
        raise ValueError("variant must be 'p1' or 'p2'")
    x = np.asarray(x, dtype=float).reshape(spec.dimension)
    y = np.asarray(y, dtype=float).reshape(spec.dimension)
    r = float(np.linalg.norm(x - y))
    eps0 = kappa if eps0 is None else eps0
    if not (0 < r <= eps0 <= kappa <= 1):
        raise ValueError(f"need 0 < |x-y| <= eps0 <= kappa <= 1 (|x-y| = {r:.6g}, eps0 = {eps0}, kappa = {kappa})")
    if variant == "p1" and not math.isfinite(spec.radial_moment(1.0, 0.0, 1.0)):
        raise ValueError("variant p1 needs a finite first moment of nu on the unit ball (alpha < 1)")
    profile = _profile(f)
    _check_profile(profile)
    cfg = cfg or QuadratureConfig()
    phi = lambda t: float(profile.phi(np.array([t]))[0])
    j = j_of_r(spec, field, r, kappa, cfg=cfg, extra_pairs=[(x, y)])
    lc = 0.5 * j * (phi(2 * r) - 2 * phi(r))
    fp = float(profile.d1(np.array([r]))[0])
    if variant == "p2":
        lr = coefficient_gap_moment(spec, field, x, y, 2) * fp / r
    else:
        lr = 4.0 * coefficient_gap_moment(spec, field, x, y, 1) * fp
    tail = 2.0 * spec.mass_outside(1.0) * field.c_upper * profile.sup
    bound = lc + lr + tail
    res = apply_coupling(spec, field, PairFunction.of_distance(spec.dimension, profile), x, y, kappa, cfg)
    return Prop32Report(bound - res.value, bound, res.value, res.total_error, j, lc, lr, tail)


def prop32_margin(spec, field, f, x, y, kappa=1.0, eps0=None, variant="p2", cfg=None):
    """Bound minus quadrature value of the coupling operator on ``f(|x-y|)``."""
    return prop32_report(spec, field, f, x, y, kappa, eps0, variant, cfg).margin


def drift_margins(spec, field, psi, eps, grid_size=50, decades=6.0, **kw):
    """Drift margins on the log grid of ``(0, eps]``; returns ``(grid, margins)``."""
    grid = log_grid(eps, grid_size, decades)
    return grid, np.array([drift_margin(spec, field, psi, r, **kw) for r in grid])


def admissible_epsilon(spec, field, psi, grid_size=50, decades=6.0, kappa=1.0, smallest=1e-12,
                       **kw):
    """Largest ``eps = eps_max / 2^k`` whose whole grid has negative drift margin.

    ``eps_max`` is ``min(kappa, valid_radius / 2)`` so that ``psi''(2r)`` is
    defined on the grid.  Returns None if no such eps above ``smallest`` exists.
    """
    eps = min(kappa, psi.valid_radius / 2)
    while eps >= smallest:
        _, m = drift_margins(spec, field, psi, eps, grid_size, decades, kappa=kappa, **kw)
        if np.all(m < 0):
            return eps
        eps /= 2
    return None
