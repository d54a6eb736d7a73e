import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levy_coupling_lab.kernels import (
    CoefficientField, FirstMomentError, KernelBundle, KernelError, LevyMeasureSpec, PerturbationKernel,
    PoleError, branch_densities, clip_displacement, coeff4, modulus_w, modulus_w_mu, modulus_w_star,
    nu_u_density, stable_bounds_check,
)

SIN = CoefficientField(1, "separable-sinusoidal", (2.0, 1.0))
ONE = CoefficientField(1, "constant", (1.0,))
TRUNC = LevyMeasureSpec(1, "truncated-stable", 1.5, 1.0, 2.0)
HOM05 = LevyMeasureSpec(1, "homogeneous-stable", 0.5, 1.0)
TABLE = CoefficientField(
    1, "user-table",
    (3, 3, -1.0, 0.0, 1.0, 0.1, 0.5, 1.0, 1.0, 1.5, 2.0, 1.2, 1.4, 1.1, 2.0, 1.0, 1.3),
)

finite = st.floats(-3, 3, allow_nan=False)


# -- measures -----------------------------------------------------------------------


def test_measure_validation():
    with pytest.raises(ValueError):
        LevyMeasureSpec(1, "truncated-stable", 2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LevyMeasureSpec(1, "homogeneous-stable", 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        LevyMeasureSpec(2, "cone-stable", 1.0, cone_direction=(1.0, 1.0), cone_aperture=0.5)
    cone = LevyMeasureSpec(2, "cone-stable", 1.0, cone_direction=(0.0, 1.0), cone_aperture=0.5)
    assert cone.truncation_radius == 1.0


def test_density_and_poles():
    assert TRUNC.density([0.5]) == pytest.approx(0.5**-2.5)
    assert TRUNC.density([2.5]) == 0.0
    with pytest.raises(PoleError):
        TRUNC.density([0.0])


def test_cone_support():
    cone = LevyMeasureSpec(2, "cone-stable", 1.0, cone_direction=(1.0, 0.0), cone_aperture=0.5)
    assert cone.density([0.5, 0.1]) > 0
    assert cone.density([0.5, 0.9]) == 0.0  # outside the aperture
    assert cone.density([-0.5, 0.0]) == 0.0
    assert cone.density([1.5, 0.0]) == 0.0


def test_radial_moments_closed_form():
    # ∫_{|z|<=1} |z|^2 q = 2 / (2 - alpha) in one dimension
    assert TRUNC.radial_moment(2.0, 0.0, 1.0) == pytest.approx(4.0)
    assert TRUNC.mass_outside(1.0) == pytest.approx(2 * (1 - 2**-1.5) / 1.5)
    assert math.isinf(TRUNC.radial_moment(1.0, 0.0, 1.0))


def test_sampled_radii_follow_the_restricted_law():
    u = (np.arange(20000) + 0.5) / 20000
    r = TRUNC.sample_radius(u, 0.01)
    assert r.min() >= 0.01 and r.max() <= 2.0
    # the median of the restricted law solves lo^-a - r^-a = (lo^-a - R^-a)/2
    lo, hi = 0.01**-1.5, 2.0**-1.5
    med = ((lo + hi) / 2) ** (-1 / 1.5)
    assert np.median(r) == pytest.approx(med, rel=1e-3)


def test_cone_directions_stay_inside():
    cone = LevyMeasureSpec(3, "cone-stable", 1.0, cone_direction=(0.0, 0.0, 1.0), cone_aperture=0.6)
    u = np.random.default_rng(0).random((500, cone.n_direction_uniforms()))
    e = cone.sample_direction(u)
    assert np.allclose(np.linalg.norm(e, axis=1), 1.0)
    assert np.all(e[:, 2] >= 0.6 - 1e-12)


# -- clipping and coefficients ---------------------------------------------------------------


def test_clip_examples():
    assert np.allclose(clip_displacement([2.0, 0.0], 1.0), [1.0, 0.0])
    assert np.allclose(clip_displacement([0.3, 0.4], 1.0), [0.3, 0.4])
    assert np.allclose(clip_displacement([0.0, 0.0], 0.7), [0.0, 0.0])


def test_clip_norm_property_on_many_draws():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(10000, 3)) * rng.exponential(size=(10000, 1))
    k = rng.uniform(0.01, 2.0, size=10000)
    out = np.array([clip_displacement(a, b) for a, b in zip(v, k)])
    assert np.allclose(np.linalg.norm(out, axis=1), np.minimum(k, np.linalg.norm(v, axis=1)), rtol=1e-12)
    cos = np.sum(out * v, axis=1) / (np.linalg.norm(out, axis=1) * np.linalg.norm(v, axis=1))
    assert np.allclose(cos, 1.0)


def test_coeff4_examples():
    assert coeff4(ONE, [0.3], [1.0], [0.5], [0.2]) == 1.0
    for u, z in [(0.1, 0.2), (-2.0, 5.0), (0.7, -0.3)]:
        assert coeff4(SIN, [0.0], [math.pi / 2], [u], [z]) == 2.0


@given(finite, finite, finite, finite)
def test_coeff4_reflection_identity(x, y, u, z):
    for fld in (SIN, TABLE):
        a = coeff4(fld, [x], [y], [u], [z])
        b = coeff4(fld, [x], [y], [-u], [z - u])
        assert a == pytest.approx(b, abs=1e-14)


def test_coefficient_bounds_spot_check():
    for fld in (SIN, TABLE, CoefficientField(2, "separable-holder", (1.5, 0.5, 0.5, 2.0))):
        assert fld.spot_check()
    with pytest.raises(ValueError):
        CoefficientField(1, "separable-sinusoidal", (2.0, 1.0), c_lower=1.5)


# -- displaced-minimum kernel and branch densities ------------------------------------------


def test_nu_u_example():
    assert nu_u_density(HOM05, [1.0], [0.25]) == pytest.approx(1.5396007178390020, rel=1e-14)
    assert nu_u_density(TRUNC, [1.0], [2.5]) == 0.0
    with pytest.raises(PoleError):
        nu_u_density(HOM05, [1.0], [1.0])
    with pytest.raises(PoleError):
        nu_u_density(HOM05, [0.0], [0.3])


@given(st.floats(0.05, 1.5), st.floats(-3, 3))
def test_nu_u_is_below_both_densities_and_reflects(u, z):
    if z in (0.0, u) or z + u == 0:
        return
    val = nu_u_density(TRUNC, [u], [z])
    assert val <= TRUNC.density([z]) + 1e-300
    # density of nu_u at z + u equals density of nu_{-u} at z
    if z + u != u:
        assert nu_u_density(TRUNC, [u], [z + u]) == pytest.approx(nu_u_density(TRUNC, [-u], [z]), rel=1e-13)


def test_branch_convention_for_equal_points():
    d = branch_densities(TRUNC, SIN, [0.4], [0.4], [0.3])
    c = SIN.value([0.4], [0.3]) * TRUNC.density([0.3])
    assert np.allclose(d, [0.0, 0.0, c, 0.0, 0.0])


def test_constant_coefficient_has_no_marginal_remainder():
    rng = np.random.default_rng(1)
    z = rng.uniform(-2, 2, (200, 1))
    d = branch_densities(TRUNC, ONE, [0.1], [0.5], z)
    assert np.all(d[3] == 0) and np.all(d[4] == 0)


@pytest.mark.parametrize("fld", [SIN, TABLE])
def test_branch_identities_pointwise(fld):
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y = rng.uniform(-2, 2, 2)
        z = rng.uniform(-2.5, 2.5)
        kappa = rng.uniform(0.1, 1.0)
        d = branch_densities(TRUNC, fld, [x], [y], [z], kappa)
        cx = fld.value([x], [z]) * TRUNC.density([z])
        cy = fld.value([y], [z]) * TRUNC.density([z])
        assert np.all(d >= 0)
        assert d[:4].sum() == pytest.approx(cx, rel=1e-12, abs=1e-300)
        assert d.sum() == pytest.approx(max(cx, cy), rel=1e-12, abs=1e-300)
        assert d.sum() <= fld.c_upper * TRUNC.density([z]) * (1 + 1e-12)


def test_bundle_views():
    b = KernelBundle(TRUNC, SIN, (0.2,), (0.9,), 0.5)
    assert np.allclose(b.shift, [-0.5])
    z = np.array([[0.3]])
    assert b.nu_tilde(z)[0] == pytest.approx(min(SIN.value([0.2], [0.3]), SIN.value([0.9], [0.3])) * TRUNC.density([0.3]))
    assert b.c_tilde(z)[0] == 0.0  # c(0.2) < c(0.9)
    assert b.c_tilde(z, swap=True)[0] > 0
    assert b.branches(z).shape == (5, 1)


def test_branch_negativity_is_reported(monkeypatch):
    import levy_coupling_lab.kernels as k

    def broken(*args, **kw):
        out = np.zeros((5, 1))
        out[2] = -1.0
        return out

    monkeypatch.setattr(k, "_branch_densities", broken)
    with pytest.raises(KernelError):
        k.branch_densities(TRUNC, SIN, [0.0], [0.5], [0.3])


# -- continuity moduli ------------------------------------------------------------------------


def test_modulus_w_examples():
    assert modulus_w(TRUNC, ONE, 0.3, 2) == 0.0
    assert modulus_w(TRUNC, SIN, 0.1, 2) == pytest.approx(0.39983335416542665, rel=1e-12)
    r = 1e-6
    assert modulus_w(TRUNC, SIN, r, 2) / r == pytest.approx(4.0, rel=1e-6)
    with pytest.raises(ValueError):
        modulus_w(TRUNC, SIN, 0.1, 3)


def test_modulus_w_is_monotone():
    for fld in (SIN, CoefficientField(1, "separable-holder", (2.0, 1.0, 0.5))):
        w = [modulus_w(TRUNC, fld, r, 2) for r in np.logspace(-4, 0, 30)]
        assert np.all(np.diff(w) >= -1e-15)


def test_table_modulus_is_a_sampled_lower_bound():
    # brute force over a finer pair grid can only find larger values
    coarse = modulus_w(TRUNC, TABLE, 0.2, 2, pair_samples=8)
    fine = modulus_w(TRUNC, TABLE, 0.2, 2, pair_samples=64)
    assert 0 < coarse <= fine + 1e-15


def test_perturbation_moduli():
    null = PerturbationKernel(1)
    assert modulus_w_mu(null, 0.1, 2) == 0.0
    assert modulus_w_star(TRUNC, SIN, null, 0.1, 2) == modulus_w(TRUNC, SIN, 0.1, 2)
    flat = PerturbationKernel(1, "stable-like", 0.5, 1.0, 1.0, 0.0)
    assert modulus_w_mu(flat, 0.1, 1) == 0.0
    m = PerturbationKernel(1, "stable-like", 0.5, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert modulus_w_mu(m, 0.1, 1) == pytest.approx(0.39983335416542665, rel=1e-12)
    heavy = PerturbationKernel(1, "stable-like", 1.5, 1.0, 1.0, 1.0)
    with pytest.raises(FirstMomentError):
        modulus_w_mu(heavy, 0.1, 1)
    assert m.integrability_certificate() < math.inf
    assert m.first_moment_certificate() < math.inf


def test_bounds_check_examples():
    hom = LevyMeasureSpec(2, "homogeneous-stable", 1.2, 0.7)
    rep = stable_bounds_check(hom, 1.2, 1.2, 0.7, 0.7)
    assert rep.passed and rep.worst_ratio == pytest.approx(1.0)
    cone = LevyMeasureSpec(2, "cone-stable", 0.8, 1.0, cone_direction=(0.0, 1.0), cone_aperture=0.3)
    assert stable_bounds_check(cone, 0.8, 0.8, 1.0, 1.0, cone=((0.0, 1.0), 0.3)).passed
    bad = stable_bounds_check(TRUNC, 1.2, 1.2, 1.0, 1.0)
    assert not bad.passed
    assert abs(bad.worst_point[0]) < 1e-3  # the violation sits at small |z|


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(0.01, 1.0))
def test_holder_oscillation_is_attained(x, r):
    fld = CoefficientField(1, "separable-holder", (2.0, 1.0, 0.5))
    osc = fld.oscillation(r)
    g = lambda t: abs(math.sin(t)) ** 0.5
    assert abs(g(x) - g(x + r)) <= osc + 1e-9
