"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary and
on stdout) before asserting, so a failing criterion still reports its numbers.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from levy_coupling_lab.cli import main
from levy_coupling_lab.config import build_field, build_psi, build_sim, build_spec, defaults
from levy_coupling_lab.estimators import fit_rate, gradient_curve, ks_two_sample
from levy_coupling_lab.functions import PairFunction, gaussian, lorentzian, tanh_step
from levy_coupling_lab.kernels import CoefficientField, LevyMeasureSpec
from levy_coupling_lab.modulus import ModulusFunction
from levy_coupling_lab.quadrature import (
    QuadratureConfig, admissible_epsilon, apply_coupling, apply_L, apply_LC, drift_margins, j_nu, lambda_psi,
    lc_closed_form, mass_mu, mass_nu_u, prop32_report,
)
from levy_coupling_lab.simulator import simulate_coupled_batch, simulate_single_batch

CFG = QuadratureConfig(tol=1e-8)
TRUNC = LevyMeasureSpec(1, "truncated-stable", 1.5, 1.0, 2.0)
SIN = CoefficientField(1, "separable-sinusoidal", (2.0, 1.0))
HOM05 = LevyMeasureSpec(1, "homogeneous-stable", 0.5, 1.0)
PSIS = [ModulusFunction("power", 0.5), ModulusFunction("log-weighted", 1.0), ModulusFunction("lip-log", 1.0)]


def _record(log, num, ok, detail):
    log.append((num, bool(ok), detail))
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


def test_criterion_1_coupling_identity(acceptance_log):
    t0 = time.perf_counter()
    f, g = gaussian(1), lorentzian(1)
    h = PairFunction.sum_of(f, g)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x, y = rng.uniform(-2, 2, 2)
        lf = apply_L(TRUNC, SIN, f, [x], CFG).value
        lg = apply_L(TRUNC, SIN, g, [y], CFG).value
        lt = apply_coupling(TRUNC, SIN, h, [x], [y], 1.0, CFG).value
        worst = max(worst, abs(lt - lf - lg) / (1 + abs(lf) + abs(lg)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 120
    _record(acceptance_log, 1, ok, f"worst scaled residual {worst:.2e} (limit 1e-6), {dt:.1f}s")
    assert ok


def test_criterion_2_mass_symmetry_and_closed_form(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    specs = [
        LevyMeasureSpec(2, "truncated-stable", 1.2, 1.0, 1.5),
        LevyMeasureSpec(2, "cone-stable", 0.8, 1.0, cone_direction=(0.6, 0.8), cone_aperture=0.4),
    ]
    asym = 0.0
    empty = 0
    for spec in specs:
        for _ in range(10):
            th = rng.uniform(0, 2 * math.pi)
            u = 10 ** rng.uniform(-2, 0.3) * np.array([math.cos(th), math.sin(th)])
            a = mass_nu_u(spec, u, CFG).value
            b = mass_nu_u(spec, -u, CFG).value
            if a == b == 0:
                empty += 1  # the cone and its translate do not overlap
                continue
            asym = max(asym, abs(a - b) / max(abs(a), abs(b)))
    for _ in range(10):
        x, y = rng.uniform(-2, 2, 2)
        u = rng.uniform(-1.5, 1.5)
        a = mass_mu(TRUNC, SIN, [x], [y], [u], CFG).value
        b = mass_mu(TRUNC, SIN, [x], [y], [-u], CFG).value
        asym = max(asym, abs(a - b) / abs(a))
    closed = 0.0
    for u in np.logspace(-3, 1, 9):
        m = mass_nu_u(HOM05, [u], CFG).value
        closed = max(closed, abs(m / (4 * math.sqrt(2) * u**-0.5) - 1))
    dt = time.perf_counter() - t0
    ok = asym <= 1e-8 and closed <= 1e-6 and dt < 30
    _record(acceptance_log, 2, ok, f"asymmetry {asym:.1e} (1e-8, {empty} empty overlaps), "
                                   f"closed form rel {closed:.1e} (1e-6), {dt:.1f}s")
    assert ok


def test_criterion_3_lc_closed_form(acceptance_log):
    t0 = time.perf_counter()
    holder = CoefficientField(1, "separable-holder", (2.0, 1.0, 0.5))
    cases = [
        (TRUNC, SIN, PSIS[0], 0.0, 0.1, 1.0),
        (TRUNC, SIN, PSIS[1], 0.3, 0.05, 1.0),
        (TRUNC, SIN, PSIS[2], -1.0, 0.02, 1.0),
        (TRUNC, SIN, PSIS[0], 1.2, 0.4, 0.25),
        (TRUNC, holder, PSIS[0], 0.5, 0.3, 0.5),
        (TRUNC, holder, PSIS[2], -0.4, 0.01, 1.0),
        (HOM05, SIN, PSIS[0], 0.2, 0.2, 1.0),
        (HOM05, SIN, PSIS[1], -2.0, 0.07, 0.1),
        (LevyMeasureSpec(1, "truncated-stable", 0.8, 2.0, 1.0), SIN, PSIS[2], 0.0, 0.6, 0.3),
        (LevyMeasureSpec(1, "truncated-stable", 1.9, 0.5, 3.0), holder, PSIS[0], 1.5, 0.15, 1.0),
    ]
    worst = 0.0
    for spec, fld, psi, x, r, kappa in cases:
        prof = psi.extended()
        q = apply_LC(spec, fld, prof, [x], [x + r], kappa, CFG).value
        c = lc_closed_form(spec, fld, prof, [x], [x + r], kappa, CFG).value
        worst = max(worst, abs(q - c) / abs(c))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 60
    _record(acceptance_log, 3, ok, f"worst relative gap {worst:.1e} (1e-6) over 10 configs, {dt:.1f}s")
    assert ok


def test_criterion_4_prop32_margins(acceptance_log):
    t0 = time.perf_counter()
    specs = {"p2": TRUNC, "p1": LevyMeasureSpec(1, "truncated-stable", 0.5, 1.0, 2.0)}
    rng = np.random.default_rng(4)
    states = [(rng.uniform(-2, 2), 10 ** rng.uniform(-3, math.log10(0.5))) for _ in range(20)]
    worst = math.inf
    for variant, spec in specs.items():
        for psi in PSIS:
            for x, r in states:
                rep = prop32_report(spec, SIN, psi, [x], [x + r], 1.0, None, variant, CFG)
                worst = min(worst, rep.margin)
    dt = time.perf_counter() - t0
    ok = worst >= -1e-6 and dt < 120
    _record(acceptance_log, 4, ok, f"smallest margin {worst:.3g} (>= -1e-6), 2 variants x 3 families x 20 states, {dt:.1f}s")
    assert ok


J_CASES = [
    ("homogeneous", 1, 0.5), ("homogeneous", 1, 1.5), ("homogeneous", 2, 0.5), ("homogeneous", 2, 1.5),
    ("cone", 1, 0.5), ("cone", 1, 1.5), ("cone", 2, 0.5), ("cone", 2, 1.5),
]


@pytest.mark.parametrize("family,d,alpha", J_CASES, ids=[f"{f}-d{d}-a{a}" for f, d, a in J_CASES])
def test_criterion_5_j_nu_scaling(acceptance_log, family, d, alpha):
    t0 = time.perf_counter()
    if family == "cone":
        spec = LevyMeasureSpec(d, "cone-stable", alpha, 1.0, cone_direction=tuple(np.eye(d)[0]), cone_aperture=0.5)
    else:
        spec = LevyMeasureSpec(d, "homogeneous-stable", alpha, 1.0)
    rs = np.logspace(-3, -1, 9)
    js = np.array([j_nu(spec, r) for r in rs])
    slope = np.polyfit(np.log(rs), np.log(js), 1)[0]
    prefactor = float(np.min(js * rs**alpha))
    dt = time.perf_counter() - t0
    ok = abs(slope + alpha) <= 0.05 and prefactor > 0 and dt < 60
    _record(acceptance_log, 5, ok, f"{family} d={d} alpha={alpha}: slope {slope:.4f} (target {-alpha} +- 0.05), "
                                   f"min J r^alpha {prefactor:.3g}, {dt:.1f}s")
    assert ok


def test_criterion_6_drift_condition(acceptance_log):
    cfg = defaults()
    spec, fld, psi = build_spec(cfg), build_field(cfg), build_psi(cfg)
    eps = admissible_epsilon(spec, fld, psi, grid_size=50, decades=6.0, kappa=1.0)
    ok_drift = eps is not None
    worst = math.nan
    if ok_drift:
        _, margins = drift_margins(spec, fld, psi, eps, grid_size=50, decades=6.0)
        worst = float(margins.max())
        ok_drift = bool(np.all(margins < 0))
    th, e = 0.3, 0.1
    closed = 4 * math.sqrt(2) * th * (1 - th) * 2 ** (th - 2) * e ** (th - 0.5)
    lam = lambda_psi(HOM05, ModulusFunction("power", th), e)
    rel = abs(lam / closed - 1)
    ok = ok_drift and rel <= 1e-4
    _record(acceptance_log, 6, ok, f"eps {eps if eps is None else format(eps, '.3g')}, largest margin {worst:.3g} (< 0); lambda {lam:.10g} vs "
                                   f"{closed:.10g}, rel {rel:.1e} (1e-4)")
    assert ok


def test_criterion_7_marginal_fidelity(acceptance_log):
    t0 = time.perf_counter()
    cfg = defaults()
    spec, fld, params = build_spec(cfg), build_field(cfg), build_sim(cfg)
    params = dataclasses.replace(params, eps_sim=1e-2, t_end=1.0)
    x0, y0 = cfg["sim.x0"], cfg["sim.y0"]
    single = simulate_single_batch(spec, fld, x0, params, 10_000)
    coupled = simulate_coupled_batch(spec, fld, x0, y0, dataclasses.replace(params, stream=1), 10_000)
    ks = ks_two_sample(coupled.x[-1], single.x[-1])
    dt = time.perf_counter() - t0
    ok = ks <= 0.03 and dt < 300
    _record(acceptance_log, 7, ok, f"KS {ks:.4f} (<= 0.03), independent streams, n=10^4 each, {dt:.1f}s")
    assert ok


def test_criterion_8_coupling_inequality_and_rate(acceptance_log):
    t0 = time.perf_counter()
    cfg = defaults()
    spec, fld, params = build_spec(cfg), build_field(cfg), build_sim(cfg)
    grid = [0.05, 0.1, 0.2, 0.4, 0.8]
    pts = gradient_curve(spec, fld, tanh_step(1, 0.0, 0.01), [-0.025], [0.025], grid, 10_000, params)
    bound_ok = all(p.within_bound for p in pts)
    fit = fit_rate([(p.t, p.value, p.stderr) for p in pts], -1 / spec.alpha, tolerance=0.25)
    dt = time.perf_counter() - t0
    ok = bound_ok and fit.agrees and dt < 600
    ratios = ", ".join(f"{p.value / p.bound:.2f}" for p in pts)
    _record(acceptance_log, 8, ok, f"value/bound {ratios} (<= 1); slope {fit.slope:.3f} +- {fit.half_width:.3f} "
                                   f"(target {-1 / spec.alpha:.3f} +- 0.25); monotone trend {fit.trend_monotone}, "
                                   f"{dt:.1f}s")
    assert ok


RERUNS = [
    ["simulate", "couple", "--sim.n", "600", "--sim.t", "0.5", "--log-events"],
    ["simulate", "single", "--sim.n", "600", "--sim.t", "0.5", "--log-events"],
    ["estimate", "gradient", "--sim.n", "600"],
    ["estimate", "survival", "--sim.n", "600"],
]


def test_criterion_9_determinism(acceptance_log, tmp_path):
    bad = []
    for i, argv in enumerate(RERUNS):
        a, b = tmp_path / f"a{i}", tmp_path / f"b{i}"
        assert main([*argv, "--out", str(a)]) in (0, 1)
        assert main(["rerun", str(a / "manifest.json"), "--out", str(b), "--workers", "3", "--sim.chunk", "97"]) in (0, 1)
        for name in ("results.csv", "events.csv"):
            if (a / name).exists() and (a / name).read_bytes() != (b / name).read_bytes():
                bad.append(f"{' '.join(argv[:2])}/{name}")
    ok = not bad
    _record(acceptance_log, 9, ok, f"{len(RERUNS)} manifests re-run with 3 workers and chunk 97; "
                                   f"mismatches: {', '.join(bad) or 'none'}")
    assert ok
