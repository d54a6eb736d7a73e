"""Command line front end: ``levy-coupling-lab <group> <action> [--config FILE] [--key value ...]``.

Every run writes ``results.csv`` (plus ``events.csv`` when events are
logged), ``summary.json`` with the verdict and ``manifest.json`` echoing the
resolved configuration and the sha256 of every file.  Exit status: 0 all
verdicts pass, 1 a verdict failed, 2 usage or configuration error, 3 a
numeric budget was exhausted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .config import (
    OUTPUT_ENV, ConfigError, build_field, build_observable, build_pert, build_psi, build_quad, build_sim,
    build_spec, key_help, parse_config,
)
from .estimators import (
    InsufficientPointsError, coupling_survival, estimate_semigroup, fit_rate, gradient_curve,
)
from .functions import PairFunction, gaussian, lorentzian
from .kernels import modulus_w, modulus_w_mu, modulus_w_star
from .modulus import DomainError, ModulusFunction
from .quadrature import (
    QuadratureBudgetError, admissible_epsilon, apply_coupling, apply_L, apply_LC, drift_margin, j_nu,
    lambda_psi, lc_closed_form, log_grid, mass_nu_u, prop32_report,
)
from .simulator import SimulationBudgetError, event_log_rows, simulate_coupled, simulate_coupled_batch, \
    simulate_single, simulate_single_batch

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

COLUMNS = {
    "check operator-identity": "x, y, Lf, Lg, coupling, residual, tolerance, error_sum, pass",
    "check lc-form": "x, y, kappa, r, quadrature, closed_form, rel_diff, pass",
    "check prop32": "variant, x, y, r, bound, coupling, margin, pass",
    "check drift": "r, j_nu, psi_dd_2r, w, margin, pass",
    "kernel mass": "u, mass_u, mass_minus_u, error_estimate, rel_asymmetry, pass",
    "kernel jnu": "r, j_nu",
    "modulus w": "r, p, w, w_mu, w_star",
    "simulate single": "path, x...  (events.csv: time, branch, z..., x...)",
    "simulate couple": "path, coupling_time, x..., y...  (events.csv: time, branch, z..., x..., y...)",
    "estimate semigroup": "t, value, stderr",
    "estimate gradient": "t, value, stderr, bound, survival",
    "estimate survival": "t, survival, stderr, lower, upper",
    "estimate rate": "t, value, stderr, used",
}
SUBCOMMANDS = {
    "check": ("operator-identity", "lc-form", "prop32", "drift"),
    "kernel": ("mass", "jnu"),
    "modulus": ("w",),
    "simulate": ("single", "couple"),
    "estimate": ("gradient", "semigroup", "survival", "rate"),
}
ALIASES = {
    "--x0": "sim.x0", "--y0": "sim.y0", "--t": "sim.t", "--eps-sim": "sim.eps", "--dt": "sim.dt",
    "--kappa": "sim.kappa", "--n": "sim.n", "--seed": "seed", "--psi": "psi.family", "--theta": "psi.theta",
    "--workers": "sim.workers",
}


@dataclass
class Report:
    header: list
    rows: list
    passed: bool
    summary: dict = field(default_factory=dict)
    events: tuple | None = None  # (header, rows)


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return buf.getvalue()


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pairs(cfg, n, rng, r_lo=None, r_hi=None):
    """Deterministic pairs: x uniform in the span box, y at distance r in a random direction."""
    d = cfg["dimension"]
    span = cfg["check.span"]
    out = []
    for _ in range(n):
        x = rng.uniform(-span, span, d)
        if r_lo is None:
            y = rng.uniform(-span, span, d)
        else:
            e = rng.normal(size=d)
            e /= np.linalg.norm(e)
            r = math.exp(rng.uniform(math.log(r_lo), math.log(r_hi)))
            y = x - r * e
        out.append((x, y))
    return out


def _fmt_point(p):
    return " ".join(repr(float(t)) for t in np.atleast_1d(p))


# -- experiments ------------------------------------------------------------------------


def run_operator_identity(cfg):
    spec, fld, qc = build_spec(cfg), build_field(cfg), build_quad(cfg)
    d = cfg["dimension"]
    f, g = gaussian(d), lorentzian(d)
    h = PairFunction.sum_of(f, g)
    rng = np.random.default_rng(cfg["seed"])
    rows, ok = [], True
    for x, y in _pairs(cfg, cfg["check.pairs"], rng):
        lf = apply_L(spec, fld, f, x, qc)
        lg = apply_L(spec, fld, g, y, qc)
        lc = apply_coupling(spec, fld, h, x, y, cfg["sim.kappa"], qc)
        res = abs(lc.value - lf.value - lg.value)
        tol = 1e-6 * (1 + abs(lf.value) + abs(lg.value))
        good = res <= tol
        ok &= good
        rows.append([_fmt_point(x), _fmt_point(y), lf.value, lg.value, lc.value, res, tol,
                     lf.total_error + lg.total_error + lc.total_error, good])
    return Report(COLUMNS["check operator-identity"].split(", "), rows, ok)


def run_lc_form(cfg):
    spec, fld, qc, psi = build_spec(cfg), build_field(cfg), build_quad(cfg), build_psi(cfg)
    prof = psi.extended()
    kappa = cfg["sim.kappa"]
    rng = np.random.default_rng(cfg["seed"])
    rows, ok = [], True
    for x, y in _pairs(cfg, cfg["check.pairs"], rng, 1e-3, 1.5):
        lc = apply_LC(spec, fld, prof, x, y, kappa, qc)
        cf = lc_closed_form(spec, fld, prof, x, y, kappa, qc)
        rel = abs(lc.value - cf.value) / abs(cf.value) if cf.value else abs(lc.value)
        good = rel <= 1e-6
        ok &= good
        rows.append([_fmt_point(x), _fmt_point(y), kappa, float(np.linalg.norm(x - y)), lc.value, cf.value,
                     rel, good])
    return Report(COLUMNS["check lc-form"].split(", "), rows, ok)


def run_prop32(cfg):
    spec, fld, qc, psi = build_spec(cfg), build_field(cfg), build_quad(cfg), build_psi(cfg)
    kappa = cfg["sim.kappa"]
    variants = ["p2"]
    if math.isfinite(spec.radial_moment(1.0, 0.0, 1.0)):
        variants.append("p1")
    rng = np.random.default_rng(cfg["seed"])
    pairs = _pairs(cfg, cfg["check.pairs"], rng, 1e-3, kappa)
    rows, ok = [], True
    worst = math.inf
    for var in variants:
        for x, y in pairs:
            rep = prop32_report(spec, fld, psi, x, y, kappa, kappa, var, qc)
            good = rep.margin >= -1e-6
            ok &= good
            worst = min(worst, rep.margin)
            rows.append([var, _fmt_point(x), _fmt_point(y), float(np.linalg.norm(x - y)), rep.bound,
                         rep.coupling_value, rep.margin, good])
    return Report(COLUMNS["check prop32"].split(", "), rows, ok, {"variants": variants, "worst_margin": worst})


def run_drift(cfg):
    spec, fld, qc, psi = build_spec(cfg), build_field(cfg), build_quad(cfg), build_psi(cfg)
    pert = build_pert(cfg)
    pert = None if pert.is_null else pert
    kw = dict(c1=cfg["drift.c1"], c2=cfg["drift.c2"], kappa=cfg["sim.kappa"], pert=pert, cfg=qc,
              direction_grid_size=cfg["drift.directions"])
    variant = "p2" if spec.alpha >= 1 else "p1"
    grid_n, dec = cfg["drift.grid"], cfg["drift.decades"]
    eps = cfg["drift.eps"]
    if eps is None:
        eps = admissible_epsilon(spec, fld, psi, grid_n, dec, variant=variant, **kw)
    if eps is None:
        return Report(COLUMNS["check drift"].split(", "), [], False,
                      {"eps": None, "reason": "no admissible eps above 1e-12"})
    p = 2 if variant == "p2" else 1
    rows, ok = [], True
    for r in log_grid(eps, grid_n, dec):
        m = drift_margin(spec, fld, psi, r, variant=variant, **kw)
        w = modulus_w_star(spec, fld, pert, r, p) if pert is not None else modulus_w(spec, fld, r, p)
        good = m < 0
        ok &= good
        rows.append([r, j_nu(spec, r, cfg["drift.directions"], qc), psi(2 * r, 2), w, m, good])
    lam = lambda_psi(spec, psi, eps, grid_n, dec, qc, cfg["drift.directions"])
    return Report(COLUMNS["check drift"].split(", "), rows, ok,
                  {"eps": eps, "variant": variant, "lambda_psi": lam})


def _directions(d, n):
    if d == 1:
        return [np.array([1.0])]
    if d == 2:
        return [np.array([math.cos(t), math.sin(t)]) for t in np.linspace(0, math.pi, n, endpoint=False)]
    raise ConfigError("kernel masses are computed for dimension 1 or 2")


def run_mass(cfg):
    spec, qc = build_spec(cfg), build_quad(cfg)
    rows, ok = [], True
    for r in cfg["kernel.radii"]:
        for e in _directions(spec.dimension, cfg["kernel.directions"]):
            u = r * e
            a = mass_nu_u(spec, u, qc)
            b = mass_nu_u(spec, -u, qc)
            rel = abs(a.value - b.value) / max(abs(a.value), 1e-300)
            good = rel <= 1e-8
            ok &= good
            rows.append([_fmt_point(u), a.value, b.value, a.total_error, rel, good])
    return Report(COLUMNS["kernel mass"].split(", "), rows, ok)


def run_jnu(cfg):
    spec, qc = build_spec(cfg), build_quad(cfg)
    radii = np.asarray(cfg["kernel.radii"])
    vals = np.array([j_nu(spec, r, cfg["drift.directions"], qc) for r in radii])
    rows = [[r, v] for r, v in zip(radii, vals)]
    summary = {}
    ok = True
    if radii.size >= 2:
        fit = stats.linregress(np.log(radii), np.log(vals))
        pref = math.exp(fit.intercept)
        ok = abs(fit.slope + spec.alpha) <= 0.05 and pref > 0
        summary = {"slope": fit.slope, "prefactor": pref, "expected_slope": -spec.alpha}
    return Report(COLUMNS["kernel jnu"].split(", "), rows, bool(ok), summary)


def run_modulus(cfg):
    spec, fld, pert = build_spec(cfg), build_field(cfg), build_pert(cfg)
    p = cfg["modulus.p"]
    rows = []
    for r in cfg["modulus.radii"]:
        w = modulus_w(spec, fld, r, p)
        wm = modulus_w_mu(pert, r, p)
        rows.append([r, p, w, wm, modulus_w_star(spec, fld, pert, r, p)])
    ws = [row[2] for row in rows]
    mono = all(b >= a - 1e-15 for a, b in zip(ws, ws[1:])) if list(cfg["modulus.radii"]) == sorted(cfg["modulus.radii"]) else True
    return Report(COLUMNS["modulus w"].split(", "), rows, mono)


def run_simulate(cfg, coupled):
    spec, fld, sp = build_spec(cfg), build_field(cfg), build_sim(cfg)
    n, workers = cfg["sim.n"], cfg["sim.workers"]
    x0 = np.array(cfg["sim.x0"])
    y0 = np.array(cfg["sim.y0"])
    d = spec.dimension
    xs = [f"x{i + 1}" for i in range(d)]
    ys = [f"y{i + 1}" for i in range(d)]
    events = None
    if coupled:
        res = simulate_coupled_batch(spec, fld, x0, y0, sp, n, workers=workers)
        rows = [[i, res.coupling_time[i], *res.x[-1, i], *res.y[-1, i]] for i in range(n)]
        header = ["path", "coupling_time", *xs, *ys]
        summary = {"coupled_fraction": float(np.mean(np.isfinite(res.coupling_time)))}
        if cfg["sim.log_events"]:
            path = simulate_coupled(spec, fld, x0, y0, sp, 0, log_events=True)
            events = (["time", "branch", *[f"z{i + 1}" for i in range(d)], *xs, *ys], event_log_rows(path))
    else:
        res = simulate_single_batch(spec, fld, x0, sp, n, workers=workers)
        rows = [[i, *res.x[-1, i]] for i in range(n)]
        header = ["path", *xs]
        summary = {"mean": [float(t) for t in res.x[-1].mean(axis=0)]}
        if cfg["sim.log_events"]:
            path = simulate_single(spec, fld, x0, sp, 0, log_events=True)
            events = (["time", "branch", *[f"z{i + 1}" for i in range(d)], *xs], event_log_rows(path))
    summary.update(event_rate=res.rate, bias_proxy=res.bias, mean_events=float(res.n_events.mean()))
    return Report(header, rows, True, summary, events)


def run_semigroup(cfg):
    spec, fld, sp = build_spec(cfg), build_field(cfg), build_sim(cfg)
    f = build_observable(cfg)
    rows, ok = [], True
    for t in cfg["sim.t_grid"]:
        v, se = estimate_semigroup(spec, fld, f, cfg["sim.x0"], t, cfg["sim.n"], sp, workers=cfg["sim.workers"])
        ok &= abs(v) <= f.sup_norm() + 3 * se
        rows.append([t, v, se])
    return Report(COLUMNS["estimate semigroup"].split(", "), rows, ok)


def _gradient_rows(cfg):
    spec, fld, sp = build_spec(cfg), build_field(cfg), build_sim(cfg)
    f = build_observable(cfg)
    return gradient_curve(spec, fld, f, cfg["sim.x0"], cfg["sim.y0"], cfg["sim.t_grid"], cfg["sim.n"], sp,
                          workers=cfg["sim.workers"])


def run_gradient(cfg):
    pts = _gradient_rows(cfg)
    rows = [[p.t, p.value, p.stderr, p.bound, p.survival] for p in pts]
    return Report(COLUMNS["estimate gradient"].split(", "), rows, all(p.within_bound for p in pts))


def run_survival(cfg):
    spec, fld, sp = build_spec(cfg), build_field(cfg), build_sim(cfg)
    sc = coupling_survival(spec, fld, cfg["sim.x0"], cfg["sim.y0"], cfg["sim.t_grid"], cfg["sim.n"], sp,
                           workers=cfg["sim.workers"])
    rows = [list(r) for r in zip(sc.t, sc.survival, sc.stderr, sc.lower, sc.upper)]
    ok = bool(np.all(np.diff(sc.survival) <= 0) and np.all((sc.survival >= 0) & (sc.survival <= 1)))
    return Report(COLUMNS["estimate survival"].split(", "), rows, ok)


def run_rate(cfg):
    pts = _gradient_rows(cfg)
    pred = cfg["estimate.rate"]
    if pred is None:
        pred = -1.0 / cfg["levy.alpha"]
    raw = [(p.t, p.value, p.stderr) for p in pts]
    try:
        fit = fit_rate(raw, pred, cfg["estimate.tolerance"])
    except InsufficientPointsError as exc:
        rows = [[t, v, s, False] for t, v, s in raw]
        return Report(COLUMNS["estimate rate"].split(", "), rows, False, {"error": str(exc)})
    rows = [[t, v, s, bool(u)] for (t, v, s), u in zip(raw, fit.used)]
    summary = {"slope": fit.slope, "half_width": fit.half_width, "predicted": fit.predicted,
               "tolerance": fit.tolerance, "agrees": fit.agrees, "trend_monotone": fit.trend_monotone}
    return Report(COLUMNS["estimate rate"].split(", "), rows, fit.agrees, summary)


EXPERIMENTS = {
    "check operator-identity": run_operator_identity,
    "check lc-form": run_lc_form,
    "check prop32": run_prop32,
    "check drift": run_drift,
    "kernel mass": run_mass,
    "kernel jnu": run_jnu,
    "modulus w": run_modulus,
    "simulate single": lambda c: run_simulate(c, False),
    "simulate couple": lambda c: run_simulate(c, True),
    "estimate semigroup": run_semigroup,
    "estimate gradient": run_gradient,
    "estimate survival": run_survival,
    "estimate rate": run_rate,
}


def run_experiment(cfg):
    name = cfg["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    return EXPERIMENTS[name](cfg)


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(t) for k, t in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(t) for t in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def emit(report, cfg, out_dir, gnuplot=False):
    """Write CSVs, summary.json and manifest.json into ``out_dir``; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"results.csv": _csv_text(report.header, report.rows)}
    if report.events is not None:
        files["events.csv"] = _csv_text(*report.events)
    if gnuplot:
        files["plot.gp"] = (
            "set datafile separator ','\nset key autotitle columnhead\n"
            "set logscale xy\nplot 'results.csv' using 1:2 with linespoints\n"
        )
    for name, text in files.items():
        _atomic_write(out / name, text)
    summary = {"experiment": cfg["experiment"], "passed": bool(report.passed), "results": report.summary,
               "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    _atomic_write(out / "summary.json", json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    manifest = {
        "experiment": cfg["experiment"],
        "package_version": __version__,
        "config": cfg.serialize(),
        "provenance": dict(sorted(cfg.provenance.items())),
        "config_sha256": cfg.content_hash(),
        "files": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items())},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _output_base(cfg, cli_out):
    if cli_out:
        return Path(cli_out)
    if cfg["output.dir"]:
        return Path(cfg["output.dir"])
    return Path(os.environ.get(OUTPUT_ENV) or "lab-output")


def _overrides(extra):
    """Turn ``--key value`` pairs (and the short aliases) into config overrides."""
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if tok == "--log-events":
            pairs.append(("sim.log_events", "true"))
            i += 1
            continue
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        key = ALIASES.get("--" + key, key)
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            val = extra[i + 1]
            i += 1
        pairs.append((key, val))
        i += 1
    return pairs


def _parser():
    epilog = "CSV columns per subcommand:\n" + "\n".join(f"  {k}: {v}" for k, v in COLUMNS.items())
    epilog += "\n\nConfiguration keys (override with --key value):\n" + key_help()
    p = argparse.ArgumentParser(
        prog="levy-coupling-lab",
        description="Coupling laboratory for Lévy-type operators: quadrature checks, kernels, simulation, estimators.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("group", help="check | kernel | modulus | simulate | estimate | rerun | keys")
    p.add_argument("action", nargs="?", help="subcommand action, or the manifest path for 'rerun'")
    p.add_argument("--config", help="configuration file (key = value lines)")
    p.add_argument("--out", help=f"output directory (default: output.dir, ${OUTPUT_ENV}, or ./lab-output/<run>)")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    return p


def main(argv=None):
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.group == "keys":
            print(key_help())
            return EXIT_PASS
        if args.group == "rerun":
            if not args.action:
                raise ConfigError("rerun needs a manifest path")
            manifest = json.loads(Path(args.action).read_text())
            cfg = parse_config(manifest["config"])
        else:
            if args.group not in SUBCOMMANDS or args.action not in SUBCOMMANDS[args.group]:
                parser.print_usage(sys.stderr)
                print(f"levy-coupling-lab: unknown subcommand {args.group} {args.action or ''}".rstrip(),
                      file=sys.stderr)
                return EXIT_USAGE
            text = Path(args.config).read_text() if args.config else ""
            cfg = parse_config(text)
            cfg = cfg.with_overrides([("experiment", f"{args.group} {args.action}")] + _overrides(extra))
        if args.group == "rerun" and extra:
            cfg = cfg.with_overrides(_overrides(extra))
        report = run_experiment(cfg)
    except (ConfigError, DomainError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"levy-coupling-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuadratureBudgetError, SimulationBudgetError) as exc:
        print(f"levy-coupling-lab: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"levy-coupling-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    base = _output_base(cfg, args.out)
    out = base if args.out else base / f"{cfg['experiment'].replace(' ', '-')}-{cfg.content_hash()[:12]}"
    emit(report, cfg, out, args.gnuplot)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{cfg['experiment']}: {verdict} ({len(report.rows)} rows) -> {out}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
