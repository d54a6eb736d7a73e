"""Flat ``key = value`` experiment configuration with defaults and provenance.

Lines are ``key = value``; ``#`` starts a comment.  Lists are comma
separated.  ``auto`` leaves an optional value to be chosen by the code.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .functions import BUILTIN, constant, tanh_step
from .kernels import COEFF_FAMILIES, LEVY_FAMILIES, PERT_FAMILIES, CoefficientField, LevyMeasureSpec, PerturbationKernel
from .modulus import FAMILIES as PSI_FAMILIES, ModulusFunction
from .quadrature import QuadratureConfig
from .simulator import SimParams

OUTPUT_ENV = "LEVY_COUPLING_LAB_OUTPUT"


class ConfigError(ValueError):
    """Unknown key, malformed value or violated constraint."""


# -- value types ----------------------------------------------------------------------


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _opt_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else _float(text)


def _floats(text):
    text = text.strip()
    return tuple(_float(t) for t in text.split(",")) if text else ()


def _opt_floats(text):
    return None if text.strip().lower() in ("auto", "none", "") else _floats(text)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    check: object = None  # value -> error message or None
    choices: tuple = ()
    doc: str = ""


def _range(lo, hi, lo_open=True, hi_open=True):
    def check(v):
        ok_lo = v > lo if lo_open else v >= lo
        ok_hi = v < hi if hi_open else v <= hi
        if not (ok_lo and ok_hi):
            return f"must lie in {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'}"
        return None
    return check


def _positive(v):
    return None if v is None or v > 0 else "must be positive"


KEYS = {
    "experiment": Key(str, "", doc="subcommand recorded in manifests, e.g. 'check drift'"),
    "seed": Key(_int, 0, lambda v: None if 0 <= v < 2**64 else "must be a 64-bit unsigned integer"),
    "dimension": Key(_int, 1, lambda v: None if v >= 1 else "must be a positive integer"),
    "levy.family": Key(str, "truncated-stable", choices=LEVY_FAMILIES),
    "levy.alpha": Key(_float, 1.5, _range(0, 2)),
    "levy.amplitude": Key(_float, 1.0, _positive),
    "levy.truncation": Key(_float, 2.0, _positive, doc="'inf' for no truncation"),
    "levy.cone.xi": Key(_opt_floats, None, doc="unit vector; auto = first axis"),
    "levy.cone.delta": Key(_float, 0.5, _range(0, 1)),
    "coeff.family": Key(str, "separable-sinusoidal", choices=COEFF_FAMILIES),
    "coeff.params": Key(_floats, (2.0, 1.0)),
    "coeff.clower": Key(_opt_float, None, _positive),
    "coeff.cupper": Key(_opt_float, None, _positive),
    "pert.family": Key(str, "none", choices=PERT_FAMILIES),
    "pert.beta": Key(_float, 0.5, _range(0, 2)),
    "pert.amplitude": Key(_float, 1.0, lambda v: None if v >= 0 else "must be nonnegative"),
    "pert.a": Key(_float, 1.0),
    "pert.b": Key(_float, 0.0),
    "pert.k": Key(_float, 1.0),
    "pert.truncation": Key(_float, 1.0, _positive),
    "quad.tol": Key(_float, 1e-8, _range(0, 1e-2, hi_open=False)),
    "quad.atol": Key(_opt_float, None, _positive),
    "quad.max_subdivisions": Key(_int, 20000, lambda v: None if v >= 1 else "must be positive"),
    "quad.inner_cutoff": Key(_opt_float, None, _positive),
    "quad.far_cutoff": Key(_opt_float, None, _positive),
    "sim.eps": Key(_float, 1e-2, _range(0, 1)),
    "sim.dt": Key(_float, 1e-3, _positive),
    "sim.t": Key(_float, 1.0, lambda v: None if v >= 0 else "must be nonnegative"),
    "sim.kappa": Key(_float, 1.0, _range(0, 1, hi_open=False)),
    "sim.n": Key(_int, 10000, lambda v: None if v >= 1 else "must be positive"),
    "sim.x0": Key(_floats, (-0.025,)),
    "sim.y0": Key(_floats, (0.025,)),
    "sim.t_grid": Key(_floats, (0.05, 0.1, 0.2, 0.4, 0.8)),
    "sim.max_events": Key(_float, 1e6, _positive),
    "sim.chunk": Key(_int, 4096, lambda v: None if v >= 1 else "must be positive"),
    "sim.workers": Key(_int, 1, lambda v: None if v >= 1 else "must be positive"),
    "sim.log_events": Key(_bool, False),
    "psi.family": Key(str, "lip-log", choices=PSI_FAMILIES),
    "psi.theta": Key(_float, 1.0, _positive),
    "psi.radius": Key(_opt_float, None, _positive),
    "drift.c1": Key(_float, 1.0, lambda v: None if v >= 0 else "must be nonnegative"),
    "drift.c2": Key(_opt_float, None, lambda v: None if v is None or v >= 0 else "must be nonnegative"),
    "drift.eps": Key(_opt_float, None, _positive, doc="auto = largest admissible eps"),
    "drift.grid": Key(_int, 50, lambda v: None if v >= 2 else "must be at least 2"),
    "drift.decades": Key(_float, 6.0, _positive),
    "drift.directions": Key(_int, 32, lambda v: None if v >= 1 else "must be positive"),
    "check.pairs": Key(_int, 20, lambda v: None if v >= 1 else "must be positive"),
    "check.span": Key(_float, 2.0, _positive, doc="pairs are drawn from [-span, span]^d"),
    "kernel.radii": Key(_floats, (0.001, 0.00316, 0.01, 0.0316, 0.1)),
    "kernel.directions": Key(_int, 10, lambda v: None if v >= 1 else "must be positive"),
    "modulus.p": Key(_int, 2, lambda v: None if v in (1, 2) else "must be 1 or 2"),
    "modulus.radii": Key(_floats, (0.001, 0.01, 0.1)),
    "estimate.f": Key(str, "tanh", choices=tuple(BUILTIN) + ("constant",)),
    "estimate.width": Key(_float, 0.01, _positive),
    "estimate.rate": Key(_opt_float, None, doc="predicted exponent; auto = -1/alpha"),
    "estimate.tolerance": Key(_float, 0.25, _positive),
    "output.dir": Key(str, "", doc=f"empty = ${OUTPUT_ENV} or ./lab-output"),
}


@dataclass
class ExperimentConfig:
    values: dict
    provenance: dict = field(default_factory=dict)  # key -> 'default' | 'explicit' | 'override'

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def serialize(self, only_explicit=False):
        lines = []
        for k in sorted(self.values):
            if only_explicit and self.provenance.get(k) == "default":
                continue
            lines.append(f"{k} = {_fmt(self.values[k])}")
        return "\n".join(lines) + "\n"

    def content_hash(self):
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def with_overrides(self, pairs):
        vals = dict(self.values)
        prov = dict(self.provenance)
        for k, text in pairs:
            vals[k] = _convert(k, text)
            prov[k] = "override"
        cfg = ExperimentConfig(vals, prov)
        validate(cfg)
        return cfg


def _convert(key, text):
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    spec = KEYS[key]
    try:
        v = spec.parse(str(text).strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None
    if spec.choices and v not in spec.choices:
        raise ConfigError(f"{key}: {v!r} is not one of {', '.join(spec.choices)}")
    if spec.check is not None:
        msg = spec.check(v)
        if msg:
            raise ConfigError(f"{key} = {text.strip()}: {msg}")
    return v


def defaults():
    return ExperimentConfig({k: s.default for k, s in KEYS.items()}, {k: "default" for k in KEYS})


def parse_config(text):
    """Parse configuration text; raises :class:`ConfigError` naming the offending key."""
    cfg = defaults()
    seen = set()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        seen.add(key)
        cfg.values[key] = _convert(key, val)
        cfg.provenance[key] = "explicit"
    validate(cfg)
    return cfg


def validate(cfg):
    """Cross-key checks: build every object once so constructor errors surface as config errors."""
    build_spec(cfg)
    build_field(cfg)
    build_pert(cfg)
    build_quad(cfg)
    build_sim(cfg)
    build_psi(cfg)
    d = cfg["dimension"]
    for k in ("sim.x0", "sim.y0"):
        if len(cfg[k]) != d:
            raise ConfigError(f"{k} must have {d} components")
    if list(cfg["sim.t_grid"]) != sorted(set(cfg["sim.t_grid"])):
        raise ConfigError("sim.t_grid must be strictly increasing")


def _wrap(prefix, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def build_spec(cfg):
    d = cfg["dimension"]
    fam = cfg["levy.family"]

    def make():
        if fam == "cone-stable":
            xi = cfg["levy.cone.xi"] or tuple(1.0 if i == 0 else 0.0 for i in range(d))
            return LevyMeasureSpec(d, fam, cfg["levy.alpha"], cfg["levy.amplitude"],
                                   cone_direction=xi, cone_aperture=cfg["levy.cone.delta"])
        radius = math.inf if fam == "homogeneous-stable" else cfg["levy.truncation"]
        return LevyMeasureSpec(d, fam, cfg["levy.alpha"], cfg["levy.amplitude"], radius)

    return _wrap("levy.*", make)


def build_field(cfg):
    return _wrap("coeff.*", lambda: CoefficientField(cfg["dimension"], cfg["coeff.family"], cfg["coeff.params"],
                                                     cfg["coeff.clower"], cfg["coeff.cupper"]))


def build_pert(cfg):
    return _wrap("pert.*", lambda: PerturbationKernel(
        cfg["dimension"], cfg["pert.family"], cfg["pert.beta"], cfg["pert.amplitude"],
        cfg["pert.a"], cfg["pert.b"], cfg["pert.k"], cfg["pert.truncation"]))


def build_quad(cfg):
    return _wrap("quad.*", lambda: QuadratureConfig(
        tol=cfg["quad.tol"], atol=cfg["quad.atol"], max_subdivisions=cfg["quad.max_subdivisions"],
        inner_cutoff=cfg["quad.inner_cutoff"], far_cutoff=cfg["quad.far_cutoff"]))


def build_sim(cfg):
    return _wrap("sim.*", lambda: SimParams(
        eps_sim=cfg["sim.eps"], drift_step=cfg["sim.dt"], t_end=cfg["sim.t"], kappa=cfg["sim.kappa"],
        master_seed=cfg["seed"], max_events_per_path=cfg["sim.max_events"], chunk_size=cfg["sim.chunk"]))


def build_psi(cfg):
    alpha1 = cfg["levy.alpha"]
    return _wrap("psi.*", lambda: ModulusFunction(cfg["psi.family"], cfg["psi.theta"], cfg["psi.radius"],
                                                  alpha1=alpha1))


def build_observable(cfg):
    d = cfg["dimension"]
    name = cfg["estimate.f"]
    if name == "constant":
        return constant(d, 1.0)
    if name == "tanh":
        return tanh_step(d, 0.0, cfg["estimate.width"])
    return BUILTIN[name](d)


def key_help():
    rows = []
    for k, s in KEYS.items():
        extra = f" one of: {', '.join(s.choices)}" if s.choices else ""
        doc = f" ({s.doc})" if s.doc else ""
        rows.append(f"  {k} = {_fmt(s.default)}{doc}{extra}")
    return "\n".join(rows)
