"""Concave test functions psi used as continuity moduli, with closed-form derivatives.

Families (L = log(1/r)):

* ``power``:        psi = r^theta,            0 < theta < 1
* ``log-weighted``: psi = r L^theta,          theta > 0
* ``lip-log``:      psi = r (1 - L^-theta),   theta > 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functions import RadialProfile

FAMILIES = ("power", "log-weighted", "lip-log")
LOG_CAP = math.exp(-2.0)


class DomainError(ValueError):
    """A modulus or one of its derivatives was requested outside (0, valid_radius]."""


def _default_radius(family, theta):
    if family == "power":
        return 1.0
    if family == "log-weighted":
        return math.exp(-max(2.0, theta + 1.0))
    # psi''' changes sign at L = sqrt((theta+1)(theta+2)); stay a hair inside
    turn = math.sqrt((theta + 1.0) * (theta + 2.0))
    return min(LOG_CAP, math.exp(-(turn + 1e-9)))


@dataclass(frozen=True)
class ModulusFunction:
    family: str
    theta: float
    valid_radius: float | None = None
    alpha1: float | None = None
    strict: bool = True  # False skips the parameter-range guards (for shape diagnostics)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown modulus family {self.family!r}")
        th = self.theta
        if self.strict and self.family == "power" and not 0 < th < 1:
            raise ValueError("power modulus needs theta in (0, 1)")
        if th <= 0:
            raise ValueError("theta must be positive")
        if self.strict and self.family == "log-weighted" and self.alpha1 == 1.0 and th <= 1:
            raise ValueError("log-weighted modulus with alpha1 = 1 requires theta > 1")
        if self.valid_radius is None:
            object.__setattr__(self, "valid_radius", _default_radius(self.family, th))
        if self.valid_radius <= 0:
            raise ValueError("valid_radius must be positive")
        if self.strict and self.family != "power" and self.valid_radius > LOG_CAP * (1 + 1e-15):
            raise ValueError("log families need valid_radius <= e^-2")

    def _raw(self, r, order):
        th = self.theta
        if self.family == "power":
            c = 1.0
            for i in range(order):
                c *= th - i
            return c * r ** (th - order)
        L = np.log(1.0 / r)
        if self.family == "log-weighted":
            if order == 0:
                return r * L**th
            if order == 1:
                return L**th - th * L ** (th - 1)
            if order == 2:
                return -(th / r) * L ** (th - 2) * (L - th + 1)
            return (th / r**2) * L ** (th - 3) * (L * L - (th - 1) * (th - 2))
        if order == 0:
            return r * (1.0 - L ** (-th))
        if order == 1:
            return 1.0 - L ** (-th) - th * L ** (-th - 1)
        if order == 2:
            return -(th / r) * L ** (-th - 2) * (L + th + 1)
        return (th / r**2) * L ** (-th - 3) * (L * L - (th + 1) * (th + 2))

    def __call__(self, r, order=0):
        return psi_eval(self, r, order)

    # -- bounded C^2 extension to [0, inf) ------------------------------------------

    @property
    def _ext(self):
        rm = self.valid_radius
        p0, p1, p2 = (float(self._raw(rm, k)) for k in range(3))
        return rm, p0, p1, -p2 / p1

    def extended(self):
        """Bounded, nondecreasing, concave C^2 profile equal to psi on (0, valid_radius]."""
        rm, p0, p1, k = self._ext

        def phi(r):
            r = np.asarray(r, dtype=float)
            out = np.zeros_like(r)
            lo = (r > 0) & (r <= rm)
            out[lo] = self._raw(r[lo], 0)
            hi = r > rm
            out[hi] = p0 + p1 * (-np.expm1(-k * (r[hi] - rm))) / k
            return out

        def d1(r):
            r = np.asarray(r, dtype=float)
            out = np.full_like(r, np.inf)
            lo = (r > 0) & (r <= rm)
            out[lo] = self._raw(r[lo], 1)
            hi = r > rm
            out[hi] = p1 * np.exp(-k * (r[hi] - rm))
            return out

        def d2(r):
            r = np.asarray(r, dtype=float)
            out = np.full_like(r, -np.inf)
            lo = (r > 0) & (r <= rm)
            out[lo] = self._raw(r[lo], 2)
            hi = r > rm
            out[hi] = -k * p1 * np.exp(-k * (r[hi] - rm))
            return out

        return RadialProfile(phi, d1, d2, p0 + p1 / k, f"{self.family}({self.theta})")

    @property
    def sup_extended(self):
        rm, p0, p1, k = self._ext
        return p0 + p1 / k


def psi_eval(m, r, order=0):
    """Closed-form value of the ``order``-th derivative of psi at r."""
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0, 1, 2 or 3")
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)) or np.any(arr > m.valid_radius * (1 + 1e-12)):
        raise DomainError(
            f"psi derivatives exist only on (0, {m.valid_radius:.6g}]; got r = {r}"
        )
    out = m._raw(arr, order)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ShapeReport:
    passed: bool
    min_psi: float
    min_d1: float
    max_d2: float
    min_d3: float
    min_doubling_margin: float
    grid_size: int
    radius: float


def shape_check(m, grid_size=200, decades=8.0):
    """Check psi >= 0, psi' >= 0, psi'' <= 0, psi''' >= 0 and the doubling inequality.

    The grid is log-spaced over ``[valid_radius * 10^-decades, valid_radius]``;
    the doubling inequality ``2 psi(r) - psi(2r) >= -psi''(2r) r^2`` is checked
    wherever ``2r`` lies in the validity interval.
    """
    rm = m.valid_radius
    r = np.logspace(math.log10(rm) - decades, math.log10(rm), grid_size)
    v = [m._raw(r, k) for k in range(4)]
    half = r[2 * r <= rm]
    dbl = 2 * m._raw(half, 0) - m._raw(2 * half, 0) + m._raw(2 * half, 2) * half**2
    # relative slack for round-off in the doubling margin
    slack = 1e-12 * np.abs(m._raw(half, 0))
    report = ShapeReport(
        passed=bool(
            np.all(v[0] >= 0) and np.all(v[1] >= 0) and np.all(v[2] <= 0) and np.all(v[3] >= 0)
            and np.all(dbl >= -slack)
        ),
        min_psi=float(v[0].min()),
        min_d1=float(v[1].min()),
        max_d2=float(v[2].max()),
        min_d3=float(v[3].min()),
        min_doubling_margin=float(dbl.min()) if dbl.size else math.inf,
        grid_size=grid_size,
        radius=rm,
    )
    return report
