"""Test functions for the operators, with the derivatives the quadrature needs.

Every function acts on a flat state ``P`` of shape ``(n, k*d)``: ``k = 1`` for
functions of one point and ``k = 2`` for functions of a pair ``(x, y)``.  The
operator code only uses the small interface shared by both classes:
``value``, ``grad``, ``quad_form`` (``D^T Hess(P) D``), ``value_shift``,
``sup_norm``, ``smooth_radius`` and ``hess_norm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


def _rows(p):
    return np.atleast_2d(np.asarray(p, dtype=float))


@dataclass(frozen=True)
class SmoothFunction:
    """A C^2 function on R^d given by callables on arrays of shape (n, d).

    ``hess`` returns shape (n, d, d).  ``sup`` is a bound on ``|f|`` (may be
    inf for unbounded functions), ``hess_sup`` an optional global bound on the
    Hessian norm, and ``length_scale`` the distance over which f changes
    shape (used to seed the far-field quadrature grid).
    """

    dimension: int
    f: Callable
    df: Callable
    d2f: Callable
    sup: float = math.inf
    hess_sup: float | None = None
    length_scale: float | None = None
    name: str = "f"

    k = 1

    def value(self, p):
        return self.f(_rows(p))

    def value_shift(self, p0, dp):
        return self.f(_rows(p0) + _rows(dp))

    def grad(self, p):
        return self.df(_rows(p))

    def quad_form(self, p, dp):
        h = self.d2f(_rows(p))
        dp = _rows(dp)
        return np.einsum("ni,nij,nj->n", dp, h, dp)

    def hess_norm(self, p):
        h = self.d2f(_rows(p))
        return np.linalg.norm(h, ord=2, axis=(1, 2))

    def sup_norm(self):
        return self.sup

    def smooth_radius(self, p0):
        return math.inf

    def __add__(self, other):
        return SmoothFunction(
            self.dimension,
            lambda x: self.f(x) + other.f(x),
            lambda x: self.df(x) + other.df(x),
            lambda x: self.d2f(x) + other.d2f(x),
            self.sup + other.sup,
            None if self.hess_sup is None or other.hess_sup is None else self.hess_sup + other.hess_sup,
            _min_scale(self.length_scale, other.length_scale),
            f"{self.name}+{other.name}",
        )

    def scaled(self, a):
        return SmoothFunction(
            self.dimension,
            lambda x: a * self.f(x),
            lambda x: a * self.df(x),
            lambda x: a * self.d2f(x),
            abs(a) * self.sup,
            None if self.hess_sup is None else abs(a) * self.hess_sup,
            self.length_scale,
            f"{a}*{self.name}",
        )

    def translated(self, shift):
        s = np.asarray(shift, dtype=float)
        return SmoothFunction(
            self.dimension,
            lambda x: self.f(x - s),
            lambda x: self.df(x - s),
            lambda x: self.d2f(x - s),
            self.sup,
            self.hess_sup,
            self.length_scale,
            f"{self.name}(x-{s.tolist()})",
        )


def _min_scale(a, b):
    vals = [t for t in (a, b) if t is not None]
    return min(vals) if vals else None


def constant(d, c=1.0):
    return SmoothFunction(
        d,
        lambda x: np.full(len(x), float(c)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros((len(x), d, d)),
        abs(c),
        0.0,
        None,
        f"const({c})",
    )


def gaussian(d, width=1.0):
    """``exp(-|x|^2 / width^2)``."""
    s2 = width * width

    def f(x):
        return np.exp(-np.sum(x * x, axis=1) / s2)

    def df(x):
        return (-2.0 / s2) * x * f(x)[:, None]

    def d2f(x):
        e = f(x)[:, None, None]
        outer = np.einsum("ni,nj->nij", x, x)
        return e * ((4.0 / s2**2) * outer - (2.0 / s2) * np.eye(d)[None])

    return SmoothFunction(d, f, df, d2f, 1.0, 2.0 / s2, width, "gaussian")


def lorentzian(d):
    """``1 / (1 + |x|^2)``."""

    def f(x):
        return 1.0 / (1.0 + np.sum(x * x, axis=1))

    def df(x):
        return -2.0 * x * f(x)[:, None] ** 2

    def d2f(x):
        g = f(x)[:, None, None]
        outer = np.einsum("ni,nj->nij", x, x)
        return 8.0 * g**3 * outer - 2.0 * g**2 * np.eye(d)[None]

    return SmoothFunction(d, f, df, d2f, 1.0, 2.0, 1.0, "lorentzian")


def plane_wave(d, freq, phase=0.0):
    """``cos(<freq, x> + phase)``."""
    w = np.asarray(freq, dtype=float).reshape(d)

    def f(x):
        return np.cos(x @ w + phase)

    def df(x):
        return -np.sin(x @ w + phase)[:, None] * w

    def d2f(x):
        return -np.cos(x @ w + phase)[:, None, None] * np.outer(w, w)[None]

    k = float(np.linalg.norm(w))
    return SmoothFunction(d, f, df, d2f, 1.0, k * k, 1.0 / max(k, 1e-300), "cos")


def tanh_step(d, center=0.0, width=0.1):
    """``tanh((x_1 - center) / width)``: a smoothed sign function."""

    def f(x):
        return np.tanh((x[:, 0] - center) / width)

    def df(x):
        out = np.zeros_like(x)
        out[:, 0] = (1.0 - f(x) ** 2) / width
        return out

    def d2f(x):
        t = f(x)
        out = np.zeros((len(x), d, d))
        out[:, 0, 0] = -2.0 * t * (1.0 - t * t) / width**2
        return out

    return SmoothFunction(d, f, df, d2f, 1.0, 4 / (3 * math.sqrt(3) * width**2), width, "tanh")


BUILTIN = {
    "gaussian": gaussian,
    "lorentzian": lorentzian,
    "cos": lambda d: plane_wave(d, np.eye(d)[0]),
    "tanh": tanh_step,
}


@dataclass(frozen=True)
class RadialProfile:
    """A function of the distance ``r >= 0``: value, first and second derivative.

    Used as ``h(x, y) = phi(|x - y|)``; ``sup`` bounds ``|phi|`` on ``[0, inf)``.
    """

    phi: Callable
    d1: Callable
    d2: Callable
    sup: float
    name: str = "phi"

    def __call__(self, r):
        return self.phi(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class PairFunction:
    """Function of a pair ``(x, y)`` stored as a flat state ``(x, y)``.

    Either ``f(x) + g(y)`` (``parts``) or ``phi(|x - y|)`` (``profile``).
    """

    dimension: int
    parts: tuple = ()
    profile: RadialProfile | None = None
    name: str = "h"

    k = 2

    @classmethod
    def sum_of(cls, f, g):
        return cls(f.dimension, parts=(f, g), name=f"{f.name}(x)+{g.name}(y)")

    @classmethod
    def of_x(cls, f):
        return cls.sum_of(f, constant(f.dimension, 0.0))

    @classmethod
    def of_y(cls, g):
        return cls.sum_of(constant(g.dimension, 0.0), g)

    @classmethod
    def of_distance(cls, d, profile):
        return cls(d, profile=profile, name=f"{profile.name}(|x-y|)")

    @property
    def is_distance(self):
        return self.profile is not None

    def _split(self, p):
        p = _rows(p)
        d = self.dimension
        return p[:, :d], p[:, d:]

    def _dist(self, p0, dp=None, rel=None):
        x, y = self._split(p0)
        v = x - y
        if rel is not None:
            v = v + rel
        elif dp is not None:
            a, b = self._split(dp)
            v = v + (a - b)
        return v, np.sqrt(np.sum(v * v, axis=1))

    def value(self, p):
        if self.is_distance:
            return self.profile.phi(self._dist(p)[1])
        x, y = self._split(p)
        return self.parts[0].f(x) + self.parts[1].f(y)

    def value_shift(self, p0, dp, rel=None):
        """Value at ``p0 + dp``; ``rel`` optionally gives the exact change of ``x - y``."""
        if self.is_distance:
            # displacement applied to x - y directly so the distance is exact
            return self.profile.phi(self._dist(p0, dp, rel)[1])
        return self.value(_rows(p0) + _rows(dp))

    def grad(self, p):
        if self.is_distance:
            v, r = self._dist(p)
            g = (self.profile.d1(r) / r)[:, None] * v
            return np.hstack([g, -g])
        x, y = self._split(p)
        return np.hstack([self.parts[0].df(x), self.parts[1].df(y)])

    def quad_form(self, p, dp):
        a, b = self._split(dp)
        if self.is_distance:
            v, r = self._dist(p)
            w = a - b
            e = v / r[:, None]
            along = np.sum(w * e, axis=1)
            perp2 = np.sum(w * w, axis=1) - along**2
            return self.profile.d2(r) * along**2 + (self.profile.d1(r) / r) * perp2
        x, y = self._split(p)
        return self.parts[0].quad_form(x, a) + self.parts[1].quad_form(y, b)

    def hess_norm(self, p):
        if self.is_distance:
            _, r = self._dist(p)
            # the Hessian is [[K, -K], [-K, K]] whose norm is 2 ||K||
            return 2 * np.maximum(np.abs(self.profile.d2(r)), np.abs(self.profile.d1(r) / r))
        x, y = self._split(p)
        return np.maximum(self.parts[0].hess_norm(x), self.parts[1].hess_norm(y))

    def sup_norm(self):
        if self.is_distance:
            return self.profile.sup
        return self.parts[0].sup + self.parts[1].sup

    def smooth_radius(self, p0):
        if self.is_distance:
            return 0.5 * float(self._dist(p0)[1][0])
        return math.inf

    @property
    def length_scale(self):
        if self.is_distance:
            return None
        return _min_scale(self.parts[0].length_scale, self.parts[1].length_scale)
