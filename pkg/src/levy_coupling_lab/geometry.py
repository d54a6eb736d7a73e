"""Kink and support features of integrands, located along rays from the origin.

Quadrature in this package is done in polar coordinates centred at the origin
(the only place where a density blows up).  Every other non-smooth spot of an
integrand is described by one of the features below so the radial and angular
rules can put a breakpoint exactly on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float


@dataclass(frozen=True)
class Plane:
    """The hyperplane ``<z, normal> = offset``."""

    normal: tuple
    offset: float


@dataclass(frozen=True)
class Point:
    where: tuple


def _vec(t):
    return np.asarray(t, dtype=float)


def ray_crossings(features, direction):
    """Radii ``r > 0`` at which the ray ``r * direction`` meets a feature."""
    e = _vec(direction)
    out = []
    for f in features:
        if isinstance(f, Sphere):
            c = _vec(f.center)
            b = float(e @ c)
            disc = b * b - float(c @ c) + f.radius**2
            if disc < 0:
                continue
            s = np.sqrt(disc)
            out.extend(r for r in (b - s, b + s) if r > 0)
        elif isinstance(f, Plane):
            n = _vec(f.normal)
            den = float(e @ n)
            if den != 0.0:
                r = f.offset / den
                if r > 0:
                    out.append(r)
        elif isinstance(f, Point):
            p = _vec(f.where)
            norm = float(np.sqrt(p @ p))
            if norm == 0.0:
                continue
            if e.size == 1:
                if np.sign(p[0]) == np.sign(e[0]):
                    out.append(norm)
            else:
                out.append(norm)
    return out


def angle_breaks(features):
    """Polar angles in ``[0, 2*pi)`` where the radial profile changes shape (d = 2)."""
    out = []

    def ang(v):
        return float(np.arctan2(v[1], v[0])) % (2 * np.pi)

    for f in features:
        if isinstance(f, Sphere):
            c = _vec(f.center)
            norm = float(np.hypot(*c))
            if norm == 0.0:
                continue
            out.append(ang(c))
            if norm > f.radius:
                half = float(np.arcsin(f.radius / norm))
                out.extend([ang(c) + half, ang(c) - half])
        elif isinstance(f, Plane):
            n = _vec(f.normal)
            out.extend([ang(n) + np.pi / 2, ang(n) - np.pi / 2])
            if f.offset != 0.0:
                out.append(ang(n) if f.offset > 0 else ang(-n))
        elif isinstance(f, Point):
            p = _vec(f.where)
            if np.any(p != 0):
                out.append(ang(p))
    return sorted({round(a % (2 * np.pi), 15) for a in out})
