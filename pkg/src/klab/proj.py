"""Floating-point geometry of the complex projective plane and its dual.

Points and lines are stored as canonical unit homogeneous representatives:
Euclidean norm one, with the largest-modulus coordinate made real and
non-negative (ties broken by lowest index).  Projective equality then becomes
approximate component-wise equality, which keeps hashing and clustering
deterministic downstream.

Incidence uses the unconjugated bilinear pairing sum(p_i * l_i), so that the
line through two points is a plain cross product and duals transform by
inverse-transpose.
"""

from __future__ import annotations

import dataclasses
from itertools import combinations
from typing import Sequence, Union

import numpy as np

from .errors import CoincidentLines, CoincidentPoints, ZeroVector

TOL_DISTINCT = 1e-9
TOL_INCIDENCE = 1e-9

_NORM_SLACK = 32 * np.finfo(float).eps


def canonicalize(v: np.ndarray) -> np.ndarray:
    """Return the canonical unit representative of a nonzero complex vector.

    Idempotent: feeding the output back returns it bit-for-bit.  Raises
    ZeroVector when the largest coordinate modulus is below 1e-300.
    """
    u = np.asarray(v, dtype=complex).reshape(-1)
    mods = np.abs(u)
    if not np.all(np.isfinite(mods)):
        raise ZeroVector("non-finite coordinates")
    if mods.max() <= 1e-300:
        raise ZeroVector("zero homogeneous vector")
    norm = np.linalg.norm(u)
    if abs(norm - 1.0) > _NORM_SLACK:
        u = u / norm
        mods = np.abs(u)
    pivot = int(np.argmax(mods))
    p = u[pivot]
    if not (p.imag == 0.0 and p.real > 0.0):
        u = u * (np.conj(p) / abs(p))
    u = u.copy()
    u.flags.writeable = False
    return u


@dataclasses.dataclass(frozen=True)
class ProjPoint:
    """A point of CP^2, stored as a canonical unit representative."""

    coords: np.ndarray

    def __repr__(self):
        c = self.coords
        return "ProjPoint[%s : %s : %s]" % tuple(np.round(c, 6))


@dataclasses.dataclass(frozen=True)
class ProjLine:
    """A complex line of CP^2, stored via the canonical dual vector.

    A point p lies on the line iff sum(p_i * dual_i) = 0.
    """

    dual: np.ndarray

    def __repr__(self):
        c = self.dual
        return "ProjLine<%s : %s : %s>" % tuple(np.round(c, 6))


class AtInfinity:
    """Sentinel returned by affine_chart for points outside the chart."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AtInfinity"


AT_INFINITY = AtInfinity()


def point_new(v) -> ProjPoint:
    """Projectivize a nonzero vector of C^3."""
    return ProjPoint(canonicalize(np.asarray(v, dtype=complex)))


def line_new(dual) -> ProjLine:
    """Build a line from a nonzero dual vector."""
    return ProjLine(canonicalize(np.asarray(dual, dtype=complex)))


def fs_distance(a: ProjPoint, b: ProjPoint) -> float:
    """Fubini-Study distance between two points, in [0, pi/2]."""
    return _fs(a.coords, b.coords)


def fs_distance_lines(a: ProjLine, b: ProjLine) -> float:
    """Fubini-Study distance between two lines (their dual points)."""
    return _fs(a.dual, b.dual)


def _fs(u: np.ndarray, v: np.ndarray) -> float:
    c = abs(np.vdot(u, v))
    if c > 1.0:
        c = 1.0
    return float(np.arccos(c))


def line_through(p: ProjPoint, q: ProjPoint, tol_distinct: float = TOL_DISTINCT) -> ProjLine:
    """The unique line through two distinct points."""
    if fs_distance(p, q) <= tol_distinct:
        raise CoincidentPoints("points coincide within %g" % tol_distinct)
    return ProjLine(canonicalize(np.cross(p.coords, q.coords)))


def meet(l1: ProjLine, l2: ProjLine, tol_distinct: float = TOL_DISTINCT) -> ProjPoint:
    """Intersection point of two distinct lines."""
    if fs_distance_lines(l1, l2) <= tol_distinct:
        raise CoincidentLines("lines coincide within %g" % tol_distinct)
    return ProjPoint(canonicalize(np.cross(l1.dual, l2.dual)))


def incident(p: ProjPoint, l: ProjLine, tol: float = TOL_INCIDENCE) -> bool:
    """Whether p lies on l: |<p, dual>| below tol for unit representatives."""
    return abs(np.dot(p.coords, l.dual)) < tol


def point_line_distance(p: ProjPoint, l: ProjLine) -> float:
    """FS distance from a point to (the point set of) a line."""
    s = abs(np.dot(p.coords, l.dual))
    if s > 1.0:
        s = 1.0
    return float(np.arcsin(s))


def collinear(p: ProjPoint, q: ProjPoint, r: ProjPoint, tol: float = TOL_DISTINCT) -> bool:
    """Whether three points lie on a common line (unit-representative det test)."""
    d = np.linalg.det(np.stack([p.coords, q.coords, r.coords]))
    return abs(d) < tol


def in_general_position(lines: Sequence[ProjLine], tol_distinct: float = TOL_DISTINCT) -> bool:
    """Pairwise distinct and no three lines through a common point.

    Equivalently: no three dual points collinear.  Families of size <= 2 are
    in general position whenever the members are distinct.
    """
    n = len(lines)
    for i, j in combinations(range(n), 2):
        if fs_distance_lines(lines[i], lines[j]) <= tol_distinct:
            return False
    duals = [l.dual for l in lines]
    for i, j, k in combinations(range(n), 3):
        d = np.linalg.det(np.stack([duals[i], duals[j], duals[k]]))
        if abs(d) < tol_distinct:
            return False
    return True


def affine_chart(p: ProjPoint, chart: int) -> Union[tuple, AtInfinity]:
    """Dehomogenize by the chart coordinate; AT_INFINITY if that coordinate ~ 0."""
    if chart not in (0, 1, 2):
        raise ValueError("chart must be 0, 1 or 2")
    c = p.coords
    if abs(c[chart]) < 1e-12:
        return AT_INFINITY
    rest = [c[i] / c[chart] for i in range(3) if i != chart]
    return (complex(rest[0]), complex(rest[1]))
