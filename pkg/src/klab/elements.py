"""Elements of PSL(3,C): lifts, products, eigenstructure, classification.

A GroupElement stores a determinant-one lift together with a canonical
scalar representative (unit Frobenius norm, largest-modulus entry real and
non-negative).  The canonical form absorbs both the cube-roots-of-unity
ambiguity of the lift and arbitrary scalings, so projective equality is a
plain Fubini-Study comparison of canonical forms.

The closed-form limit set of a cyclic group (cyclic_limit_set) implements
the diagonalizable case table and the Jordan cases: a union of at most two
lines and at most one isolated point, assembled from the eigenbasis.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from ._mat3 import adjugate3, cubic_roots, det3, svd3
from .errors import EllipticUnsupported, IdentityElement, SingularMatrix
from .limits import LimitEstimate, make_estimate
from .proj import ProjLine, ProjPoint, canonicalize, line_new, point_new

MULT_GROUP_TOL = 1e-7  # relative eigenvalue-grouping tolerance
GEO_SV_TOL = 1e-7  # singular-value tolerance for geometric multiplicity
COND_LIMIT = 1e12
RESIDUAL_LIMIT = 1e-8
ELEMENT_EQ_TOL = 1e-9
IDENTITY_TOL = 1e-8


def _unit_det(m: np.ndarray) -> np.ndarray:
    d = det3(m)
    return m / complex(d) ** (1.0 / 3.0)


def _canon9(m: np.ndarray) -> np.ndarray:
    return canonicalize(m.reshape(-1)).reshape(3, 3)


def _fs9(a: np.ndarray, b: np.ndarray) -> float:
    c = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(min(1.0, c)))


@dataclasses.dataclass(frozen=True)
class GroupElement:
    """An element of PSL(3,C): unit-determinant lift plus canonical form."""

    lift: np.ndarray
    canon: np.ndarray

    def __repr__(self):
        return "GroupElement(%s)" % np.array2string(
            np.round(self.lift, 5), separator=", ", max_line_width=200
        )


def element_new(m) -> GroupElement:
    """Normalize an invertible matrix into a group element.

    element_new(lambda * m) equals element_new(m) under element_eq; the lift
    is m divided by the principal cube root of its determinant.
    """
    m = np.asarray(m, dtype=complex).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise SingularMatrix("non-finite entries")
    d = det3(m)
    if abs(d) <= 1e-12:
        raise SingularMatrix("determinant %g below 1e-12" % abs(d))
    lift = m / complex(d) ** (1.0 / 3.0)
    lift = lift.copy()
    lift.flags.writeable = False
    return GroupElement(lift=lift, canon=_canon9(lift))


def identity_element() -> GroupElement:
    return element_new(np.eye(3))


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    prod = _unit_det(a.lift @ b.lift)
    prod.flags.writeable = False
    return GroupElement(lift=prod, canon=_canon9(prod))


def inverse(a: GroupElement) -> GroupElement:
    inv = _unit_det(adjugate3(a.lift))
    inv.flags.writeable = False
    return GroupElement(lift=inv, canon=_canon9(inv))


def power(g: GroupElement, n: int) -> GroupElement:
    if n == 0:
        return identity_element()
    if n < 0:
        return power(inverse(g), -n)
    result = None
    base = g
    while n:
        if n & 1:
            result = base if result is None else compose(result, base)
        base = compose(base, base)
        n >>= 1
    return result


def element_eq(a: GroupElement, b: GroupElement, tol: float = ELEMENT_EQ_TOL) -> bool:
    return _fs9(a.canon, b.canon) < tol


def element_distance(a: GroupElement, b: GroupElement) -> float:
    return _fs9(a.canon, b.canon)


def is_identity(g: GroupElement, tol: float = IDENTITY_TOL) -> bool:
    return _fs9(g.canon, np.eye(3, dtype=complex)) < tol


def point_apply(g: GroupElement, p: ProjPoint) -> ProjPoint:
    return point_new(g.lift @ p.coords)


def line_apply(g: GroupElement, l: ProjLine) -> ProjLine:
    # duals transform by inverse-transpose under the bilinear pairing
    return line_new(inverse(g).lift.T @ l.dual)


# ---------------------------------------------------------------------------
# eigenstructure


@dataclasses.dataclass
class EigenGroup:
    value: complex
    algebraic: int
    geometric: int
    vectors: list  # unit vectors, one per geometric dimension


@dataclasses.dataclass
class EigenData:
    """Full eigenstructure of a 3x3 matrix.

    values carries all three eigenvalues with multiplicity; groups collects
    them by the relative 1e-7 clustering tolerance, each with its geometric
    multiplicity and eigenvectors.  condition estimates the conditioning of
    the chosen (generalized) eigenbasis; ill_conditioned is set above 1e12
    or when the residual exceeds 1e-8 * ||M||.
    """

    values: np.ndarray
    groups: list
    diagonalizable: bool
    condition: float
    residual: float
    ill_conditioned: bool

    def pairs(self) -> list:
        """Flat [(value, vector)] list, one entry per geometric dimension."""
        out = []
        for grp in self.groups:
            for v in grp.vectors:
                out.append((grp.value, v))
        return out


def _null_vector_cross(b: np.ndarray) -> np.ndarray:
    """Kernel direction of a rank-2 matrix via the best row cross product."""
    c01 = np.cross(b[0], b[1])
    c02 = np.cross(b[0], b[2])
    c12 = np.cross(b[1], b[2])
    cands = np.stack([c01, c02, c12])
    norms = np.linalg.norm(cands, axis=1)
    k = int(np.argmax(norms))
    if norms[k] < 1e-300:
        return np.array([1.0, 0, 0], dtype=complex)
    return cands[k] / norms[k]


def eigen3(m) -> EigenData:
    """Closed-form eigendecomposition of a 3x3 complex matrix.

    Eigenvalues come from the characteristic cubic (Cardano plus Newton
    polish); eigenvectors of simple eigenvalues from row cross products of
    (M - lambda I), and null bases of repeated eigenvalues from the refined
    3x3 SVD.  Eigenvalues are grouped at relative tolerance 1e-7.
    """
    m = np.asarray(m, dtype=complex).reshape(3, 3)
    scale = max(float(np.max(np.abs(m))), 1e-300)
    a = m / scale
    tr = a[0, 0] + a[1, 1] + a[2, 2]
    e2 = (
        a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
        + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    )
    roots = cubic_roots(-tr, e2, -det3(a))
    # deterministic order: by modulus, then angle
    roots = np.array(sorted(roots, key=lambda z: (abs(z), np.angle(z))))

    # group by relative tolerance
    ref = max(np.max(np.abs(roots)), 1.0)
    tol = MULT_GROUP_TOL * ref
    grouped: list = []  # list of lists of root values
    for r in roots:
        for grp in grouped:
            if abs(r - np.mean(grp)) <= tol:
                grp.append(r)
                break
        else:
            grouped.append([r])

    groups = []
    vec_basis = []
    for grp in grouped:
        lam = complex(np.mean(grp))
        alg = len(grp)
        b = a - lam * np.eye(3)
        if alg == 1:
            v = _null_vector_cross(b)
            geo = 1
            vecs = [v]
        else:
            sv = svd3(b)
            sref = max(sv.s[0], 1.0)
            geo = int(np.sum(sv.s <= GEO_SV_TOL * sref))
            geo = max(1, min(geo, alg))
            if geo == 1:
                vecs = [_null_vector_cross(b)]
            else:
                vecs = [sv.v[:, 3 - k] for k in range(geo, 0, -1)]
        vecs = [canonicalize(v) for v in vecs]
        groups.append(EigenGroup(value=lam * scale, algebraic=alg, geometric=geo, vectors=vecs))
        vec_basis.extend(vecs)

    diag = sum(g.geometric for g in groups) == 3

    # residual over all (value, vector) pairs, relative to ||M||_F
    mnorm = float(np.linalg.norm(m))
    residual = 0.0
    for grp in groups:
        for v in grp.vectors:
            residual = max(residual, float(np.linalg.norm(m @ v - grp.value * v)))
    residual = residual / max(mnorm, 1e-300)

    # conditioning of the chosen basis, completed orthonormally if deficient
    basis = list(vec_basis)
    if len(basis) < 3:
        from ._mat3 import _orthonormal_complement  # local import, private helper

        onb = []
        for v in basis:
            w = v.astype(complex).copy()
            for b0 in onb:
                w = w - np.vdot(b0, w) * b0
            n = np.linalg.norm(w)
            if n > 1e-12:
                onb.append(w / n)
        basis = basis + _orthonormal_complement(onb)
    vmat = np.stack(basis[:3], axis=1)
    sv = svd3(vmat)
    condition = float(sv.s[0] / sv.s[2]) if sv.s[2] > 0 else np.inf

    vals = np.array([g.value for g in groups for _ in range(g.algebraic)])
    ill = condition > COND_LIMIT or residual > RESIDUAL_LIMIT
    return EigenData(
        values=vals,
        groups=groups,
        diagonalizable=diag,
        condition=condition,
        residual=residual,
        ill_conditioned=bool(ill),
    )


# ---------------------------------------------------------------------------
# classification


@dataclasses.dataclass(frozen=True)
class ElementClass:
    kind: str  # 'elliptic' | 'parabolic' | 'loxodromic'
    diagonalizable: bool
    moduli: tuple  # sorted ascending

    def __repr__(self):
        return "ElementClass(%s, diag=%s, moduli=%s)" % (
            self.kind,
            self.diagonalizable,
            tuple(round(x, 8) for x in self.moduli),
        )


def classify(g: GroupElement, eig: Optional[EigenData] = None) -> ElementClass:
    """Standard moduli-based trichotomy for PSL(3,C) elements.

    Loxodromic when some pair of eigenvalue moduli differs by more than a
    relative 1e-7; otherwise elliptic if diagonalizable, parabolic if not.
    """
    eig = eig or eigen3(g.lift)
    mods = tuple(sorted(abs(v) for v in eig.values))
    same = mods[2] - mods[0] <= MULT_GROUP_TOL * max(mods[2], 1e-300)
    if not same:
        kind = "loxodromic"
    elif eig.diagonalizable:
        kind = "elliptic"
    else:
        kind = "parabolic"
    return ElementClass(kind=kind, diagonalizable=eig.diagonalizable, moduli=mods)


def fixed_points(g: GroupElement, eig: Optional[EigenData] = None) -> list:
    """Projectivized eigenvectors of the lift (one per geometric dimension)."""
    if is_identity(g):
        raise IdentityElement("fixed set of the identity is all of CP^2")
    eig = eig or eigen3(g.lift)
    return [point_new(v) for _, v in eig.pairs()]


def pointwise_fixed_lines(g: GroupElement, eig: Optional[EigenData] = None) -> list:
    """Lines fixed pointwise: eigen-planes of geometric multiplicity two."""
    if is_identity(g):
        raise IdentityElement("fixed set of the identity is all of CP^2")
    eig = eig or eigen3(g.lift)
    lines = []
    for grp in eig.groups:
        if grp.geometric == 2:
            lines.append(line_new(np.cross(grp.vectors[0], grp.vectors[1])))
    return lines


def invariant_lines(g: GroupElement, eig_t: Optional[EigenData] = None) -> list:
    """Invariant lines: projectivized eigenvectors of the transposed lift."""
    if is_identity(g):
        raise IdentityElement("every line is invariant under the identity")
    eig_t = eig_t or eigen3(g.lift.T)
    return [line_new(v) for _, v in eig_t.pairs()]


def order_of(g: GroupElement, k_max: int = 120) -> Optional[int]:
    """Smallest n <= k_max with g^n projectively the identity, else None.

    Eigenvalue moduli away from one (or a non-diagonalizable lift) force
    infinite order without powering.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if is_identity(g):
        return 1
    eig = eigen3(g.lift)
    mods = sorted(abs(v) for v in eig.values)
    if mods[2] - mods[0] > MULT_GROUP_TOL * max(mods[2], 1e-300):
        return None
    if not eig.diagonalizable:
        return None
    p = g
    for n in range(1, k_max + 1):
        if is_identity(p):
            return n
        p = compose(p, g)
    return None


# ---------------------------------------------------------------------------
# closed-form cyclic limit set


def _plane_dual_of_square_kernel(b: np.ndarray) -> np.ndarray:
    """Dual of ker((M - lambda I)^2) for a Jordan block: largest row of B^2."""
    b2 = b @ b
    norms = np.linalg.norm(b2, axis=1)
    k = int(np.argmax(norms))
    if norms[k] < 1e-300:
        raise EllipticUnsupported("matrix is scalar; no Jordan structure")
    return b2[k] / norms[k]


def cyclic_limit_set(g: GroupElement, eig: Optional[EigenData] = None) -> LimitEstimate:
    """Closed-form limit set of the cyclic group generated by g.

    For diagonalizable g with eigenvalue moduli m_a <= m_b <= m_c and
    eigenvectors v_a, v_b, v_c:

      * all moduli distinct       -> line(v_a,v_b) + line(v_b,v_c)
      * m_a = m_b < m_c           -> line(v_a,v_b) + the point [v_c]
      * m_a < m_b = m_c           -> the point [v_a] + line(v_b,v_c)

    For non-diagonalizable g: a two-block with a distinct-modulus third
    eigenvalue gives line(v_J, v_mu) plus the block's generalized eigenplane;
    equal moduli (including unipotent) give the single line through the
    eigenvectors; a full Jordan block gives ker((M - lambda)^2).
    """
    eig = eig or eigen3(g.lift)
    cls = classify(g, eig)
    if cls.kind == "elliptic":
        raise EllipticUnsupported(
            "cyclic limit sets are tabulated only for loxodromic/parabolic elements"
        )
    notes = []
    if eig.ill_conditioned:
        notes.append("ill-conditioned eigenbasis (condition %.3g)" % eig.condition)

    lines = []
    points = []
    if eig.diagonalizable:
        pairs = sorted(eig.pairs(), key=lambda t: abs(t[0]))
        (la, va), (lb, vb), (lc, vc) = pairs
        ref = abs(lc)
        ab = abs(abs(la) - abs(lb)) <= MULT_GROUP_TOL * ref
        bc = abs(abs(lb) - abs(lc)) <= MULT_GROUP_TOL * ref
        if ab and bc:
            raise EllipticUnsupported("all eigenvalue moduli equal")
        if ab:
            lines.append(line_new(np.cross(va, vb)))
            points.append(point_new(vc))
        elif bc:
            points.append(point_new(va))
            lines.append(line_new(np.cross(vb, vc)))
        else:
            lines.append(line_new(np.cross(va, vb)))
            lines.append(line_new(np.cross(vb, vc)))
    else:
        if len(eig.groups) == 1:
            grp = eig.groups[0]
            if grp.geometric >= 2:
                lines.append(line_new(np.cross(grp.vectors[0], grp.vectors[1])))
            else:
                b = g.lift - grp.value * np.eye(3)
                lines.append(line_new(_plane_dual_of_square_kernel(b)))
        else:
            jgrp = max(eig.groups, key=lambda t: t.algebraic - t.geometric)
            other = [t for t in eig.groups if t is not jgrp]
            ogrp = other[0]
            vj = jgrp.vectors[0]
            vo = ogrp.vectors[0]
            ref = max(abs(jgrp.value), abs(ogrp.value))
            same = abs(abs(jgrp.value) - abs(ogrp.value)) <= MULT_GROUP_TOL * ref
            lines.append(line_new(np.cross(vj, vo)))
            if not same:
                b = g.lift - jgrp.value * np.eye(3)
                lines.append(line_new(_plane_dual_of_square_kernel(b)))
    return make_estimate(lines=lines, points=points, provenance="cyclic-closed-form", notes=notes)
