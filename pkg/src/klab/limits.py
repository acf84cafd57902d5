"""Weighted line/point families approximating closed invariant sets.

A LimitEstimate is the common currency between the dynamics estimators and
the line census: a clustered family of lines and isolated points, each with
the number of raw observations merged into it, plus pencil flags marking
points where many family lines concur.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Optional, Sequence

import numpy as np

from .proj import (
    ProjLine,
    ProjPoint,
    canonicalize,
    fs_distance,
    fs_distance_lines,
    point_line_distance,
    point_new,
)

TOL_CLUSTER = 1e-6
PENCIL_THRESHOLD = 10
PENCIL_INCIDENCE_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class PencilFlag:
    """A point where at least `count` distinct family lines concur."""

    point: ProjPoint
    count: int
    members: tuple  # indices into the line list
    note: str = ""


@dataclasses.dataclass
class LimitEstimate:
    """Weighted lines and points approximating a closed invariant set."""

    lines: list  # of (ProjLine, int weight)
    points: list  # of (ProjPoint, int weight)
    pencils: list  # of PencilFlag
    provenance: str = ""
    notes: list = dataclasses.field(default_factory=list)

    def line_objects(self) -> list:
        return [l for l, _ in self.lines]

    def point_objects(self) -> list:
        return [p for p, _ in self.points]

    def is_empty(self) -> bool:
        return not self.lines and not self.points


def _greedy_cluster(vectors: list, weights: list, tol: float):
    """Greedy FS clustering of unit canonical vectors; returns (reps, weights).

    Deterministic: representatives keep first-seen order, then the list is
    sorted by quantized coordinates.  The representative of a cluster is its
    highest-weight member (first seen wins ties).
    """
    reps: list = []
    best: list = []
    wsum: list = []
    cos_tol = np.cos(tol)
    for vec, w in zip(vectors, weights):
        hit = -1
        for i, r in enumerate(reps):
            if abs(np.vdot(r, vec)) >= cos_tol:
                hit = i
                break
        if hit < 0:
            reps.append(vec)
            best.append((w, vec))
            wsum.append(w)
        else:
            wsum[hit] += w
            if w > best[hit][0]:
                best[hit] = (w, vec)
                reps[hit] = vec
    order = sorted(range(len(reps)), key=lambda i: _sort_key(reps[i]))
    return [reps[i] for i in order], [wsum[i] for i in order]


def _sort_key(vec: np.ndarray):
    q = np.round(np.concatenate([vec.real, vec.imag]) / 1e-9).astype(np.int64)
    return tuple(q.tolist())


def cluster_lines(lines: Iterable, tol: float = TOL_CLUSTER) -> list:
    """Cluster (ProjLine, weight) pairs; plain ProjLine entries get weight 1."""
    vecs, ws = [], []
    for item in lines:
        if isinstance(item, tuple):
            line, w = item
        else:
            line, w = item, 1
        vecs.append(line.dual)
        ws.append(int(w))
    reps, wsum = _greedy_cluster(vecs, ws, tol)
    return [(ProjLine(canonicalize(r)), w) for r, w in zip(reps, wsum)]


def cluster_points(points: Iterable, tol: float = TOL_CLUSTER) -> list:
    vecs, ws = [], []
    for item in points:
        if isinstance(item, tuple):
            pt, w = item
        else:
            pt, w = item, 1
        vecs.append(pt.coords)
        ws.append(int(w))
    reps, wsum = _greedy_cluster(vecs, ws, tol)
    return [(ProjPoint(canonicalize(r)), w) for r, w in zip(reps, wsum)]


def detect_pencils(
    lines: Sequence[ProjLine],
    threshold: int = PENCIL_THRESHOLD,
    tol: float = PENCIL_INCIDENCE_TOL,
    max_pair_lines: int = 800,
) -> list:
    """Points where >= threshold of the given lines concur within tol.

    Candidate base points come from pairwise meets (of the first
    max_pair_lines lines in canonical order); incidence is then counted
    against the whole family.
    """
    n = len(lines)
    if n < 2 or threshold < 2:
        return []
    duals = np.stack([l.dual for l in lines])
    m = min(n, max_pair_lines)
    ii, jj = np.triu_indices(m, k=1)
    meets = np.cross(duals[ii], duals[jj])
    norms = np.linalg.norm(meets, axis=1)
    good = norms > 1e-9
    meets = meets[good] / norms[good][:, None]
    # count incidences per candidate, clustering candidates greedily
    flags = []
    taken: list = []
    resid = np.abs(meets @ duals.T)  # (ncand, n)
    counts = (resid < tol).sum(axis=1)
    order = np.argsort(-counts, kind="stable")
    for k in order:
        c = int(counts[k])
        if c < threshold:
            break
        p = meets[k]
        if any(abs(np.vdot(t, p)) > np.cos(1e-6) for t in taken):
            continue
        taken.append(p)
        members = tuple(int(i) for i in np.nonzero(resid[k] < tol)[0])
        flags.append(
            PencilFlag(point=ProjPoint(canonicalize(p)), count=c, members=members)
        )
    return flags


def make_estimate(
    lines: Iterable = (),
    points: Iterable = (),
    provenance: str = "",
    tol: float = TOL_CLUSTER,
    pencil_threshold: int = PENCIL_THRESHOLD,
    notes: Optional[list] = None,
) -> LimitEstimate:
    """Cluster raw lines/points into a LimitEstimate and flag pencils."""
    cl = cluster_lines(lines, tol)
    cp = cluster_points(points, tol)
    pencils = detect_pencils([l for l, _ in cl], pencil_threshold)
    return LimitEstimate(
        lines=cl, points=cp, pencils=pencils, provenance=provenance, notes=list(notes or [])
    )


def merge_estimates(parts: Sequence[LimitEstimate], provenance: str, tol: float = TOL_CLUSTER,
                    pencil_threshold: int = PENCIL_THRESHOLD) -> LimitEstimate:
    lines: list = []
    points: list = []
    notes: list = []
    for p in parts:
        lines.extend(p.lines)
        points.extend(p.points)
        notes.extend(p.notes)
    return make_estimate(lines, points, provenance, tol, pencil_threshold, notes)


# ---------------------------------------------------------------------------
# distances between families

def point_to_estimate(p: ProjPoint, est: LimitEstimate) -> float:
    """FS distance from a point to the union of the estimate's lines/points."""
    best = np.pi / 2
    for q, _ in est.points:
        best = min(best, fs_distance(p, q))
    for l, _ in est.lines:
        best = min(best, point_line_distance(p, l))
    return best


def line_to_estimate(l: ProjLine, est: LimitEstimate, samples: int = 24) -> float:
    """One-sided distance from a line to an estimate.

    If the estimate contains a dual-close line this is their dual FS distance
    (which bounds the set Hausdorff distance); otherwise the line is sampled
    and each sample measured against the estimate's point set.
    """
    best = np.pi / 2
    for l2, _ in est.lines:
        best = min(best, fs_distance_lines(l, l2))
    if best < 1e-3 or (not est.points and not est.lines):
        return best
    worst = 0.0
    for p in sample_line(l, samples):
        worst = max(worst, point_to_estimate(p, est))
        if worst >= best:
            break
    return min(best, worst)


def sample_line(l: ProjLine, n: int = 24) -> list:
    """Deterministic points spread over a line (a CP^1) via a Fibonacci grid."""
    u = np.conj(l.dual)
    # orthonormal basis of the plane Hermitian-orthogonal to u
    basis = []
    for e in np.eye(3, dtype=complex):
        w = e - np.vdot(u, e) * u / np.vdot(u, u)
        for b in basis:
            w = w - np.vdot(b, w) * b
        nw = np.linalg.norm(w)
        if nw > 1e-7:
            basis.append(w / nw)
        if len(basis) == 2:
            break
    a, b = basis
    golden = (1 + np.sqrt(5)) / 2
    pts = []
    for k in range(n):
        z = (k + 0.5) / n  # cos(theta) uniform on the sphere
        theta = np.arccos(1 - 2 * z)
        phi = 2 * np.pi * k / golden
        vec = np.cos(theta / 2) * a + np.exp(1j * phi) * np.sin(theta / 2) * b
        pts.append(point_new(vec))
    return pts


def estimate_hausdorff(a: LimitEstimate, b: LimitEstimate, samples: int = 24) -> float:
    """Symmetric Hausdorff-style distance between two estimates."""
    return max(
        one_sided_distance(a, b, samples),
        one_sided_distance(b, a, samples),
    )


def one_sided_distance(a: LimitEstimate, b: LimitEstimate, samples: int = 24) -> float:
    if a.is_empty():
        return 0.0
    if b.is_empty():
        return np.pi / 2
    worst = 0.0
    for l, _ in a.lines:
        worst = max(worst, line_to_estimate(l, b, samples))
    for p, _ in a.points:
        worst = max(worst, point_to_estimate(p, b))
    return worst
