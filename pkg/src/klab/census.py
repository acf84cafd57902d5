"""Combinatorics of detected line families: Li / LiG counts and buckets.

The maximum general-position subfamily is an exact branch-and-bound over
the 3-uniform hypergraph of concurrent triples (up to 64 lines; greedy plus
local search above that, marked as a lower bound).  Census classification
coerces counts that the structure theorems exclude into the infinite
bucket, carrying a diagnostic.

kulkarni_census_filter prunes pencils whose parameter set spreads over a
two-real-dimensional region: the lines of such a pencil cannot all lie in a
limit set of a group with nonempty discontinuity region, since their union
would be dense.  Parameter sets on a circle (real-analytic arcs, Cantor
sets of Fuchsian type, finite sets) are kept.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from .limits import LimitEstimate, PencilFlag, detect_pencils
from .proj import (
    ProjLine,
    ProjPoint,
    canonicalize,
    fs_distance,
    fs_distance_lines,
    in_general_position,
    point_new,
)

CONCURRENCY_TOL = 1e-8
GUARD_BAND = (1e-10, 1e-6)
EXACT_CUTOFF = 64
INFINITE_THRESHOLD = 50
PENCIL_THRESHOLD = 10
CIRCLE_FIT_TOL = 1e-4


# ---------------------------------------------------------------------------
# concurrency structure


def concurrency_triples(lines: Sequence[ProjLine], tol: float = CONCURRENCY_TOL):
    """All concurrent triples (i, j, k) with their residuals.

    Returns (triples, ambiguous): triples concurrent at tol, and the triples
    whose residual falls in the guard band [1e-10, 1e-6] where a different
    tolerance choice could flip the answer.
    """
    n = len(lines)
    triples = []
    ambiguous = []
    if n < 3:
        return triples, ambiguous
    duals = np.stack([l.dual for l in lines])
    for i in range(n):
        for j in range(i + 1, n):
            meet = np.cross(duals[i], duals[j])
            nm = np.linalg.norm(meet)
            if nm < 1e-12:
                continue  # coincident pair; caller guards
            meet = meet / nm
            resid = np.abs(duals[j + 1:] @ meet)
            for off in np.nonzero(resid < GUARD_BAND[1])[0]:
                k = j + 1 + int(off)
                r = float(resid[off])
                if r < tol:
                    triples.append((i, j, k, r))
                if GUARD_BAND[0] <= r <= GUARD_BAND[1]:
                    ambiguous.append((i, j, k, r))
    return triples, ambiguous


@dataclasses.dataclass
class GPResult:
    size: int
    witness: list  # indices into the input family
    exact: bool
    ambiguous_triples: int


def _greedy_gp(n: int, forbidden_pairs: list) -> list:
    chosen_mask = 0
    chosen = []
    for v in range(n):
        ok = True
        for pm in forbidden_pairs[v]:
            if chosen_mask & pm == pm:
                ok = False
                break
        if ok:
            chosen.append(v)
            chosen_mask |= 1 << v
    return chosen


def _local_search_gp(n: int, forbidden_pairs: list, chosen: list, rounds: int = 4) -> list:
    best = list(chosen)
    for _ in range(rounds):
        improved = False
        best_mask = 0
        for v in best:
            best_mask |= 1 << v
        for out in range(n):
            if best_mask & (1 << out):
                continue
            # try removing one member to admit `out` plus one more
            blockers = set()
            feasible = True
            for pm in forbidden_pairs[out]:
                if best_mask & pm == pm:
                    both = [b for b in best if (1 << b) & pm]
                    if len(both) >= 2:
                        blockers.update(both)
                    if len(blockers) > 1:
                        feasible = False
                        break
            if not feasible or len(blockers) != 1:
                continue
            b = blockers.pop()
            trial_mask = (best_mask & ~(1 << b)) | (1 << out)
            trial = [v for v in best if v != b] + [out]
            for extra in range(n):
                if trial_mask & (1 << extra):
                    continue
                ok = True
                for pm in forbidden_pairs[extra]:
                    if trial_mask & pm == pm:
                        ok = False
                        break
                if ok:
                    trial.append(extra)
                    trial_mask |= 1 << extra
            if len(trial) > len(best):
                best = sorted(trial)
                improved = True
                break
        if not improved:
            break
    return best


def max_general_position(
    lines: Sequence[ProjLine],
    tol: float = CONCURRENCY_TOL,
    exact_cutoff: int = EXACT_CUTOFF,
) -> GPResult:
    """Maximum subfamily with no three concurrent lines.

    Exact branch-and-bound over the concurrency triples for families of at
    most exact_cutoff lines; greedy with local search above that (the size
    is then a lower bound and exact=False).
    """
    n = len(lines)
    for i in range(n):
        for j in range(i + 1, n):
            if fs_distance_lines(lines[i], lines[j]) <= 1e-9:
                raise ValueError("lines must be pairwise distinct")
    if n == 0:
        return GPResult(0, [], True, 0)
    triples, ambiguous = concurrency_triples(lines, tol)
    witness = _max_gp_from_triples(n, [(i, j, k) for i, j, k, _ in triples], exact_cutoff)
    return GPResult(
        size=len(witness.witness),
        witness=witness.witness,
        exact=witness.exact,
        ambiguous_triples=len(ambiguous),
    )


@dataclasses.dataclass
class _GPWitness:
    witness: list
    exact: bool


def _max_gp_from_triples(n: int, triples: list, exact_cutoff: int) -> _GPWitness:
    # forbidden_pairs[v]: bitmasks (a|b) such that {a, b, v} is concurrent,
    # for a, b < v (vertices processed in increasing order)
    forbidden_pairs: list = [[] for _ in range(n)]
    all_pairs: list = [[] for _ in range(n)]
    for i, j, k in triples:
        forbidden_pairs[k].append((1 << i) | (1 << j))
        all_pairs[i].append((1 << j) | (1 << k))
        all_pairs[j].append((1 << i) | (1 << k))
        all_pairs[k].append((1 << i) | (1 << j))
    greedy = _greedy_gp(n, all_pairs)
    greedy = _local_search_gp(n, all_pairs, greedy)
    if n > exact_cutoff:
        return _GPWitness(witness=sorted(greedy), exact=False)

    best = {"size": len(greedy), "mask": sum(1 << v for v in greedy)}

    def feasible(mask: int, v: int) -> bool:
        for pm in all_pairs[v]:
            if mask & pm == pm:
                return False
        return True

    def rec(v: int, mask: int, count: int):
        if count + (n - v) <= best["size"]:
            return
        if v == n:
            if count > best["size"]:
                best["size"] = count
                best["mask"] = mask
            return
        if feasible(mask, v):
            rec(v + 1, mask | (1 << v), count + 1)
        rec(v + 1, mask, count)

    rec(0, 0, 0)
    witness = [v for v in range(n) if best["mask"] & (1 << v)]
    return _GPWitness(witness=witness, exact=True)


# ---------------------------------------------------------------------------
# vertices


def detect_vertices(
    lines: Sequence[ProjLine],
    witness: Sequence[ProjLine],
    pencil_threshold: int = PENCIL_THRESHOLD,
    tol: float = CONCURRENCY_TOL,
) -> list:
    """Meets of two witness lines through which many family lines pass."""
    if not in_general_position(list(witness)):
        raise ValueError("witness family must be in general position")
    if len(lines) == 0 or len(witness) < 2:
        return []
    duals = np.stack([l.dual for l in lines])
    found: list = []
    for i in range(len(witness)):
        for j in range(i + 1, len(witness)):
            meet = np.cross(witness[i].dual, witness[j].dual)
            nm = np.linalg.norm(meet)
            if nm < 1e-12:
                continue
            meet = meet / nm
            count = int(np.sum(np.abs(duals @ meet) < tol))
            if count >= pencil_threshold:
                p = point_new(meet)
                if all(fs_distance(p, q) > 1e-6 for q in found):
                    found.append(p)
    return sorted(found, key=lambda p: tuple(np.round(
        np.concatenate([p.coords.real, p.coords.imag]) / 1e-9).astype(np.int64).tolist()))


# ---------------------------------------------------------------------------
# pencil-parameter filter (Kulkarni census family)


def _pencil_parameters(base: ProjPoint, members: Sequence[ProjLine]) -> np.ndarray:
    """Stereographic S^2 points of the pencil's lines inside their dual plane."""
    b = base.coords
    # Hermitian-orthonormal basis of the dual plane {n : n . b = 0}
    bc = np.conj(b)
    basis = []
    for e in np.eye(3, dtype=complex):
        w = e - np.vdot(bc, e) * bc
        for u in basis:
            w = w - np.vdot(u, w) * u
        nw = np.linalg.norm(w)
        if nw > 1e-7:
            basis.append(w / nw)
        if len(basis) == 2:
            break
    u1, u2 = basis
    pts = []
    for l in members:
        a = np.vdot(u1, l.dual)
        c = np.vdot(u2, l.dual)
        t = np.array([a, c])
        t = t / np.linalg.norm(t)
        # point on S^2 for the CP^1 parameter [a : c]
        z0, z1 = t[0], t[1]
        pts.append(
            np.array(
                [
                    2 * np.real(np.conj(z0) * z1),
                    2 * np.imag(np.conj(z0) * z1),
                    abs(z0) ** 2 - abs(z1) ** 2,
                ]
            )
        )
    return np.stack(pts)


def pencil_is_thin(base: ProjPoint, members: Sequence[ProjLine], fit_tol: float = CIRCLE_FIT_TOL) -> tuple:
    """Whether the pencil parameters lie on a circle of the parameter sphere.

    Circles on S^2 are exactly the plane sections, and cover real-analytic
    arcs (real parameters) including lines through infinity.  Returns
    (is_thin, residual).
    """
    pts = _pencil_parameters(base, members)
    if len(pts) < 5:
        return True, 0.0
    centroid = pts.mean(axis=0)
    cov = (pts - centroid).T @ (pts - centroid)
    w, v = np.linalg.eigh(cov)
    normal = v[:, 0]
    resid = np.abs((pts - centroid) @ normal)
    r = float(resid.max())
    return r <= fit_tol, r


def kulkarni_census_filter(
    est: LimitEstimate,
    pencil_threshold: int = PENCIL_THRESHOLD,
    fit_tol: float = CIRCLE_FIT_TOL,
) -> tuple:
    """Prune pencils whose parameter sets spread over a 2D region.

    A pencil of limit lines fat enough to fill an open set of the dual
    plane would force the limit set to be everything, contradicting a
    nonempty discontinuity region; such pencils are artifacts of the
    equicontinuity complement and are removed from the census family.
    Lines shared with a surviving pencil (or outside every fat pencil)
    are kept.  Returns (filtered estimate, diagnostics list).
    """
    lines = est.line_objects()
    pencils = detect_pencils(lines, pencil_threshold)
    diagnostics = []
    drop: set = set()
    keep_force: set = set()
    surviving_pencils = []
    for flag in pencils:
        thin, resid = pencil_is_thin(flag.point, [lines[i] for i in flag.members], fit_tol)
        if thin:
            surviving_pencils.append(flag)
            keep_force.update(flag.members)
        else:
            diagnostics.append(
                "pencil at %s pruned: parameter spread %.3g exceeds circle-fit tolerance %g"
                % (flag.point, resid, fit_tol)
            )
            drop.update(flag.members)
    kept = [
        (l, w)
        for i, (l, w) in enumerate(est.lines)
        if i not in drop or i in keep_force
    ]
    index_map = {}
    for new_i, (l, w) in enumerate(kept):
        for old_i, (l2, _) in enumerate(est.lines):
            if l2 is l:
                index_map[old_i] = new_i
                break
    new_pencils = [
        PencilFlag(
            point=f.point,
            count=f.count,
            members=tuple(index_map[i] for i in f.members if i in index_map),
            note=f.note,
        )
        for f in surviving_pencils
    ]
    filtered = LimitEstimate(
        lines=kept,
        points=list(est.points),
        pencils=new_pencils,
        provenance=est.provenance + " | census-filtered",
        notes=list(est.notes) + diagnostics,
    )
    return filtered, diagnostics


# ---------------------------------------------------------------------------
# census classification


@dataclasses.dataclass
class CensusReport:
    """Line census of a limit estimate, bucketed per the structure theorems."""

    raw_line_count: int
    li_bucket: object  # int 1..3 or 'inf'
    lig_value: int
    lig_bucket: object  # int 1..4 or 'inf'
    vertices: list  # of ProjPoint
    witness: list  # of ProjLine
    pencil_count: int
    exact: bool
    diagnostics: list
    ambiguous: bool
    alternate_buckets: Optional[tuple] = None


def classify_census(
    est: LimitEstimate,
    infinite_threshold: int = INFINITE_THRESHOLD,
    pencil_threshold: int = PENCIL_THRESHOLD,
    prev_est: Optional[LimitEstimate] = None,
    vertex_source: Optional[LimitEstimate] = None,
) -> CensusReport:
    """Classify a line family into the Li and LiG buckets.

    Finite counts the theorems exclude (Li in 4..threshold-1, LiG >= 5) are
    coerced to the infinite bucket with a diagnostic.  When prev_est is
    given, small counts are cross-checked against the previous enumeration
    radius for stability.  Vertices are detected on vertex_source when
    given (the unfiltered family), else on est itself.
    """
    lines = est.line_objects()
    n = len(lines)
    diagnostics = list(est.notes)
    pencil_flag = len(est.pencils) > 0

    li_bucket: object
    if n >= infinite_threshold or pencil_flag:
        li_bucket = "inf"
        if pencil_flag and n < infinite_threshold:
            diagnostics.append("li coerced to infinite by pencil flag")
    elif n <= 3:
        li_bucket = n
        if prev_est is not None and len(prev_est.lines) != n:
            diagnostics.append(
                "line count changed between the last two radii (%d -> %d)"
                % (len(prev_est.lines), n)
            )
    else:
        li_bucket = "inf"
        diagnostics.append(
            "theorem-coerced: stable finite count %d outside {1,2,3} reported as infinite" % n
        )

    ambiguous = False
    alternate = None
    if n == 0:
        gp = GPResult(0, [], True, 0)
    else:
        gp = max_general_position(lines)
        if gp.ambiguous_triples:
            lo = max_general_position(lines, tol=GUARD_BAND[0])
            hi = max_general_position(lines, tol=GUARD_BAND[1])
            if lo.size != hi.size:
                ambiguous = True
                alternate = (_lig_bucket(lo.size), _lig_bucket(hi.size))
                diagnostics.append(
                    "guard band: %d concurrency residuals in [1e-10, 1e-6]; "
                    "buckets differ between interpretations" % gp.ambiguous_triples
                )
    lig_value = gp.size
    lig_bucket = _lig_bucket(lig_value)
    if lig_bucket == "inf" and lig_value >= 5:
        diagnostics.append(
            "theorem-coerced: general-position count %d outside {1,2,3,4} reported as infinite"
            % lig_value
        )
    if not gp.exact:
        diagnostics.append("general-position value is a lower bound (family above exact cutoff)")

    vsrc = vertex_source if vertex_source is not None else est
    vlines = vsrc.line_objects()
    if len(vlines) >= 2:
        vgp = max_general_position(vlines) if vsrc is not est else gp
        vwitness = [vlines[i] for i in vgp.witness]
        vertices = detect_vertices(vlines, vwitness, pencil_threshold)
    else:
        vertices = []

    return CensusReport(
        raw_line_count=n,
        li_bucket=li_bucket,
        lig_value=lig_value,
        lig_bucket=lig_bucket,
        vertices=vertices,
        witness=[lines[i] for i in gp.witness],
        pencil_count=len(est.pencils),
        exact=gp.exact,
        diagnostics=diagnostics,
        ambiguous=ambiguous,
        alternate_buckets=alternate,
    )


def _lig_bucket(value: int):
    if value <= 4:
        return value
    return "inf"
