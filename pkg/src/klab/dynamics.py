"""Group-level dynamics: word balls, limits of normalized lifts, Kulkarni sets.

The central numerical device is the power track: for a ball element u whose
square is still inside the ball (an escaping direction witnessed by the
enumeration), the sequence of max-normalized powers u^m is continued well
past the ball and extrapolated (Aitken for geometric tails, Richardson in
1/m for parabolic ones).  Limits of rotating families, where the matrices
themselves do not converge, are recovered through the kernel/image
projectors of the singular value decomposition, which do converge.

Discreteness of the input group is an assumption, not a theorem we check: a
heuristic warning fires when two distinct ball elements are suspiciously
close, nothing more.
"""

from __future__ import annotations

import dataclasses
import os
from typing import Optional, Sequence, Union

import numpy as np

from ._mat3 import eigvals3_batch, svd3
from .elements import (
    GroupElement,
    classify,
    compose,
    cyclic_limit_set,
    eigen3,
    element_new,
    fixed_points,
    identity_element,
    inverse,
    is_identity,
    order_of,
    pointwise_fixed_lines,
)
from .errors import CapExceeded, KlabError
from .limits import (
    LimitEstimate,
    estimate_hausdorff,
    make_estimate,
    merge_estimates,
    point_to_estimate,
)
from .proj import ProjLine, ProjPoint, point_new
from .pseudo import PseudoProjMap, max_normalize, psp_key, psp_new

DEFAULT_RADIUS = 10
DEFAULT_CAP = 200_000
DEFAULT_EPS_CLUSTER = 1e-3
KEY_GRID = 1e-7
BALL_EQ_TOL = 1e-9
NONDISCRETE_BAND = (1e-9, 1e-6)
TRACK_MAX_POWER = 400
MAX_TRACKS = 4000


# ---------------------------------------------------------------------------
# group specifications


@dataclasses.dataclass
class GroupSpec:
    """A finitely generated subgroup of PSL(3,C), given by generators."""

    name: str
    generators: list  # of GroupElement
    metadata: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not self.generators:
            raise KlabError("generator list must be non-empty")
        for g in self.generators:
            if is_identity(g):
                raise KlabError("generators must not be the identity")


def make_group_spec(name: str, matrices: Sequence, metadata: Optional[dict] = None) -> GroupSpec:
    return GroupSpec(
        name=name,
        generators=[element_new(np.asarray(m, dtype=complex)) for m in matrices],
        metadata=dict(metadata or {}),
    )


# ---------------------------------------------------------------------------
# word-ball enumeration


def _canon9_batch(flats: np.ndarray) -> np.ndarray:
    """Canonical unit representatives of rows of a (n, 9) complex array.

    The phase pivot tolerates 1e-9 modulus ties so that elements reached via
    different word paths canonicalize identically.
    """
    norms = np.linalg.norm(flats, axis=1)
    u = flats / norms[:, None]
    mods = np.abs(u)
    slack = 1e-9
    maxes = mods.max(axis=1)
    pivot = np.argmax(mods >= (maxes - slack)[:, None], axis=1)
    pv = u[np.arange(len(u)), pivot]
    phase = np.conj(pv) / np.abs(pv)
    return u * phase[:, None]


def _keys_for(canons: np.ndarray, grid: float = KEY_GRID):
    """Two offset-grid quantized keys per row; equal elements share at least one."""
    x = np.concatenate([canons.real, canons.imag], axis=1) / grid
    k1 = np.round(x).astype(np.int64)
    k2 = np.floor(x).astype(np.int64)
    return k1, k2


@dataclasses.dataclass
class BallEnumeration:
    """Deduplicated word ball of a finitely generated group."""

    spec: GroupSpec
    radius: int
    lifts: np.ndarray  # (n, 3, 3) unit-determinant lifts
    canons: np.ndarray  # (n, 9) canonical unit representatives
    words: list  # tuples of signed generator indices (1-based)
    lengths: np.ndarray  # (n,) word lengths
    truncated: bool
    stats: dict

    def __len__(self):
        return len(self.words)

    def element(self, i: int) -> GroupElement:
        lift = self.lifts[i].copy()
        lift.flags.writeable = False
        return GroupElement(lift=lift, canon=self.canons[i].reshape(3, 3))

    def letters(self) -> list:
        """The alphabet: generators then inverses, as (signed index, lift)."""
        out = []
        for i, g in enumerate(self.spec.generators):
            out.append((i + 1, g.lift))
        for i, g in enumerate(self.spec.generators):
            out.append((-(i + 1), inverse(g).lift))
        return out


def enumerate_ball(
    spec: GroupSpec,
    radius: int = DEFAULT_RADIUS,
    cap: int = DEFAULT_CAP,
    strict_cap: bool = False,
) -> BallEnumeration:
    """Breadth-first closure over generators and inverses up to word length radius.

    Deduplication hashes quantized canonical representatives on two offset
    grids and confirms candidates by exact Fubini-Study distance, so no two
    stored elements are projectively equal within 1e-9.  Hitting the cap
    truncates the enumeration and sets the flag (raises CapExceeded when
    strict_cap is set).
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if cap < 1:
        raise ValueError("cap must be >= 1")

    ident = identity_element()
    all_lifts = [np.asarray(ident.lift)]
    all_canons = [_canon9_batch(np.asarray(ident.lift).reshape(1, 9))[0]]
    words: list = [()]
    lengths = [0]

    map1: dict = {}
    map2: dict = {}
    coarse: dict = {}
    near_pairs = 0

    def register(idx: int, kb1: bytes, kb2: bytes, ck: bytes):
        nonlocal near_pairs
        map1.setdefault(kb1, []).append(idx)
        map2.setdefault(kb2, []).append(idx)
        prev = coarse.get(ck)
        if prev is not None:
            c = abs(np.vdot(all_canons[prev], all_canons[idx]))
            d = np.arccos(min(1.0, c))
            if NONDISCRETE_BAND[0] < d < NONDISCRETE_BAND[1]:
                near_pairs += 1
        else:
            coarse[ck] = idx

    def coarse_key(k1_row: np.ndarray) -> bytes:
        return np.round(k1_row.astype(float) * (KEY_GRID / 1e-5)).astype(np.int64).tobytes()

    k1, k2 = _keys_for(all_canons[0].reshape(1, 9))
    register(0, k1[0].tobytes(), k2[0].tobytes(), coarse_key(k1[0]))

    letters = []
    for i, g in enumerate(spec.generators):
        letters.append((i + 1, np.asarray(g.lift)))
    for i, g in enumerate(spec.generators):
        letters.append((-(i + 1), np.asarray(inverse(g).lift)))

    truncated = False
    dup_hits = 0
    frontier = [0]
    for level in range(1, radius + 1):
        if truncated or not frontier:
            break
        parent_lifts = np.stack([all_lifts[i] for i in frontier])
        new_frontier: list = []
        for sign, lmat in letters:
            prods = parent_lifts @ lmat
            # renormalize determinants (drift control) and canonicalize in bulk
            dets = (
                prods[:, 0, 0] * (prods[:, 1, 1] * prods[:, 2, 2] - prods[:, 1, 2] * prods[:, 2, 1])
                - prods[:, 0, 1] * (prods[:, 1, 0] * prods[:, 2, 2] - prods[:, 1, 2] * prods[:, 2, 0])
                + prods[:, 0, 2] * (prods[:, 1, 0] * prods[:, 2, 1] - prods[:, 1, 1] * prods[:, 2, 0])
            )
            prods = prods / (dets ** (1.0 / 3.0))[:, None, None]
            canons = _canon9_batch(prods.reshape(len(prods), 9))
            k1, k2 = _keys_for(canons)
            # drop FS-confirmed duplicate keys inside the batch first (cheap, common)
            _, first_pos, inv = np.unique(k1, axis=0, return_index=True, return_inverse=True)
            rep_of = first_pos[inv]
            dots = np.abs(np.einsum("ij,ij->i", np.conj(canons[rep_of]), canons))
            confirmed = (np.arange(len(prods)) != rep_of) & (dots >= np.cos(BALL_EQ_TOL))
            dup_hits += int(confirmed.sum())
            batch_rows = np.nonzero(~confirmed)[0]
            for row in batch_rows:
                kb1 = k1[row].tobytes()
                kb2 = k2[row].tobytes()
                found = -1
                for m, kb in ((map1, kb1), (map2, kb2)):
                    bucket = m.get(kb)
                    if bucket is None:
                        continue
                    for cand in bucket:
                        c = abs(np.vdot(all_canons[cand], canons[row]))
                        if c >= 1.0 or np.arccos(min(1.0, c)) < BALL_EQ_TOL:
                            found = cand
                            break
                    if found >= 0:
                        break
                if found >= 0:
                    dup_hits += 1
                    continue
                if len(all_lifts) >= cap:
                    truncated = True
                    break
                idx = len(all_lifts)
                all_lifts.append(prods[row])
                all_canons.append(canons[row])
                words.append(words[frontier[row]] + (sign,))
                lengths.append(level)
                register(idx, kb1, kb2, coarse_key(k1[row]))
                new_frontier.append(idx)
            if truncated:
                break
        frontier = new_frontier

    stats = {
        "elements": len(all_lifts),
        "duplicates_merged": dup_hits,
        "near_pairs": near_pairs,
        "nondiscreteness_warning": near_pairs > 0,
    }
    ball = BallEnumeration(
        spec=spec,
        radius=radius,
        lifts=np.stack(all_lifts),
        canons=np.stack(all_canons),
        words=words,
        lengths=np.asarray(lengths),
        truncated=truncated,
        stats=stats,
    )
    if truncated and strict_cap:
        raise CapExceeded("word ball exceeded cap %d" % cap, partial=ball)
    return ball


def sub_ball(ball: BallEnumeration, radius: int) -> BallEnumeration:
    """Restriction of an enumeration to a smaller radius (BFS prefix)."""
    if radius >= ball.radius:
        return ball
    keep = int(np.searchsorted(ball.lengths, radius + 0.5))
    return BallEnumeration(
        spec=ball.spec,
        radius=radius,
        lifts=ball.lifts[:keep],
        canons=ball.canons[:keep],
        words=ball.words[:keep],
        lengths=ball.lengths[:keep],
        truncated=ball.truncated,
        stats=dict(ball.stats, elements=keep, restricted_from=ball.radius),
    )


def _lookup(ball_index: dict, canon: np.ndarray) -> int:
    """Index of a canonical 9-vector in the ball, or -1."""
    k1, k2 = _keys_for(canon.reshape(1, 9))
    for m, k in ((ball_index["map1"], k1), (ball_index["map2"], k2)):
        bucket = m.get(k[0].tobytes())
        if bucket is None:
            continue
        for cand, cvec in bucket:
            c = abs(np.vdot(cvec, canon))
            if c >= 1.0 or np.arccos(min(1.0, c)) < BALL_EQ_TOL:
                return cand
    return -1


def _build_index(ball: BallEnumeration) -> dict:
    map1: dict = {}
    map2: dict = {}
    k1, k2 = _keys_for(ball.canons.reshape(len(ball.canons), 9))
    for i in range(len(ball.canons)):
        map1.setdefault(k1[i].tobytes(), []).append((i, ball.canons[i]))
        map2.setdefault(k2[i].tobytes(), []).append((i, ball.canons[i]))
    return {"map1": map1, "map2": map2}


# ---------------------------------------------------------------------------
# sequence extrapolation


def _phase_align(seq: list) -> list:
    """Rescale each term by a unit scalar so <term, last> is real positive."""
    ref = seq[-1]
    out = []
    for s in seq:
        ip = np.vdot(s, ref)
        if abs(ip) > 1e-300:
            s = s * (ip / abs(ip))
        out.append(s / np.linalg.norm(s))
    return out


def _aitken_once(seq: list) -> list:
    out = []
    for i in range(len(seq) - 2):
        s0, s1, s2 = seq[i], seq[i + 1], seq[i + 2]
        d1 = s1 - s0
        d2 = s2 - s1
        den = d2 - d1
        step = np.where(np.abs(den) > 1e-300, d2 * d2 / np.where(np.abs(den) > 1e-300, den, 1.0), 0.0)
        out.append(s2 - step)
    return out


def _extrapolate_aitken(seq: list):
    """Iterated Aitken on the consecutive tail; handles geometric tails."""
    cur = list(seq)
    prev_val = cur[-1]
    err = np.inf
    for _ in range(5):
        if len(cur) < 3:
            break
        cur = _aitken_once(cur)
        val = cur[-1]
        e = float(np.linalg.norm(val - prev_val))
        if not np.isfinite(e):
            break
        prev_val = val
        err = e
        if err < 1e-15:
            break
    return prev_val, err


def _extrapolate_richardson(ms: list, seq: list):
    """Romberg-style Neville in x = 1/m over a geometric ladder of indices.

    Handles tails whose error is smooth in 1/m (parabolic convergence).  The
    nodes must span a decent ratio or the extrapolation to 0 is hopeless.
    """
    m_last = ms[-1]
    targets = [m_last / (2 ** (k / 2.0)) for k in range(10)]
    idx = sorted({min(range(len(ms)), key=lambda i: abs(ms[i] - t)) for t in targets})
    if len(idx) < 4 or ms[idx[-1]] < 3.9 * ms[idx[0]]:
        return seq[-1], np.inf
    xs = [1.0 / ms[i] for i in idx]
    tab = [seq[i].astype(complex) for i in idx]
    prev_last = tab[-1]
    err = np.inf
    for j in range(1, len(tab)):
        new = []
        for i in range(len(tab) - 1):
            x0, x1 = xs[i], xs[i + j]
            new.append((x0 * tab[i + 1] - x1 * tab[i]) / (x0 - x1))
        tab = new
        e = float(np.linalg.norm(tab[-1] - prev_last))
        prev_last = tab[-1]
        err = e
    return prev_last, err


def _extrapolate(ms: list, seq: list):
    """Best-effort limit of a matrix/projector sequence with an error estimate.

    Tries iterated Aitken (geometric tails) and ladder Richardson (powers of
    1/m); candidates are validated against the plausible remaining sum of the
    raw tail, and the raw last term is the fallback.
    """
    if len(seq) == 1:
        return seq[0], np.inf
    d_last = float(np.linalg.norm(seq[-1] - seq[-2]))
    if d_last < 1e-14:
        return seq[-1], d_last
    m_last = ms[-1]
    # remaining-tail bound: ~d_last/(1-rho) geometric, ~m*d_last for 1/m tails,
    # with a 10x safety factor for the constants
    bound = 10.0 * d_last * (m_last + 5.0)
    cands = []
    tail = seq[-24:]
    val_a, err_a = _extrapolate_aitken(tail)
    cands.append((3.0 * err_a, err_a, val_a))  # slight penalty: Aitken lies on 1/m tails
    if len(seq) >= 6:
        val_r, err_r = _extrapolate_richardson(ms, seq)
        cands.append((err_r, err_r, val_r))
    best = None
    for pen, err, val in cands:
        if not (np.isfinite(pen) and np.all(np.isfinite(val))):
            continue
        if float(np.linalg.norm(val - seq[-1])) > bound:
            continue
        if best is None or pen < best[0]:
            best = (pen, err, val)
    if best is None:
        return seq[-1], bound
    return best[2], max(best[1], 1e-17)


# ---------------------------------------------------------------------------
# power tracks


def _corank_of(s: np.ndarray) -> int:
    """0, 1 or 2 dying singular directions, judged by relative gaps."""
    if s[0] <= 0:
        return 0
    r1 = s[1] / s[0]
    r2 = s[2] / s[1] if s[1] > 0 else 0.0
    if r1 < 0.2:
        return 2
    if r2 < 0.2:
        return 1
    return 0


def _snap_projector(p: np.ndarray, dim: int) -> Optional[np.ndarray]:
    """Round a near-projector Hermitian matrix to an exact rank-dim projector."""
    h = (p + p.conj().T) / 2.0
    from ._mat3 import _hermitian_eigvecs3, hermitian_eigvals3

    w = hermitian_eigvals3(h)
    v = _hermitian_eigvecs3(h, w)
    cols = v[:, :dim]
    return cols @ cols.conj().T


@dataclasses.dataclass
class TrackLimit:
    map: PseudoProjMap
    word: tuple
    direction: int
    err: float
    provenance: str


def track_limits(u: GroupElement, word: tuple = (), m_max: int = TRACK_MAX_POWER) -> list:
    """Limits of the normalized powers u^m and u^-m, refined past the ball.

    Returns zero, one or two TrackLimit records (finite-order elements give
    none).  The matrix sequence is extrapolated when it converges; rotating
    families fall back to extrapolating the kernel/image projectors, which
    do converge for escaping tracks.  Extrapolated projectors are validated
    against the raw tail before they are trusted.
    """
    out = []
    for direction in (+1, -1):
        base = u if direction > 0 else inverse(u)
        seq_m: list = []
        seq: list = []
        p = max_normalize(base.lift)
        first = p / np.linalg.norm(p)
        periodic = False
        prev = None
        for m in range(1, m_max + 1):
            if m > 1:
                p = max_normalize(p @ base.lift)
            cur = p / np.linalg.norm(p)
            if m > 1:
                ip = abs(np.vdot(cur, first))
                if np.arccos(min(1.0, ip)) < 1e-12:
                    periodic = True
                    break
            seq_m.append(m)
            seq.append(cur)
            if prev is not None:
                ipp = abs(np.vdot(cur, prev))
                if np.arccos(min(1.0, ipp)) < 1e-15 and m > 16:
                    break
            prev = cur
        if periodic:
            continue  # finite order: no escaping limit in either direction
        aligned = _phase_align(seq)
        mat, mat_err = _extrapolate(seq_m, aligned)

        # projector refinement at a geometric ladder of powers plus the tail
        n = len(seq)
        ladder = sorted(
            {min(n - 1, max(0, int(round(n / 2 ** (k / 2.0))) - 1)) for k in range(14)}
            | set(range(max(0, n - 10), n))
        )
        coranks = []
        right_projs = []
        left_projs = []
        proj_ms = []
        for i in ladder:
            sv = svd3(seq[i])
            k = _corank_of(sv.s)
            coranks.append(k)
            if k > 0:
                vr = sv.v[:, 3 - k:]
                ul = sv.u[:, 3 - k:]
                right_projs.append((seq_m[i], k, vr @ vr.conj().T))
                left_projs.append((seq_m[i], k, ul @ ul.conj().T))
        corank = coranks[-1] if coranks else 0
        stable = corank > 0 and all(c == corank for c in coranks[-4:])
        if stable:
            rp = [(m, p) for m, k, p in right_projs if k == corank]
            lp = [(m, p) for m, k, p in left_projs if k == corank]
            if len(rp) >= 3:
                pr, pr_err = _extrapolate([m for m, _ in rp], [p for _, p in rp])
                pl, pl_err = _extrapolate([m for m, _ in lp], [p for _, p in lp])
                # coarse sanity guard against runaway extrapolation only
                if float(np.linalg.norm(pr - rp[-1][1])) > 0.2:
                    pr, pr_err = rp[-1][1], float(np.linalg.norm(rp[-1][1] - rp[-2][1]))
                    pl, pl_err = lp[-1][1], pr_err
                pr = _snap_projector(pr, corank)
                pl = _snap_projector(pl, corank)
                eye = np.eye(3, dtype=complex)
                cleaned = (eye - pl) @ mat @ (eye - pr)
                if np.max(np.abs(cleaned)) > 1e-8:
                    mat = cleaned
                    mat_err = max(min(mat_err, pr_err + pl_err), 1e-17)
        try:
            pm = psp_new(mat)
        except KlabError:
            continue
        if pm.rank == 3:
            continue  # not an escaping limit we can certify
        out.append(
            TrackLimit(
                map=pm,
                word=word,
                direction=direction,
                err=float(mat_err),
                provenance="power-track",
            )
        )
    return out


# ---------------------------------------------------------------------------
# accumulation of limits


@dataclasses.dataclass
class AccumulateResult:
    maps: list  # of PseudoProjMap
    weights: list
    meta: list  # parallel metadata dicts
    tracks_examined: int
    notes: list


def _moduli_spread(ms: np.ndarray) -> np.ndarray:
    """max/min eigenvalue modulus per matrix of a stack (vectorized screen)."""
    ev = eigvals3_batch(ms)
    mods = np.abs(ev)
    mx = mods.max(axis=1)
    mn = np.where(mods.min(axis=1) <= 0, 1e-300, mods.min(axis=1))
    return mx / mn


def accumulate(
    ball: BallEnumeration,
    eps_cluster: float = DEFAULT_EPS_CLUSTER,
    max_tracks: int = MAX_TRACKS,
) -> AccumulateResult:
    """Estimate Lim(Gamma): limit points of max-normalized lifts.

    Escaping directions are witnessed inside the ball (an element together
    with its square), then refined by off-ball powers and extrapolation.
    A raw clustering pass over the normalized ball elements is kept as a
    safety net for escaping sequences that are not power tracks; its
    representatives only count when they are genuinely rank-deficient.
    Rank-3 maps are never returned.
    """
    notes: list = []
    n = len(ball)
    index = _build_index(ball)
    radius = ball.radius

    # --- power tracks seeded by (u, u^2) both in the ball
    candidates = []
    if n > 1:
        spread = _moduli_spread(ball.lifts)
        order = np.lexsort((np.arange(n), ball.lengths))
        seen_tracks = set()
        for i in order:
            L = int(ball.lengths[i])
            if L == 0 or 2 * L > radius + 1:
                continue
            u = ball.element(int(i))
            sq = compose(u, u)
            j = _lookup(index, sq.canon.reshape(-1))
            if j < 0:
                continue
            # escaping evidence: the square stays in the ball and the track
            # reaches the boundary zone
            max_exp = radius // max(L, 1)
            if max_exp * L < radius - 1 or max_exp < 2:
                continue
            inv_u = inverse(u)
            ku = psp_key(psp_new(u.lift))
            kinv = psp_key(psp_new(inv_u.lift))
            pair_key = min(ku, kinv)
            if pair_key in seen_tracks:
                continue
            seen_tracks.add(pair_key)
            candidates.append((L, int(i), u))
            if len(candidates) >= max_tracks:
                notes.append("track cap %d reached" % max_tracks)
                break

    maps: list = []
    meta: list = []
    tracked_indices: set = set()
    for L, i, u in candidates:
        # cheap finite-order screen before powering
        if float(_moduli_spread(u.lift.reshape(1, 3, 3))[0]) < 1 + 1e-9:
            if order_of(u, k_max=24) is not None:
                continue
        limits = track_limits(u, word=ball.words[i])
        if limits:
            # in-ball powers of a tracked element are explained by its limits;
            # keep them away from the raw safety net below
            for base in (u, inverse(u)):
                p = base
                m = 1
                while m * L <= radius:
                    j = _lookup(index, p.canon.reshape(-1))
                    if j >= 0:
                        tracked_indices.add(j)
                    m += 1
                    if m * L > radius:
                        break
                    p = compose(p, base)
        for tl in limits:
            maps.append(tl.map)
            meta.append(
                {
                    "provenance": tl.provenance,
                    "word": tl.word,
                    "direction": tl.direction,
                    "err": tl.err,
                }
            )

    # --- raw clustering safety net (vectorized greedy assignment)
    normed = ball.canons / np.linalg.norm(ball.canons, axis=1)[:, None] if n else None
    cos_tol = np.cos(eps_cluster)
    max_reps = 6000
    rep_mat = np.zeros((max_reps, 9), dtype=complex)
    rep_member_best: list = []  # (longest word length, element index) per cluster
    nreps = 0
    stopped = False
    for i in range(n):
        vec = normed[i]
        hit = -1
        if nreps:
            dots = np.abs(rep_mat[:nreps] @ np.conj(vec))
            k = int(np.argmax(dots))
            if dots[k] >= cos_tol:
                hit = k
        if hit < 0:
            if nreps >= max_reps:
                if not stopped:
                    notes.append("raw clustering rep cap reached")
                    stopped = True
                continue
            rep_mat[nreps] = vec
            rep_member_best.append((int(ball.lengths[i]), i))
            nreps += 1
        else:
            if int(ball.lengths[i]) > rep_member_best[hit][0]:
                rep_member_best[hit] = (int(ball.lengths[i]), i)
    for longest, best in rep_member_best:
        if longest < radius - 1:
            continue  # not an escaping-looking cluster
        if best in tracked_indices:
            continue  # partially-converged power of a tracked element
        pm = psp_new(ball.lifts[best])
        if pm.rank < 3:
            maps.append(pm)
            meta.append({"provenance": "raw-cluster", "word": ball.words[best], "err": np.nan})

    # --- deduplicate limits
    final_maps: list = []
    final_w: list = []
    final_meta: list = []
    for pm, md in zip(maps, meta):
        hit = -1
        for k, fm in enumerate(final_maps):
            c = abs(np.vdot(fm.matrix.reshape(-1), pm.matrix.reshape(-1)))
            c = c / (np.linalg.norm(fm.matrix) * np.linalg.norm(pm.matrix))
            if np.arccos(min(1.0, c)) < 1e-6:
                hit = k
                break
        if hit < 0:
            final_maps.append(pm)
            final_w.append(1)
            final_meta.append(md)
        else:
            final_w[hit] += 1
            if md.get("err", np.inf) < final_meta[hit].get("err", np.inf):
                final_meta[hit] = md

    order = sorted(range(len(final_maps)), key=lambda k: psp_key(final_maps[k]))
    return AccumulateResult(
        maps=[final_maps[k] for k in order],
        weights=[final_w[k] for k in order],
        meta=[final_meta[k] for k in order],
        tracks_examined=len(candidates),
        notes=notes,
    )


# ---------------------------------------------------------------------------
# equicontinuity complement


def eq_complement(
    source: Union[GroupSpec, BallEnumeration],
    radius: int = DEFAULT_RADIUS,
    eps_cluster: float = DEFAULT_EPS_CLUSTER,
    cap: int = DEFAULT_CAP,
    pencil_threshold: int = 10,
) -> LimitEstimate:
    """Union of the kernels of the detected limits of normalized lifts.

    By the equicontinuity description this family approximates the
    complement of Eq(Gamma): lines from rank-1 limits, isolated points from
    rank-2 limits, with pencil flags where many kernel lines concur.
    """
    if radius < 2:
        raise ValueError("radius must be >= 2")
    ball = source if isinstance(source, BallEnumeration) else enumerate_ball(source, radius, cap)
    acc = accumulate(ball, eps_cluster)
    lines = []
    points = []
    for pm, w in zip(acc.maps, acc.weights):
        if isinstance(pm.kernel, ProjLine):
            lines.append((pm.kernel, w))
        elif isinstance(pm.kernel, ProjPoint):
            points.append((pm.kernel, w))
    est = make_estimate(
        lines=lines,
        points=points,
        provenance="eq-complement(kernels of Lim at radius %d)" % ball.radius,
        pencil_threshold=pencil_threshold,
        notes=acc.notes,
    )
    if ball.stats.get("nondiscreteness_warning"):
        est.notes.append("ball contains suspiciously close elements; group may be non-discrete")
    return est


# ---------------------------------------------------------------------------
# Kulkarni estimates


@dataclasses.dataclass
class SeedConfig:
    """Sampling controls for the Kulkarni estimators (deterministic)."""

    n_seeds: int = 64
    ball_radius: float = 1e-2
    sphere_samples: int = 8
    seed: Optional[int] = None
    orbit_eps: float = 1e-3
    min_weight: int = 2
    max_orbit_elements: int = 1200
    max_l2_seeds: int = 16
    max_l2_elements: int = 600

    def resolved_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get("KLAB_SEED")
        return int(env) if env else 0


_SQRT_PRIMES = np.sqrt(np.array([2.0, 3.0, 5.0, 7.0, 11.0, 13.0]))


def seed_grid(cfg: SeedConfig) -> list:
    """Deterministic low-discrepancy seed points on CP^2 (Kronecker sequence)."""
    base = cfg.resolved_seed()
    pts = []
    k = 0
    while len(pts) < cfg.n_seeds:
        k += 1
        frac = np.mod((k + base) * _SQRT_PRIMES, 1.0)
        v = (2 * frac[:3] - 1) + 1j * (2 * frac[3:] - 1)
        if np.linalg.norm(v) < 1e-3:
            continue
        pts.append(point_new(v))
    return pts


def _orbit_elements(ball: BallEnumeration, cap: int) -> np.ndarray:
    """Deterministic selection of long-word elements for orbit estimates."""
    n = len(ball)
    radius = ball.radius
    idx = np.nonzero(ball.lengths >= max(1, radius - 2))[0]
    if len(idx) == 0:
        idx = np.nonzero(ball.lengths >= 1)[0]
    if len(idx) > cap:
        stride = len(idx) / cap
        idx = idx[np.floor(np.arange(cap) * stride).astype(int)]
    return idx


def _cluster_orbit_points(
    images: np.ndarray, lengths: np.ndarray, cfg: SeedConfig, radius: int, max_reps: int = 4000
):
    """Greedy FS clustering of orbit images; keeps accumulation-looking clusters."""
    reps: list = []
    weights: list = []
    longs: list = []
    cos_tol = np.cos(cfg.orbit_eps)
    for i in range(len(images)):
        v = images[i]
        hit = -1
        if reps:
            dots = np.abs(np.asarray(reps) @ np.conj(v))
            k = int(np.argmax(dots))
            if dots[k] >= cos_tol:
                hit = k
        if hit < 0:
            if len(reps) >= max_reps:
                continue
            reps.append(v)
            weights.append(1)
            longs.append(int(lengths[i]))
        else:
            weights[hit] += 1
            longs[hit] = max(longs[hit], int(lengths[i]))
    out = []
    for v, w, l in zip(reps, weights, longs):
        if w >= cfg.min_weight and l >= radius - 1:
            out.append((point_new(v), w))
    return out


def kulkarni_estimate(
    source: Union[GroupSpec, BallEnumeration],
    radius: int = DEFAULT_RADIUS,
    seeds: Optional[SeedConfig] = None,
    eq_est: Optional[LimitEstimate] = None,
    cap: int = DEFAULT_CAP,
):
    """Approximations of the Kulkarni sets (L0, L1, L2).

    L0: fixed points and pointwise-fixed lines of infinite-order elements
    (a subset of the true L0 in pathological cases; documented
    approximation).  L1: accumulation-confirmed orbit clusters of a
    deterministic seed grid.  L2: the same for small sampled neighborhoods,
    plus the kernel lines of the detected limits, which is how the blow-up
    of compact sets along escaping tracks manifests at this resolution.
    """
    if radius < 2:
        raise ValueError("radius must be >= 2")
    cfg = seeds or SeedConfig()
    ball = source if isinstance(source, BallEnumeration) else enumerate_ball(source, radius, cap)
    if eq_est is None:
        eq_est = eq_complement(ball, radius)

    # --- L0 from short elements and track primitives
    short_idx = np.nonzero(ball.lengths <= min(ball.radius, 6))[0]
    l0_points = []
    l0_lines = []
    spread = _moduli_spread(ball.lifts[short_idx]) if len(short_idx) else np.zeros(0)
    for pos, i in enumerate(short_idx):
        if ball.lengths[i] == 0:
            continue
        g = ball.element(int(i))
        infinite = spread[pos] > 1 + 1e-9
        eig = None
        if not infinite:
            eig = eigen3(g.lift)
            if not eig.diagonalizable:
                infinite = True
            elif order_of(g) is None:
                infinite = True
        if not infinite:
            continue
        eig = eig or eigen3(g.lift)
        for p in fixed_points(g, eig):
            l0_points.append((p, 1))
        for l in pointwise_fixed_lines(g, eig):
            l0_lines.append((l, 1))
    l0 = make_estimate(lines=l0_lines, points=l0_points, provenance="L0(fixed sets, approximation)")

    # --- L1 orbit clusters
    grid = [p for p in seed_grid(cfg) if point_to_estimate(p, l0) > 1e-6]
    sel = _orbit_elements(ball, cfg.max_orbit_elements)
    l1_pts = []
    if grid and len(sel):
        seeds_mat = np.stack([p.coords for p in grid], axis=1)  # (3, S)
        imgs = ball.lifts[sel] @ seeds_mat  # (E, 3, S)
        imgs = np.moveaxis(imgs, 2, 1).reshape(-1, 3)
        norms = np.linalg.norm(imgs, axis=1)
        good = norms > 1e-12
        imgs = imgs[good] / norms[good][:, None]
        lens = np.repeat(ball.lengths[sel], len(grid))[good]
        l1_pts = _cluster_orbit_points(imgs, lens, cfg, ball.radius)
    l1 = make_estimate(points=l1_pts, provenance="L1(orbit clusters of seed grid)")

    # --- L2 neighborhood orbits plus kernel blow-up lines
    l01 = merge_estimates([l0, l1], provenance="L0+L1")
    l2_seeds = [p for p in grid if point_to_estimate(p, l01) > 1e-6][: cfg.max_l2_seeds]
    sel2 = _orbit_elements(ball, cfg.max_l2_elements)
    l2_pts = []
    if l2_seeds and len(sel2):
        samples = []
        r = cfg.ball_radius
        for p in l2_seeds:
            basis = _tangent_frame(p.coords)
            for k in range(cfg.sphere_samples):
                ang = 2 * np.pi * k / cfg.sphere_samples
                tangent = np.cos(ang) * basis[0] + np.sin(ang) * basis[1]
                samples.append(np.cos(r) * p.coords + np.sin(r) * tangent)
        sm = np.stack(samples, axis=1)
        imgs = ball.lifts[sel2] @ sm
        imgs = np.moveaxis(imgs, 2, 1).reshape(-1, 3)
        norms = np.linalg.norm(imgs, axis=1)
        good = norms > 1e-12
        imgs = imgs[good] / norms[good][:, None]
        lens = np.repeat(ball.lengths[sel2], len(samples))[good]
        l2_pts = _cluster_orbit_points(imgs, lens, cfg, ball.radius)
    l2 = make_estimate(
        lines=list(eq_est.lines),
        points=l2_pts,
        provenance="L2(neighborhood orbits; kernel blow-up lines)",
        notes=["kernel lines adopted from the limit estimate (blow-up approximation)"],
    )
    return l0, l1, l2


def _tangent_frame(p: np.ndarray) -> list:
    basis = []
    for e in np.eye(3, dtype=complex):
        w = e - np.vdot(p, e) * p
        for b in basis:
            w = w - np.vdot(b, w) * b
        n = np.linalg.norm(w)
        if n > 1e-7:
            basis.append(w / n)
        if len(basis) == 2:
            break
    return basis


def kulkarni_lambda(l0: LimitEstimate, l1: LimitEstimate, l2: LimitEstimate) -> LimitEstimate:
    """The assembled Kulkarni limit set estimate L0 u L1 u L2."""
    return merge_estimates([l0, l1, l2], provenance="Lambda(Kulkarni estimate)")


# ---------------------------------------------------------------------------
# C(Gamma) and the union check


def c_gamma_estimate(
    source: Union[GroupSpec, BallEnumeration],
    radius: int = DEFAULT_RADIUS,
    cap: int = DEFAULT_CAP,
) -> LimitEstimate:
    """Closure of the union of cyclic limit sets over ball elements.

    Non-elliptic infinite-order elements contribute their closed-form
    cyclic limit sets.  Infinite-order elliptic elements (not covered by
    the case tables) contribute fixed points only, logged separately.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    ball = source if isinstance(source, BallEnumeration) else enumerate_ball(source, radius, cap)
    n = len(ball)
    if n <= 1:
        return make_estimate(provenance="C(Gamma) at radius %d" % radius)
    spread = _moduli_spread(ball.lifts)
    lines = []
    points = []
    notes = []
    elliptic_logged = 0
    seen = set()
    order = np.lexsort((np.arange(n), ball.lengths))
    for i in order:
        i = int(i)
        if ball.lengths[i] == 0:
            continue
        g = ball.element(i)
        kg = psp_key(psp_new(g.lift))
        if kg in seen:
            continue
        seen.add(kg)
        seen.add(psp_key(psp_new(inverse(g).lift)))
        if spread[i] > 1 + 1e-9:
            eig = eigen3(g.lift)
            est = cyclic_limit_set(g, eig)
            lines.extend(est.lines)
            points.extend(est.points)
            continue
        eig = eigen3(g.lift)
        if eig.diagonalizable:
            if order_of(g) is None:
                # infinite-order elliptic: fixed points only, logged
                elliptic_logged += 1
                for p in fixed_points(g, eig):
                    points.append((p, 1))
            continue
        est = cyclic_limit_set(g, eig)
        lines.extend(est.lines)
        points.extend(est.points)
    if elliptic_logged:
        notes.append(
            "%d infinite-order elliptic elements contributed fixed points only "
            "(excluded from pass/fail checks)" % elliptic_logged
        )
    return make_estimate(
        lines=lines, points=points, provenance="C(Gamma) at radius %d" % ball.radius, notes=notes
    )


@dataclasses.dataclass
class LambdaUnionReport:
    distance: float
    passed: bool
    tolerance: float
    lambda_lines: int
    c_gamma_lines: int


def lambda_union_check(
    spec: GroupSpec,
    radius: int = DEFAULT_RADIUS,
    tolerance: float = 1e-4,
    seeds: Optional[SeedConfig] = None,
    cg_radius: Optional[int] = None,
    cap: int = DEFAULT_CAP,
) -> LambdaUnionReport:
    """Consistency check: Kulkarni limit estimate against closure(union Lambda(g))."""
    ball = enumerate_ball(spec, radius, cap)
    eq = eq_complement(ball, radius)
    l0, l1, l2 = kulkarni_estimate(ball, radius, seeds, eq_est=eq)
    lam = kulkarni_lambda(l0, l1, l2)
    cg = c_gamma_estimate(sub_ball(ball, cg_radius or min(radius, 8)))
    d = estimate_hausdorff(lam, cg)
    return LambdaUnionReport(
        distance=float(d),
        passed=bool(d < tolerance),
        tolerance=tolerance,
        lambda_lines=len(lam.lines),
        c_gamma_lines=len(cg.lines),
    )
