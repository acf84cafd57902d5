"""Closed-form 3x3 complex linear algebra helpers.

Everything here is hand-rolled on purpose: cubic-resolvent eigenvalues
(Cardano plus a Newton polish), and a 3x3 SVD built from the Hermitian
trigonometric eigensolver on M^H M.  Small singular values are refined
through the adjugate and the determinant, which keeps rank decisions
reliable far below the sqrt(eps) floor of the normal-equations approach.
"""

from __future__ import annotations

import dataclasses

import numpy as np

_OMEGA = np.exp(2j * np.pi / 3)


def det3(m: np.ndarray) -> complex:
    return complex(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def adjugate3(m: np.ndarray) -> np.ndarray:
    """Classical adjugate: m @ adjugate3(m) = det3(m) * I."""
    a = np.empty((3, 3), dtype=complex)
    a[0, 0] = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    a[0, 1] = m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]
    a[0, 2] = m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]
    a[1, 0] = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    a[1, 1] = m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
    a[1, 2] = m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]
    a[2, 0] = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    a[2, 1] = m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]
    a[2, 2] = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return a


def cubic_roots(a: complex, b: complex, c: complex) -> np.ndarray:
    """Roots of x^3 + a x^2 + b x + c with complex coefficients.

    Cardano on the depressed cubic, branch chosen to avoid cancellation,
    followed by two Newton steps on the original polynomial.
    """
    a = complex(a)
    b = complex(b)
    c = complex(c)
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    scale = max(abs(p), abs(q), 1e-300)
    if max(abs(p), abs(q)) < 1e-280:
        roots = np.full(3, -a / 3.0, dtype=complex)
        return _polish_cubic(roots, a, b, c)
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    sq = np.sqrt(complex(disc))
    u3a = -q / 2.0 + sq
    u3b = -q / 2.0 - sq
    u3 = u3a if abs(u3a) >= abs(u3b) else u3b
    if abs(u3) < 1e-280 * scale:
        # p ~ 0 branch: three cube roots of -q
        r = complex(-q) ** (1.0 / 3.0)
        ts = np.array([r, r * _OMEGA, r * _OMEGA**2], dtype=complex)
    else:
        u = complex(u3) ** (1.0 / 3.0)
        v = -p / (3.0 * u)
        ts = np.array(
            [u + v, u * _OMEGA + v * _OMEGA**2, u * _OMEGA**2 + v * _OMEGA],
            dtype=complex,
        )
    return _polish_cubic(ts - a / 3.0, a, b, c)


def _polish_cubic(roots: np.ndarray, a: complex, b: complex, c: complex) -> np.ndarray:
    x = roots.astype(complex)
    for _ in range(2):
        f = ((x + a) * x + b) * x + c
        fp = (3.0 * x + 2.0 * a) * x + b
        ok = np.abs(fp) > 1e-300
        step = np.zeros_like(x)
        step[ok] = f[ok] / fp[ok]
        # only accept steps that stay small: near-multiple roots Newton can jump
        step = np.where(np.abs(step) < 0.5 * (1.0 + np.abs(x)), step, 0.0)
        x = x - step
    return x


def eigvals3(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 3x3 complex matrix via its characteristic cubic."""
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return np.zeros(3, dtype=complex)
    a = m / scale
    tr = a[0, 0] + a[1, 1] + a[2, 2]
    e2 = (
        a[0, 0] * a[1, 1]
        - a[0, 1] * a[1, 0]
        + a[0, 0] * a[2, 2]
        - a[0, 2] * a[2, 0]
        + a[1, 1] * a[2, 2]
        - a[1, 2] * a[2, 1]
    )
    d = det3(a)
    return cubic_roots(-tr, e2, -d) * scale


def eigvals3_batch(ms: np.ndarray) -> np.ndarray:
    """Vectorized eigenvalues for a stack of 3x3 matrices, shape (n, 3, 3) -> (n, 3).

    Same Cardano-plus-polish scheme as eigvals3; used for bulk screening.
    """
    ms = np.asarray(ms, dtype=complex)
    n = ms.shape[0]
    if n == 0:
        return np.zeros((0, 3), dtype=complex)
    scale = np.max(np.abs(ms).reshape(n, 9), axis=1)
    scale = np.where(scale == 0.0, 1.0, scale)
    a = ms / scale[:, None, None]
    tr = a[:, 0, 0] + a[:, 1, 1] + a[:, 2, 2]
    e2 = (
        a[:, 0, 0] * a[:, 1, 1]
        - a[:, 0, 1] * a[:, 1, 0]
        + a[:, 0, 0] * a[:, 2, 2]
        - a[:, 0, 2] * a[:, 2, 0]
        + a[:, 1, 1] * a[:, 2, 2]
        - a[:, 1, 2] * a[:, 2, 1]
    )
    det = (
        a[:, 0, 0] * (a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1])
        - a[:, 0, 1] * (a[:, 1, 0] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 0])
        + a[:, 0, 2] * (a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0])
    )
    ca = -tr
    cb = e2
    cc = -det
    p = cb - ca * ca / 3.0
    q = 2.0 * ca**3 / 27.0 - ca * cb / 3.0 + cc
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    sq = np.sqrt(disc.astype(complex))
    u3a = -q / 2.0 + sq
    u3b = -q / 2.0 - sq
    u3 = np.where(np.abs(u3a) >= np.abs(u3b), u3a, u3b)
    tiny = np.abs(u3) < 1e-280
    u3_safe = np.where(tiny, 1.0, u3)
    u = u3_safe ** (1.0 / 3.0)
    v = -p / (3.0 * u)
    t0 = u + v
    t1 = u * _OMEGA + v * _OMEGA**2
    t2 = u * _OMEGA**2 + v * _OMEGA
    # degenerate p ~ 0, q ~ 0: triple root at 0 of the depressed cubic
    r = np.where(tiny, (-q.astype(complex)) ** (1.0 / 3.0), 0.0)
    t0 = np.where(tiny, r, t0)
    t1 = np.where(tiny, r * _OMEGA, t1)
    t2 = np.where(tiny, r * _OMEGA**2, t2)
    roots = np.stack([t0, t1, t2], axis=1) - (ca / 3.0)[:, None]
    for _ in range(2):
        f = ((roots + ca[:, None]) * roots + cb[:, None]) * roots + cc[:, None]
        fp = (3.0 * roots + 2.0 * ca[:, None]) * roots + cb[:, None]
        ok = np.abs(fp) > 1e-300
        step = np.where(ok, f / np.where(ok, fp, 1.0), 0.0)
        step = np.where(np.abs(step) < 0.5 * (1.0 + np.abs(roots)), step, 0.0)
        roots = roots - step
    return roots * scale[:, None]


def hermitian_eigvals3(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 3x3 Hermitian matrix, descending, by the trig formula."""
    p1 = abs(h[0, 1]) ** 2 + abs(h[0, 2]) ** 2 + abs(h[1, 2]) ** 2
    d = np.real(np.array([h[0, 0], h[1, 1], h[2, 2]]))
    q = d.sum() / 3.0
    if p1 == 0.0:
        return np.sort(d)[::-1].copy()
    p2 = float(((d - q) ** 2).sum() + 2.0 * p1)
    p = np.sqrt(p2 / 6.0)
    b = (h - q * np.eye(3)) / p
    r = float(np.real(det3(b))) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.array([e1, e2, e3])


def _bilinear_null(rows: np.ndarray) -> np.ndarray:
    """Unit vector v with rows @ v ~ 0, for a (numerically) rank-2 row set."""
    c01 = np.cross(rows[0], rows[1])
    c02 = np.cross(rows[0], rows[2])
    c12 = np.cross(rows[1], rows[2])
    cands = np.stack([c01, c02, c12])
    norms = np.linalg.norm(cands, axis=1)
    k = int(np.argmax(norms))
    if norms[k] == 0.0:
        return np.array([1.0, 0.0, 0.0], dtype=complex)
    return cands[k] / norms[k]


def _orthonormal_complement(vs: list[np.ndarray]) -> list[np.ndarray]:
    """Extend an orthonormal list to an orthonormal basis of C^3."""
    basis = [v.copy() for v in vs]
    for e in np.eye(3, dtype=complex):
        w = e.copy()
        for b in basis:
            w = w - np.vdot(b, w) * b
        n = np.linalg.norm(w)
        if n > 1e-7:
            basis.append(w / n)
        if len(basis) == 3:
            break
    return basis[len(vs):]


def _hermitian_eigvecs3(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Orthonormal eigenvectors (columns) of Hermitian h for eigenvalues w (desc)."""
    scale = max(float(np.max(np.abs(h))), 1e-300)
    gap12 = abs(w[0] - w[1]) / scale
    gap23 = abs(w[1] - w[2]) / scale
    sep = 1e-6
    if gap12 < sep and gap23 < sep:
        return np.eye(3, dtype=complex)
    if gap12 >= sep and gap23 >= sep:
        v0 = _bilinear_null(h - w[0] * np.eye(3))
        v2 = _bilinear_null(h - w[2] * np.eye(3))
        # enforce Hermitian orthogonality, then complete
        v2 = v2 - np.vdot(v0, v2) * v0
        n = np.linalg.norm(v2)
        if n > 1e-7:
            v2 = v2 / n
            (v1,) = _orthonormal_complement([v0, v2])
        else:
            v1, v2 = _orthonormal_complement([v0])
        return np.stack([v0, v1, v2], axis=1)
    if gap12 >= sep:  # w1 ~ w2 cluster below a separated top eigenvalue
        v0 = _bilinear_null(h - w[0] * np.eye(3))
        v1, v2 = _orthonormal_complement([v0])
        return np.stack([v0, v1, v2], axis=1)
    # w0 ~ w1 cluster above a separated bottom eigenvalue
    v2 = _bilinear_null(h - w[2] * np.eye(3))
    v0, v1 = _orthonormal_complement([v2])
    return np.stack([v0, v1, v2], axis=1)


def _unitize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _gram_project_out(v: np.ndarray, basis: list) -> np.ndarray:
    for b in basis:
        v = v - np.vdot(b, v) * b
    return v


def _assemble_right_vectors(
    a: np.ndarray, h: np.ndarray, w: np.ndarray, adj: np.ndarray, sref: np.ndarray
) -> np.ndarray:
    """Right singular vectors, resolving near-deficient splits carefully.

    The Hermitian eigenvector path cannot separate two singular values that
    are both absolutely tiny even when their ratio is huge (eps vs eps^2),
    which is exactly the regime of near-limit matrices.  Here the bottom
    direction comes from the adjugate, the top from the separated Hermitian
    eigenvector, and the middle from the orthogonal complement.
    """
    s1 = sref[0]
    if s1 <= 0:
        return np.eye(3, dtype=complex)
    r21 = sref[1] / s1
    r32 = sref[2] / sref[1] if sref[1] > 0 else 0.0
    t = 1e-2
    scale = max(float(np.max(np.abs(h))), 1e-300)
    hermitian_resolves = (
        abs(w[0] - w[1]) / scale > 1e-6 and abs(w[1] - w[2]) / scale > 1e-6
    )
    if hermitian_resolves or (r21 >= t and r32 >= t):
        return _hermitian_eigvecs3(h, w)
    if r21 < t:
        # one dominant direction; v1 from a well-separated Hermitian eigenvalue
        v1 = _bilinear_null(h - w[0] * np.eye(3))
        if r32 < 0.1 and sref[1] > 0:
            cols = np.linalg.norm(adj, axis=0)
            k = int(np.argmax(cols))
            if cols[k] > 0:
                v3 = _gram_project_out(adj[:, k] / cols[k], [v1])
                n3 = np.linalg.norm(v3)
                if n3 > 1e-7:
                    v3 = v3 / n3
                    (v2,) = _orthonormal_complement([v1, v3])
                    return np.stack([v1, v2, v3], axis=1)
        v2, v3 = _orthonormal_complement([v1])
        return np.stack([v1, v2, v3], axis=1)
    # r32 < t <= r21: a single dying direction from the adjugate
    cols = np.linalg.norm(adj, axis=0)
    k = int(np.argmax(cols))
    if cols[k] > 0:
        v3 = _unitize(adj[:, k] / cols[k])
        scale = max(float(np.max(np.abs(h))), 1e-300)
        if abs(w[0] - w[1]) / scale > 1e-6:
            v1 = _bilinear_null(h - w[0] * np.eye(3))
            v1 = _gram_project_out(v1, [v3])
            n1 = np.linalg.norm(v1)
            if n1 > 1e-7:
                v1 = v1 / n1
                (v2,) = _orthonormal_complement([v1, v3])
                return np.stack([v1, v2, v3], axis=1)
        v1, v2 = _orthonormal_complement([v3])
        return np.stack([v1, v2, v3], axis=1)
    return _hermitian_eigvecs3(h, w)


@dataclasses.dataclass
class Svd3:
    """SVD of a 3x3 complex matrix: m ~ U diag(s) V^H, s descending."""

    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    borderline: bool

    @property
    def rank(self) -> int:
        return rank_from_singulars(self.s)


RANK_REL_TOL = 1e-8
BORDERLINE_BAND = (1e-10, 1e-6)


def rank_from_singulars(s: np.ndarray, rel_tol: float = RANK_REL_TOL) -> int:
    if s[0] <= 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def svd3(m: np.ndarray) -> Svd3:
    """SVD with adjugate/determinant-refined small singular values.

    sigma_2 is recovered from the largest singular value of adj(m) and
    sigma_3 from |det m|, so exact rank deficiency is resolved near machine
    precision instead of the sqrt(eps) floor of M^H M.
    """
    m = np.asarray(m, dtype=complex)
    scale = float(np.max(np.abs(m)))
    if scale == 0.0 or not np.isfinite(scale):
        eye = np.eye(3, dtype=complex)
        return Svd3(np.zeros(3), eye.copy(), eye.copy(), False)
    a = m / scale
    h = a.conj().T @ a
    w = np.maximum(hermitian_eigvals3(h), 0.0)
    s = np.sqrt(w)
    adj = adjugate3(a)
    hadj = adj.conj().T @ adj
    wadj = np.maximum(hermitian_eigvals3(hadj), 0.0)
    s_adj_max = float(np.sqrt(wadj[0]))
    d = abs(det3(a))
    s1 = float(s[0])
    s2 = s_adj_max / s1 if s1 > 1e-150 else 0.0
    s2 = min(s2, s1)
    s3 = d / (s1 * s2) if s1 * s2 > 1e-150 else 0.0
    s3 = min(s3, s2)
    sref = np.array([s1, s2, s3])

    v = _assemble_right_vectors(a, h, w, adj, sref)

    u_cols = []
    for i in range(3):
        if sref[i] > 1e-9 * s1:
            col = a @ v[:, i]
            n = np.linalg.norm(col)
            if n > 0:
                col = col / n
                for prev in u_cols:
                    col = col - np.vdot(prev, col) * prev
                n2 = np.linalg.norm(col)
                if n2 > 1e-7:
                    u_cols.append(col / n2)
                    continue
        break
    u_cols.extend(_orthonormal_complement(u_cols))
    u = np.stack(u_cols, axis=1)

    ratios = sref[1:] / s1 if s1 > 0 else np.zeros(2)
    borderline = bool(np.any((ratios >= BORDERLINE_BAND[0]) & (ratios <= BORDERLINE_BAND[1])))
    return Svd3(sref * scale, u, v, borderline)
