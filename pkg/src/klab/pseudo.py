"""Pseudo-projective maps: nonzero 3x3 matrices modulo scalars.

Rank is decided on refined singular values (relative threshold 1e-8), the
kernel and image come from the adjugate-refined null spaces, and maps are
stored max-normalized: the largest-modulus entry is made exactly 1 (real,
positive), which is the normalization used when taking limits of group
elements.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Union

import numpy as np

from ._mat3 import BORDERLINE_BAND, RANK_REL_TOL, adjugate3, svd3
from .errors import InKernel, ZeroMatrix
from .proj import (
    ProjLine,
    ProjPoint,
    canonicalize,
    fs_distance,
    line_new,
    point_line_distance,
    point_new,
)

KERNEL_ACTION_TOL = 1e-8


def max_normalize(m: np.ndarray) -> np.ndarray:
    """Scale a nonzero matrix so its largest-modulus entry is 1 (real > 0)."""
    m = np.asarray(m, dtype=complex).reshape(3, 3)
    flat = m.reshape(-1)
    mods = np.abs(flat)
    k = int(np.argmax(mods))
    if mods[k] <= 1e-300 or not np.isfinite(mods[k]):
        raise ZeroMatrix("zero or non-finite matrix")
    out = m / flat[k]
    out[np.unravel_index(k, (3, 3))] = 1.0 + 0.0j
    return out


@dataclasses.dataclass(frozen=True)
class PseudoProjMap:
    """An element of SP(3,C) with its rank, kernel and image."""

    matrix: np.ndarray  # max-normalized representative
    rank: int
    kernel: Union[None, ProjPoint, ProjLine]  # None = empty kernel (rank 3)
    image: Union[None, ProjPoint, ProjLine]  # None = full image (rank 3)
    singular_values: np.ndarray
    borderline: bool  # a singular-value ratio fell in the ambiguity band

    def kernel_kind(self) -> str:
        if self.kernel is None:
            return "empty"
        return "point" if isinstance(self.kernel, ProjPoint) else "line"

    def image_kind(self) -> str:
        if self.image is None:
            return "full"
        return "point" if isinstance(self.image, ProjPoint) else "line"

    def __repr__(self):
        return "PseudoProjMap(rank=%d, kernel=%s)" % (self.rank, self.kernel_kind())


def psp_new(m) -> PseudoProjMap:
    """Canonicalize a nonzero matrix into a pseudo-projective map."""
    mat = max_normalize(m)
    sv = svd3(mat)
    rank = sv.rank
    if rank == 0:
        raise ZeroMatrix("matrix vanished under normalization")
    kernel: Union[None, ProjPoint, ProjLine]
    image: Union[None, ProjPoint, ProjLine]
    if rank == 3:
        kernel = None
        image = None
    elif rank == 2:
        kernel = point_new(sv.v[:, 2])
        adj = adjugate3(mat)
        rows = np.linalg.norm(adj, axis=1)
        image = line_new(adj[int(np.argmax(rows))])
    else:
        rows = np.linalg.norm(mat, axis=1)
        kernel = line_new(mat[int(np.argmax(rows))])
        cols = np.linalg.norm(mat, axis=0)
        image = point_new(mat[:, int(np.argmax(cols))])
    mat = mat.copy()
    mat.flags.writeable = False
    return PseudoProjMap(
        matrix=mat,
        rank=rank,
        kernel=kernel,
        image=image,
        singular_values=sv.s,
        borderline=sv.borderline,
    )


def kernel_distance(m: PseudoProjMap, p: ProjPoint) -> float:
    """FS distance from a point to the kernel of the map (pi/2 if empty)."""
    if m.kernel is None:
        return float(np.pi / 2)
    if isinstance(m.kernel, ProjPoint):
        return fs_distance(p, m.kernel)
    return point_line_distance(p, m.kernel)


def psp_act(m: PseudoProjMap, p: ProjPoint) -> ProjPoint:
    """Apply the map to a point off its kernel."""
    if kernel_distance(m, p) <= KERNEL_ACTION_TOL:
        raise InKernel("point lies in (or within 1e-8 of) the kernel")
    return point_new(m.matrix @ p.coords)


def psp_distance(a: PseudoProjMap, b: PseudoProjMap) -> float:
    """Fubini-Study distance between maps viewed as points of P(C^9)."""
    return _fs9(a.matrix, b.matrix)


def _fs9(x: np.ndarray, y: np.ndarray) -> float:
    c = abs(np.vdot(x, y)) / (np.linalg.norm(x) * np.linalg.norm(y))
    return float(np.arccos(min(1.0, c)))


def psp_key(m: PseudoProjMap, grid: float = 1e-7) -> tuple:
    """Quantized canonical key for deduplication of maps."""
    c = canonicalize(m.matrix.reshape(-1))
    q = np.round(np.concatenate([c.real, c.imag]) / grid).astype(np.int64)
    return tuple(q.tolist())
