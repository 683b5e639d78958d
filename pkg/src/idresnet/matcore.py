"""Dense-matrix primitives: norms, SVD, canonical block form of orthogonal
matrices and roots of planar rotations.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Functions
that only need singular values accept stacked inputs with leading batch
axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotOrthogonal, NotSymmetricPSD, OddReflectionCount

# Real eigenvalues of an orthogonal matrix closer than this to +-1 are snapped.
EIGEN_SNAP_TOL = 1e-6
ORTHO_TOL = 1e-8

BlockKind = Literal["rotation", "plus_one", "minus_one"]


def as_matrix(M, *, square: bool = False) -> np.ndarray:
    """Validate and convert ``M`` to a finite float64 2-D array."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if square and A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    return A


def singular_values(M: np.ndarray) -> np.ndarray:
    """Singular values in nonincreasing order along the last axis."""
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)


def spectral_norm(M: np.ndarray):
    """Largest singular value.  Works on stacks of matrices."""
    s = singular_values(M)
    if s.ndim == 1:
        return float(s[0])
    return s[..., 0]


def sigma_min(M: np.ndarray):
    """Smallest singular value.  Works on stacks of matrices."""
    s = singular_values(M)
    if s.ndim == 1:
        return float(s[-1])
    return s[..., -1]


def svd(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(U, k, V)`` with ``M = U @ diag(k) @ V.T``.

    ``k`` is the vector of singular values (the diagonal of K), nonnegative and
    nonincreasing.  Note that ``V`` is returned, not ``V.T``.
    """
    A = as_matrix(M, square=True)
    U, k, Vt = np.linalg.svd(A)
    return U, k, Vt.T


def psd_sqrt(Sigma: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Unique symmetric PSD square root.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more negative
    is rejected.  Accepts stacks.
    """
    S = np.asarray(Sigma, dtype=float)
    if not np.allclose(S, np.swapaxes(S, -1, -2), atol=tol, rtol=0):
        raise NotSymmetricPSD("covariance is not symmetric")
    w, Q = np.linalg.eigh(S)
    if np.any(w < -tol):
        raise NotSymmetricPSD(f"covariance has eigenvalue {w.min():.3e} < 0")
    w = np.clip(w, 0.0, None)
    return (Q * np.sqrt(w)[..., None, :]) @ np.swapaxes(Q, -1, -2)


def rotation(theta: float) -> np.ndarray:
    """The planar rotation T(theta)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_root(theta: float, q: int) -> np.ndarray:
    """W = T(theta / q), so that W**q == T(theta) and ||W - I|| = 2|sin(theta/2q)|."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if not (-math.pi < theta <= math.pi):
        raise ValueError("theta must lie in (-pi, pi]")
    return rotation(theta / q)


def rotation_root_minus_identity(theta: float, q: int) -> np.ndarray:
    """T(theta/q) - I computed without cancellation for small angles."""
    phi = theta / q
    c1 = -2.0 * math.sin(phi / 2) ** 2  # cos(phi) - 1
    s = math.sin(phi)
    return np.array([[c1, -s], [s, c1]])


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    theta: float = 0.0

    @property
    def size(self) -> int:
        return 2 if self.kind == "rotation" else 1

    def matrix(self) -> np.ndarray:
        if self.kind == "rotation":
            return rotation(self.theta)
        return np.array([[1.0 if self.kind == "plus_one" else -1.0]])


PLUS_ONE = Block("plus_one")
MINUS_ONE = Block("minus_one")


@dataclass(frozen=True)
class CanonicalBlockForm:
    """Orthonormal basis S and a tiling of 1x1 / 2x2 canonical blocks D.

    ``basis @ block_diagonal() @ basis.T`` reproduces the decomposed matrix.
    """

    basis: np.ndarray
    blocks: tuple[Block, ...] = field(default_factory=tuple)

    def offsets(self) -> list[int]:
        out, pos = [], 0
        for b in self.blocks:
            out.append(pos)
            pos += b.size
        return out

    def block_diagonal(self) -> np.ndarray:
        return scipy.linalg.block_diag(*[b.matrix() for b in self.blocks])

    def reassemble(self) -> np.ndarray:
        S = self.basis
        return S @ self.block_diagonal() @ S.T

    def count(self, kind: BlockKind) -> int:
        return sum(1 for b in self.blocks if b.kind == kind)


def _nearest_rotation(B: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(B)
    P = U @ Vt
    if np.linalg.det(P) < 0:
        raise NotOrthogonal("2x2 Schur block is not a rotation")
    return P


def orthogonal_block_diagonalize(Q: np.ndarray, tol: float = ORTHO_TOL) -> CanonicalBlockForm:
    """Write an orthogonal Q as S D S^T with D made of rotations and +-1 entries.

    Uses the real Schur form: for a normal matrix the quasi-triangular factor
    is block diagonal, its 2x2 blocks carry the complex-conjugate eigenvalue
    pairs and its 1x1 blocks the real eigenvalues +-1.
    """
    Q = as_matrix(Q, square=True)
    d = Q.shape[0]
    if np.linalg.norm(Q @ Q.T - np.eye(d)) > tol:
        raise NotOrthogonal(f"||QQ^T - I||_F = {np.linalg.norm(Q @ Q.T - np.eye(d)):.3e} exceeds {tol}")

    T, S = scipy.linalg.schur(Q, output="real")
    blocks: list[Block] = []
    i = 0
    while i < d:
        if i + 1 < d and T[i + 1, i] != 0.0:
            B = T[i : i + 2, i : i + 2]
            P = _nearest_rotation(B)
            if np.linalg.norm(B - P) > tol:
                raise NotOrthogonal(f"2x2 block deviates from a rotation by {np.linalg.norm(B - P):.3e}")
            blocks.append(Block("rotation", math.atan2(P[1, 0], P[0, 0])))
            i += 2
        else:
            t = T[i, i]
            if abs(t - 1.0) <= EIGEN_SNAP_TOL:
                blocks.append(PLUS_ONE)
            elif abs(t + 1.0) <= EIGEN_SNAP_TOL:
                blocks.append(MINUS_ONE)
            else:
                raise NotOrthogonal(f"real eigenvalue {t!r} is not +-1")
            i += 1

    form = CanonicalBlockForm(basis=S, blocks=tuple(blocks))
    resid = np.linalg.norm(form.reassemble() - Q)
    if resid > tol * max(np.linalg.norm(Q), 1.0):
        raise NotOrthogonal(f"block form reassembly residual {resid:.3e}")
    return form


def pair_minus_ones(form: CanonicalBlockForm) -> CanonicalBlockForm:
    """Merge MinusOne blocks pairwise into Rotation(pi) blocks.

    The merged blocks are moved to the end and the basis columns permuted to
    match, so the reassembled matrix is unchanged.
    """
    n_minus = form.count("minus_one")
    if n_minus % 2:
        raise OddReflectionCount(f"{n_minus} MinusOne blocks; determinant is -1")
    if n_minus == 0:
        return form

    offsets = form.offsets()
    keep_cols: list[int] = []
    keep_blocks: list[Block] = []
    minus_cols: list[int] = []
    for b, off in zip(form.blocks, offsets):
        if b.kind == "minus_one":
            minus_cols.append(off)
        else:
            keep_blocks.append(b)
            keep_cols.extend(range(off, off + b.size))
    blocks = keep_blocks + [Block("rotation", math.pi)] * (n_minus // 2)
    basis = form.basis[:, keep_cols + minus_cols]
    return CanonicalBlockForm(basis=basis, blocks=tuple(blocks))


def power_iteration_norm(M: np.ndarray, iters: int = 500, seed: int = 0) -> float:
    """Spectral norm via power iteration on M^T M.  Independent cross-check."""
    A = as_matrix(M)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        est = float(np.linalg.norm(A @ v))
    return est
