"""Near-identity factorization of a linear map.

Given R with det(R) > 0 and a depth l, build layers A_1..A_l with

    (I + A_l) ... (I + A_1) = R,    max_i ||A_i|| = O((4 pi + 3 gamma) / l).

A layer stack is an ``(l, d, d)`` array; ``stack[0]`` is applied first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import matcore
from .errors import (
    DepthTooSmall,
    DimensionMismatch,
    NegativeDeterminant,
    NotSymmetricPSD,
    SingularTarget,
)
from .matcore import as_matrix

# Targets whose gamma is below this are treated as exactly orthogonal.
GAMMA_ZERO_TOL = 1e-12
SINGULAR_RTOL = 1e-12


def as_stack(A) -> np.ndarray:
    S = np.asarray(A, dtype=float)
    if S.ndim != 3 or S.shape[0] < 1 or S.shape[1] != S.shape[2]:
        raise DimensionMismatch(f"layer stack must have shape (l, d, d), got {S.shape}")
    return S


def maxnorm(A: np.ndarray):
    """max_i ||A_i|| over the layer axis (axis -3).  Batched over leading axes."""
    return np.max(matcore.spectral_norm(A), axis=-1)


def stack_product(A: np.ndarray) -> np.ndarray:
    """(I + A_l) ... (I + A_1); leading batch axes are carried through."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    P = np.broadcast_to(np.eye(d), A.shape[:-3] + (d, d)).copy()
    for i in range(A.shape[-3]):
        P = P + A[..., i, :, :] @ P
    return P


@dataclass(frozen=True)
class Target:
    """A regression instance y = R x + xi with E[xx^T] = Sigma, Var(xi_j) = noise_var."""

    R: np.ndarray
    Sigma: np.ndarray = None
    noise_var: float = 0.0

    def __post_init__(self):
        R = as_matrix(self.R, square=True)
        d = R.shape[0]
        Sigma = np.eye(d) if self.Sigma is None else as_matrix(self.Sigma, square=True)
        if Sigma.shape != R.shape:
            raise DimensionMismatch(f"Sigma has shape {Sigma.shape}, R has {R.shape}")
        if np.max(np.abs(Sigma - Sigma.T)) > 1e-10:
            raise NotSymmetricPSD("Sigma is not symmetric")
        if np.linalg.eigvalsh(Sigma).min() < -1e-10:
            raise NotSymmetricPSD("Sigma is not positive semidefinite")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def d(self) -> int:
        return self.R.shape[0]

    @property
    def gamma(self) -> float:
        s = matcore.singular_values(self.R)
        if s[-1] <= 0:
            return math.inf
        return max(abs(math.log(s[0])), abs(math.log(s[-1])))


@dataclass
class FactorizationReport:
    stack: np.ndarray
    norm_bound_claimed: float
    maxnorm_achieved: float
    reconstruction_rel_error: float
    depth_split: tuple[int, int, int]
    gamma: float = 0.0
    kind: str = "general"
    layer_roles: list[str] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return self.stack.shape[0]

    @property
    def certified(self) -> bool:
        return self.maxnorm_achieved <= self.norm_bound_claimed and self.reconstruction_rel_error <= 1e-8

    def to_json(self) -> dict:
        from .matio import matrix_to_json

        p, q, pad = self.depth_split
        return {
            "kind": self.kind,
            "depth": self.depth,
            "dim": int(self.stack.shape[1]),
            "gamma": self.gamma,
            "depth_split": {"p": p, "q": q, "padding": pad},
            "norm_bound_claimed": self.norm_bound_claimed,
            "maxnorm_achieved": self.maxnorm_achieved,
            "reconstruction_rel_error": self.reconstruction_rel_error,
            "certified": self.certified,
            "layer_roles": list(self.layer_roles),
            "layers": [matrix_to_json(A) for A in self.stack],
        }


def gamma_of(R: np.ndarray) -> float:
    """max(|log sigma_max(R)|, |log sigma_min(R)|)."""
    s = matcore.singular_values(as_matrix(R, square=True))
    if s[-1] <= SINGULAR_RTOL * s[0]:
        raise SingularTarget(f"sigma_min = {s[-1]:.3e} is numerically zero relative to sigma_max = {s[0]:.3e}")
    return max(abs(math.log(s[0])), abs(math.log(s[-1])))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_depth(ell: int, gamma: float) -> tuple[int, int, int]:
    """Split the depth into p diagonal factors, 4q rotation factors and padding."""
    if ell < 5 or ell < 3 * gamma:
        raise DepthTooSmall(f"depth {ell} < max(3*gamma, 5) = {max(3 * gamma, 5):.4g}")
    denom = 4 * math.pi + 3 * gamma
    p = 0 if gamma <= GAMMA_ZERO_TOL else max(1, _round_half_up(3 * gamma * ell / denom))
    q = max(1, _round_half_up(math.pi * ell / denom))
    while 4 * q + p > ell:
        if q > 1:
            q -= 1
        else:
            p -= 1
    return p, q, ell - 4 * q - p


def orthogonal_root_layer(Q: np.ndarray, m: int) -> np.ndarray:
    """A with (I + A)^m = Q for orthogonal Q, det(Q) = 1, and ||A|| <= pi / m.

    Every rotation angle of the canonical block form is divided by m; the
    -1 eigenvalues are first paired into rotations by pi.
    """
    form = matcore.pair_minus_ones(matcore.orthogonal_block_diagonalize(Q))
    d = Q.shape[0]
    D = np.zeros((d, d))
    for b, off in zip(form.blocks, form.offsets()):
        if b.kind == "rotation" and b.theta != 0.0:
            D[off : off + 2, off : off + 2] = matcore.rotation_root_minus_identity(b.theta, m)
    if not D.any():
        return D
    S = form.basis
    return S @ D @ S.T


def _report(stack, R, bound, split, gamma, kind, roles) -> FactorizationReport:
    return FactorizationReport(
        stack=stack,
        norm_bound_claimed=bound,
        maxnorm_achieved=float(maxnorm(stack)),
        reconstruction_rel_error=relative_reconstruction_error(stack, R),
        depth_split=split,
        gamma=gamma,
        kind=kind,
        layer_roles=roles,
    )


def factorize_psd(R: np.ndarray, ell: int) -> FactorizationReport:
    """Equal layers U diag(z^(1/l)) U^T - I for symmetric positive definite R."""
    R = as_matrix(R, square=True)
    if np.max(np.abs(R - R.T)) > 1e-10 * max(1.0, np.max(np.abs(R))):
        raise NotSymmetricPSD("target is not symmetric")
    z, U = np.linalg.eigh((R + R.T) / 2)
    if z[0] <= SINGULAR_RTOL * max(z[-1], 0.0):
        raise NotSymmetricPSD(f"target is not positive definite (min eigenvalue {z[0]:.3e})")
    gamma = max(abs(math.log(z[-1])), abs(math.log(z[0])))
    if ell < 1 or ell < gamma:
        raise DepthTooSmall(f"depth {ell} < max(gamma, 1) = {max(gamma, 1):.4g}")
    diag = np.expm1(np.log(z) / ell)
    layer = np.zeros_like(R) if not diag.any() else (U * diag) @ U.T
    stack = np.repeat(layer[None], ell, axis=0)
    return _report(stack, R, 3 * gamma / ell, (ell, 0, 0), gamma, "psd", ["psd_root"] * ell)


def factorize_general(R: np.ndarray, ell: int) -> FactorizationReport:
    """Factor R = U K V^T into 2q + p + 2q near-identity layers plus zero padding.

    Layer order (first applied first): 2q roots of V^T, p roots of K, 2q roots
    of U, then zero layers.
    """
    R = as_matrix(R, square=True)
    d = R.shape[0]
    gamma = gamma_of(R)
    sign, _ = np.linalg.slogdet(R)
    if sign <= 0:
        raise NegativeDeterminant("det(R) < 0; augment the target with an extra -1 dimension")
    p, q, pad = split_depth(ell, gamma)

    if gamma <= GAMMA_ZERO_TOL:
        U, k, V = R, np.ones(d), np.eye(d)
    else:
        U, k, V = matcore.svd(R)
        if np.linalg.det(U) < 0:
            U = U.copy()
            V = V.copy()
            U[:, -1] *= -1
            V[:, -1] *= -1

    v_layer = orthogonal_root_layer(V.T, 2 * q)
    u_layer = orthogonal_root_layer(U, 2 * q)
    layers = [v_layer] * (2 * q)
    roles = ["V^T"] * (2 * q)
    if p:
        layers += [np.diag(np.expm1(np.log(k) / p))] * p
        roles += ["K"] * p
    layers += [u_layer] * (2 * q) + [np.zeros((d, d))] * pad
    roles += ["U"] * (2 * q) + ["padding"] * pad
    stack = np.array(layers)
    bound = 2 * (4 * math.pi + 3 * gamma) / ell
    return _report(stack, R, bound, (p, q, pad), gamma, "general", roles)


def augment_negative_det(R: np.ndarray) -> np.ndarray:
    """diag(R, -1): flips the sign of the determinant with one extra dimension."""
    R = as_matrix(R, square=True)
    d = R.shape[0]
    out = np.zeros((d + 1, d + 1))
    out[:d, :d] = R
    out[d, d] = -1.0
    return out


def rescale_target(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale R so that sigma_min = 1/sqrt(kappa) and sigma_max = sqrt(kappa).

    Returns the rescaled matrix and the factor c with R = c * R_scaled.
    """
    s = matcore.singular_values(as_matrix(R, square=True))
    c = math.sqrt(s[0] * s[-1])
    if c == 0.0:
        raise SingularTarget("cannot rescale a singular target")
    return R / c, c


def relative_reconstruction_error(stack: np.ndarray, R: np.ndarray) -> float:
    return float(np.linalg.norm(stack_product(stack) - R) / np.linalg.norm(R))


def verify_factorization(report, R: np.ndarray) -> float:
    """||(I + A_l)...(I + A_1) - R||_F / ||R||_F, recomputed from the layers.

    ``report`` may be a :class:`FactorizationReport` or a bare layer stack.
    """
    stack = as_stack(report.stack if isinstance(report, FactorizationReport) else report)
    R = as_matrix(R, square=True)
    if stack.shape[1] != R.shape[0]:
        raise DimensionMismatch(f"layers are {stack.shape[1]}x{stack.shape[1]}, target is {R.shape}")
    return relative_reconstruction_error(stack, R)
