"""Population risk of the linear residual model, its exact gradient, and the
gradient-domination lower bound.

For the model y_hat = (I + A_l)...(I + A_1) x and y = R x + xi,

    f(A) = ||E Sigma^{1/2}||_F^2 + C,   E = (I + A_l)...(I + A_1) - R,

with C = d * noise_var.  The private helpers work on arrays with arbitrary
leading batch axes, ``A`` of shape ``(..., l, d, d)``; the public functions
take a single stack and a :class:`~idresnet.factorize.Target`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import DimensionMismatch, OutsideBall
from .factorize import Target, as_stack, maxnorm, stack_product

BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class RiskValue:
    excess: float
    constant: float

    @property
    def total(self) -> float:
        return self.excess + self.constant


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    tau: float
    maxnorm: float

    @property
    def relative_slack(self) -> float:
        return _relative_slack(self.lhs, self.rhs)


def _relative_slack(lhs, rhs):
    lhs, rhs = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rhs > 0, (lhs - rhs) / np.where(rhs > 0, rhs, 1.0), np.where(lhs >= 0, 0.0, -np.inf))
    return float(out) if out.ndim == 0 else out


def _check(A, target: Target) -> np.ndarray:
    A = as_stack(A)
    if A.shape[1] != target.d:
        raise DimensionMismatch(f"layers are {A.shape[1]}x{A.shape[1]}, target is {target.d}x{target.d}")
    return A


def _frob2(M):
    return np.sum(M * M, axis=(-2, -1))


def _chain_gradient(F, E, Sigma):
    """2 (F_l ... F_{i+1})^T E Sigma (F_{i-1} ... F_1)^T for every i."""
    ell, d = F.shape[-3], F.shape[-1]
    eye = np.broadcast_to(np.eye(d), F.shape[:-3] + (d, d))
    below = [eye]  # below[i] = F_i ... F_1 (0-based: F_{i-1}..F_0)
    for i in range(ell - 1):
        below.append(F[..., i, :, :] @ below[-1])
    above = [eye]  # built from the top: above[j] = F_{l} ... F_{l-j+1}
    for i in range(ell - 1, 0, -1):
        above.append(above[-1] @ F[..., i, :, :])
    above.reverse()  # above[i] = F_{l-1} ... F_{i+1} (0-based)
    middle = E @ Sigma
    G = np.empty(F.shape)
    for i in range(ell):
        G[..., i, :, :] = 2.0 * np.swapaxes(above[i], -1, -2) @ middle @ np.swapaxes(below[i], -1, -2)
    return G


def _standard_product(A):
    P = A[..., 0, :, :]
    for i in range(1, A.shape[-3]):
        P = A[..., i, :, :] @ P
    return P


def batch_excess(A, R, Sigma_sqrt):
    E = stack_product(A) - R
    return _frob2(E @ Sigma_sqrt)


def batch_gradient(A, R, Sigma):
    d = A.shape[-1]
    E = stack_product(A) - R
    return _chain_gradient(A + np.eye(d), E, Sigma)


def residual_error_matrix(A, target: Target) -> np.ndarray:
    """E = (I + A_l)...(I + A_1) - R."""
    A = _check(A, target)
    return stack_product(A) - target.R


def excess_risk(A, target: Target) -> RiskValue:
    A = _check(A, target)
    E = stack_product(A) - target.R
    excess = float(_frob2(E @ matcore.psd_sqrt(target.Sigma)))
    return RiskValue(excess=max(excess, 0.0), constant=target.d * target.noise_var)


def gradient(A, target: Target) -> np.ndarray:
    """Closed-form partial derivatives of f with respect to each layer."""
    A = _check(A, target)
    return batch_gradient(A, target.R, target.Sigma)


def standard_excess(A, target: Target) -> float:
    """||(A_l ... A_1 - R) Sigma^{1/2}||_F^2 for the parameterization without identity offsets."""
    A = _check(A, target)
    E = _standard_product(A) - target.R
    return float(_frob2(E @ matcore.psd_sqrt(target.Sigma)))


def standard_gradient(A, target: Target) -> np.ndarray:
    A = _check(A, target)
    E = _standard_product(A) - target.R
    return _chain_gradient(A, E, target.Sigma)


def finite_diff_gradient(A, target: Target, step: float = 1e-5, *, parameterization: str = "residual") -> np.ndarray:
    """Entrywise central differences of the excess risk."""
    if step <= 0:
        raise ValueError("step must be positive")
    A = _check(A, target).copy()
    f = (lambda X: excess_risk(X, target).excess) if parameterization == "residual" else (
        lambda X: standard_excess(X, target)
    )
    G = np.empty_like(A)
    for idx in np.ndindex(A.shape):
        orig = A[idx]
        A[idx] = orig + step
        fp = f(A)
        A[idx] = orig - step
        fm = f(A)
        A[idx] = orig
        G[idx] = (fp - fm) / (2 * step)
    return G


def lower_bound_constant(ell: int, tau: float, sigma_min_sigma: float) -> float:
    """4 l (1 - tau)^(2l - 2) sigma_min(Sigma)."""
    return 4.0 * ell * (1.0 - tau) ** (2 * ell - 2) * sigma_min_sigma


def check_gradient_lower_bound(A, target: Target, tau: float) -> BoundCheck:
    """Compare ||grad f||_F^2 against 4 l (1-tau)^(2l-2) sigma_min(Sigma) (f - C_opt).

    C_opt equals C because E = 0 is attainable for every R.
    """
    A = _check(A, target)
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    mn = float(maxnorm(A))
    if mn > tau:
        raise OutsideBall(f"maxnorm {mn:.6g} exceeds tau = {tau}")
    lhs = float(_frob2(gradient(A, target)).sum())
    smin = float(np.linalg.eigvalsh(target.Sigma).min())
    rhs = lower_bound_constant(A.shape[0], tau, max(smin, 0.0)) * excess_risk(A, target).excess
    return BoundCheck(lhs=lhs, rhs=rhs, holds=lhs >= rhs * (1 - BOUND_RTOL), tau=tau, maxnorm=mn)


def sample_ball(rng: np.random.Generator, n: int, ell: int, d: int, tau: float) -> np.ndarray:
    """n stacks in B_tau: each slice a Gaussian direction rescaled to a spectral
    norm drawn uniformly from [0, tau]."""
    G = rng.standard_normal((n, ell, d, d))
    norms = matcore.spectral_norm(G.reshape(-1, d, d)).reshape(n, ell)
    radii = rng.uniform(0.0, tau, size=(n, ell))
    return G * (radii / norms)[..., None, None]


def random_psd(rng: np.random.Generator, d: int, n: int | None = None, floor: float = 0.05) -> np.ndarray:
    """Random symmetric positive definite matrices W W^T / d + floor I."""
    shape = (d, d) if n is None else (n, d, d)
    W = rng.standard_normal(shape)
    return W @ np.swapaxes(W, -1, -2) / d + floor * np.eye(d)


@dataclass
class SweepResult:
    tau: float
    ell: int
    d: int
    lhs: np.ndarray
    rhs: np.ndarray
    excess: np.ndarray
    grad_norm: np.ndarray
    maxnorm: np.ndarray
    sigma_min: np.ndarray

    @property
    def relative_slack(self) -> np.ndarray:
        return _relative_slack(self.lhs, self.rhs)

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.lhs >= self.rhs * (1 - BOUND_RTOL)))

    def critical_points_are_optimal(self, grad_tol: float = 1e-10) -> bool:
        """Samples with ||grad|| <= grad_tol must have excess <= grad_tol / c."""
        c = 4.0 * self.ell * (1.0 - self.tau) ** (2 * self.ell - 2) * self.sigma_min
        crit = self.grad_norm <= grad_tol
        return bool(np.all(self.excess[crit] <= grad_tol / c[crit]))


def bound_sweep(
    rng: np.random.Generator,
    tau: float,
    ell: int,
    d: int,
    n: int,
    *,
    target: Target | None = None,
    optimum_every: int = 10,
) -> SweepResult:
    """Evaluate the lower bound on n random stacks in B_tau.

    Without a fixed ``target`` each sample gets its own Gaussian R and random
    positive definite Sigma, and every ``optimum_every``-th sample uses the
    target realized by its own stack (E = 0) so that critical points occur.
    """
    A = sample_ball(rng, n, ell, d, tau)
    if target is None:
        R = rng.standard_normal((n, d, d))
        Sigma = random_psd(rng, d, n)
        if optimum_every:
            sel = slice(0, n, optimum_every)
            R[sel] = stack_product(A[sel])
    else:
        R = np.broadcast_to(target.R, (n, d, d))
        Sigma = np.broadcast_to(target.Sigma, (n, d, d))
    excess = batch_excess(A, R, matcore.psd_sqrt(Sigma))
    G = batch_gradient(A, R, Sigma)
    lhs = np.sum(G * G, axis=(-3, -2, -1))
    smin = np.clip(np.linalg.eigvalsh(Sigma)[..., 0], 0.0, None)
    rhs = 4.0 * ell * (1.0 - tau) ** (2 * ell - 2) * smin * excess
    return SweepResult(
        tau=tau,
        ell=ell,
        d=d,
        lhs=lhs,
        rhs=rhs,
        excess=excess,
        grad_norm=np.sqrt(lhs),
        maxnorm=maxnorm(A),
        sigma_min=smin,
    )
