"""Deterministic full-batch gradient descent on the population risk."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from . import landscape, matcore
from .errors import Diverged
from .factorize import Target, factorize_general, maxnorm, stack_product

DIVERGENCE_LIMIT = 1e12
STUCK_GRAD_TOL = 1e-12

Parameterization = Literal["residual", "standard"]
InitKind = Literal["zero", "gaussian", "factorized"]


@dataclass
class TrainConfig:
    target: Target
    depth: int
    parameterization: Parameterization = "residual"
    init: InitKind = "zero"
    init_scale: float | None = None
    step_size: float = 0.05
    max_steps: int = 100_000
    stop_excess: float = 1e-10
    tau_monitor: float | None = None
    seed: int = 0
    backtracking: bool = False
    project_tau: float | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.stop_excess < 0:
            raise ValueError("stop_excess must be nonnegative")
        if self.parameterization not in ("residual", "standard"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.init not in ("zero", "gaussian", "factorized"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.tau_monitor is not None and not 0 < self.tau_monitor < 1:
            raise ValueError("tau_monitor must lie in (0, 1)")
        if self.project_tau is not None and not 0 < self.project_tau < 1:
            raise ValueError("project_tau must lie in (0, 1)")

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        from .matio import matrix_from_json

        t = obj["target"]
        target = Target(
            R=matrix_from_json(t["R"]),
            Sigma=matrix_from_json(t["Sigma"]) if t.get("Sigma") is not None else None,
            noise_var=float(t.get("noise_var", 0.0)),
        )
        known = {f for f in cls.__dataclass_fields__} - {"target"}
        unknown = set(obj) - known - {"target"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: obj[k] for k in known if k in obj}
        return cls(target=target, **kwargs)

    def to_json(self) -> dict:
        from .matio import matrix_to_json

        out = {k: v for k, v in asdict(self).items() if k != "target"}
        out["target"] = {
            "R": matrix_to_json(self.target.R),
            "Sigma": matrix_to_json(self.target.Sigma),
            "noise_var": self.target.noise_var,
        }
        return out


@dataclass
class TraceRecord:
    step: int
    excess: float
    grad_norm: float
    maxnorm: float
    eq10_slack: float | None = None
    step_size: float | None = None


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final: np.ndarray | None = None
    reason: str = ""
    left_ball: bool | None = None

    @property
    def excess(self) -> np.ndarray:
        return np.array([r.excess for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "excess", "grad_norm", "maxnorm", "eq10_slack"])
            for r in self.records:
                slack = "" if r.eq10_slack is None else repr(r.eq10_slack)
                w.writerow([r.step, repr(r.excess), repr(r.grad_norm), repr(r.maxnorm), slack])


def project_to_ball(A: np.ndarray, tau: float) -> np.ndarray:
    """Shrink every slice whose spectral norm exceeds tau back onto the sphere of radius tau."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    A = np.array(A, dtype=float)
    norms = matcore.spectral_norm(A)
    for i in np.flatnonzero(norms > tau):
        A[i] *= tau / norms[i]
    return A


def initial_stack(config: TrainConfig) -> np.ndarray:
    d, ell = config.target.d, config.depth
    if config.init == "zero":
        return np.zeros((ell, d, d))
    if config.init == "gaussian":
        scale = 0.01 / ell if config.init_scale is None else config.init_scale
        return np.random.default_rng(config.seed).normal(scale=scale, size=(ell, d, d))
    return factorize_general(config.target.R, ell).stack


def _objective(config: TrainConfig):
    target = config.target
    R, Sigma = target.R, target.Sigma
    root = matcore.psd_sqrt(Sigma)
    if config.parameterization == "residual":

        def value(A):
            return float(landscape.batch_excess(A, R, root))

        def grad(A):
            return landscape.batch_gradient(A, R, Sigma)

    else:

        def value(A):
            return landscape.standard_excess(A, target)

        def grad(A):
            return landscape.standard_gradient(A, target)

    return value, grad


def run_gd(config: TrainConfig) -> TrainTrace:
    """Iterate A <- A - eta * grad f(A) until the excess drops below
    ``stop_excess``, ``max_steps`` is reached, or the iterates diverge."""
    value, grad = _objective(config)
    tau = config.tau_monitor
    bound_const = None
    if tau is not None:
        smin = max(float(np.linalg.eigvalsh(config.target.Sigma).min()), 0.0)
        bound_const = landscape.lower_bound_constant(config.depth, tau, smin)

    trace = TrainTrace(left_ball=False if tau is not None else None)
    A = initial_stack(config)
    f = value(A)
    eta = config.step_size
    for t in range(config.max_steps + 1):
        G = grad(A)
        gnorm = float(np.linalg.norm(G))
        mn = float(maxnorm(A))
        slack = None
        if tau is not None:
            slack = gnorm**2 - bound_const * f
            if mn > tau:
                trace.left_ball = True
        trace.records.append(TraceRecord(t, f, gnorm, mn, slack, eta))
        if not math.isfinite(f) or f > DIVERGENCE_LIMIT or not math.isfinite(gnorm):
            trace.final, trace.reason = A, "diverged"
            raise Diverged(f"excess {f:.3e} at step {t}", trace)
        if f <= config.stop_excess:
            trace.reason = "stop_excess"
            break
        if t == config.max_steps:
            stuck = bool(np.all(trace.grad_norms <= STUCK_GRAD_TOL))
            trace.reason = "stuck_critical_point" if stuck else "max_steps"
            break

        eta = config.step_size
        A_new = A - eta * G
        if config.project_tau is not None:
            A_new = project_to_ball(A_new, config.project_tau)
        f_new = value(A_new)
        if config.backtracking:
            while not (f_new <= f) and eta > 1e-16:
                eta /= 2
                A_new = A - eta * G
                if config.project_tau is not None:
                    A_new = project_to_ball(A_new, config.project_tau)
                f_new = value(A_new)
        A, f = A_new, f_new
    trace.final = A
    return trace


def end_to_end(A: np.ndarray, parameterization: Parameterization = "residual") -> np.ndarray:
    """The linear map realized by a stack under either parameterization."""
    if parameterization == "residual":
        return stack_product(A)
    P = A[0]
    for layer in A[1:]:
        P = layer @ P
    return P
