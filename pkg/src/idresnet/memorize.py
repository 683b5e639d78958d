"""Explicit construction of a ReLU residual network that fits a labelled
dataset exactly.

Architecture::

    h_0 = A0 x
    h_j = h_{j-1} + V_j relu(U_j h_{j-1} + s_j),   j = 1..l
    y   = V_out relu(U_out h_l + s_out)            (no residual addition)

Each middle block is a *selector*: its hidden unit i fires only on the i-th
selected hidden state, so the block rewrites k chosen states into their
surrogate label vectors and leaves every other state untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicatePoints,
    ProjectionFailed,
    SeparationViolated,
    SurrogateCorrelated,
)

UNIT_NORM_TOL = 1e-10
DUPLICATE_TOL = 1e-12
FIT_TOL = 1e-8
DEFAULT_C = 10.0
DEFAULT_RETRIES = 5
SURROGATE_DRAWS = 1000
# margin parameter rho' as a fraction of the data separation rho
RHO_PRIME_FRACTION = 1.0 / 6.0

_STAGE_PROJECTION = 1
_STAGE_SURROGATES = 2


# ---------------------------------------------------------------- data ----


def check_separation(points) -> float:
    """Minimum squared pairwise distance."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two points")
    sq = np.einsum("ij,ij->i", X, X)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D2, np.inf)
    i, j = np.unravel_index(np.argmin(D2), D2.shape)
    m = float(max(D2[i, j], 0.0))
    if m < DUPLICATE_TOL:
        raise DuplicatePoints(f"points {min(i, j) + 1} and {max(i, j) + 1} coincide")
    return m


@dataclass
class Dataset:
    """Unit-norm points with labels in 1..r and certified separation rho.

    ``rho=None`` sets rho to the measured minimum squared distance.
    """

    points: np.ndarray
    labels: np.ndarray
    rho: float | None = None
    r: int | None = None

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DimensionMismatch(f"points must be an (n, d) array, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise DimensionMismatch(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} points")
        if not np.all(np.isfinite(X)):
            raise ValueError("points have non-finite entries")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(int)
        r = int(y.max()) if self.r is None else int(self.r)
        if y.min() < 1 or y.max() > r:
            raise ValueError(f"labels must lie in 1..{r}")
        dev = np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0))
        if dev > UNIT_NORM_TOL:
            raise ValueError(f"points must have unit norm (max deviation {dev:.2e})")
        if X.shape[0] >= 2:
            measured = check_separation(X)
            if self.rho is None:
                self.rho = measured
            elif measured < self.rho * (1 - 1e-12):
                raise SeparationViolated(f"min squared distance {measured:.6g} < rho = {self.rho}")
        elif self.rho is None:
            self.rho = 1.0
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        self.points, self.labels, self.r = X, y, r

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def sample_sphere_dataset(rng: np.random.Generator, n: int, d: int, r: int, rho: float, max_draws: int = 10**6) -> Dataset:
    """Uniform points on the unit sphere, rejecting any candidate closer than
    sqrt(rho) to an accepted point.  Labels are uniform in 1..r."""
    X = np.empty((n, d))
    m = draws = 0
    while m < n:
        draws += 1
        if draws > max_draws:
            raise RuntimeError(f"could only place {m} of {n} points with separation {rho}")
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        if m and np.max(X[:m] @ x) > 1.0 - rho / 2.0:
            continue
        X[m] = x
        m += 1
    labels = rng.integers(1, r + 1, size=n)
    return Dataset(X, labels, rho=rho, r=r)


# -------------------------------------------------------------- blocks ----


@dataclass
class ResidualBlock:
    """T(h) = V relu(U h + s)."""

    U: np.ndarray
    V: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.s.shape != (self.U.shape[0],):
            raise DimensionMismatch("block shapes do not compose")
        if self.V.shape[1] != self.U.shape[0]:
            raise DimensionMismatch(f"V has {self.V.shape[1]} columns, U has {self.U.shape[0]} rows")

    @property
    def weight_count(self) -> int:
        return self.U.size + self.V.size

    def preactivation(self, h: np.ndarray) -> np.ndarray:
        return h @ self.U.T + self.s


def block_apply(block: ResidualBlock, h: np.ndarray) -> np.ndarray:
    """V relu(U h + s).  ``h`` may be a single vector or a batch of rows."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != block.U.shape[1]:
        raise DimensionMismatch(f"input has dimension {h.shape[-1]}, block expects {block.U.shape[1]}")
    return np.maximum(block.preactivation(h), 0.0) @ block.V.T


def _selector(rows: np.ndarray, outputs: np.ndarray, threshold: float, width: int) -> ResidualBlock:
    """Hidden unit i has weights rows[i] and bias -threshold; its output column
    is scaled so that the unit's response to rows[i] reproduces outputs[i]."""
    m, k_in = rows.shape
    U = np.zeros((width, k_in))
    U[:m] = rows
    V = np.zeros((outputs.shape[1], width))
    V[:, :m] = (outputs / (np.einsum("ij,ij->i", rows, rows) - threshold)[:, None]).T
    return ResidualBlock(U, V, np.full(width, -threshold))


def _check_selector_inputs(alphas: np.ndarray, S: np.ndarray, rho_prime: float) -> None:
    threshold = 1.0 - 2.0 * rho_prime
    sq = np.einsum("ij,ij->i", alphas, alphas)
    bad = np.flatnonzero((sq < 1.0 - rho_prime) | (sq > 1.0 + rho_prime))
    if bad.size:
        i = bad[0]
        raise SeparationViolated(f"||alpha_{i + 1}||^2 = {sq[i]:.6g} outside [1 - rho', 1 + rho'] with rho' = {rho_prime:.6g}")
    if S.size == 0:
        return
    G = alphas[S] @ alphas.T
    G[np.arange(S.size), S] = -np.inf
    a, j = np.unravel_index(np.argmax(G), G.shape)
    if G[a, j] > threshold:
        raise SeparationViolated(
            f"<alpha_{S[a] + 1}, alpha_{j + 1}> = {G[a, j]:.6g} exceeds 1 - 2 rho' = {threshold:.6g}"
        )


def build_selector_block(alphas, betas, S, rho_prime: float, width: int | None = None) -> ResidualBlock:
    """Block with T(alpha_i) = beta_i - alpha_i for i in S and T(alpha_i) = 0 otherwise.

    ``S`` holds 0-based indices.  The hidden width defaults to the state
    dimension; hidden units beyond |S| get zero weights and output columns.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    S = np.asarray(S, dtype=int).reshape(-1)
    width = alphas.shape[1] if width is None else width
    if S.size > width:
        raise DimensionMismatch(f"|S| = {S.size} exceeds block width {width}")
    if betas.shape[1] != alphas.shape[1]:
        raise DimensionMismatch("alphas and betas must share their dimension")
    _check_selector_inputs(alphas, S, rho_prime)
    return _selector(alphas[S], betas[S] - alphas[S], 1.0 - 2.0 * rho_prime, width)


def selector_margin(block: ResidualBlock, alphas: np.ndarray, S) -> float:
    """Largest pre-activation over (input, unit) pairs that must stay silent.

    Negative means every non-selected response is strictly below zero.
    """
    S = np.asarray(S, dtype=int).reshape(-1)
    P = block.preactivation(np.asarray(alphas, dtype=float))
    P[S, np.arange(S.size)] = -np.inf
    return float(P.max())


# ---------------------------------------------------- random stages ----


def _stage_rng(seed: int, attempt: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, attempt, stage]))


def _isometry(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Haar-random matrix with orthonormal columns."""
    Q, Rm = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.sign(np.diag(Rm))


def projection_mode(points, k: int) -> str:
    n, d = np.shape(points)
    if k >= d:
        return "isometry"
    if k >= np.linalg.matrix_rank(points):
        return "span-isometry"
    return "gaussian"


def jl_project(points, k: int, seed=None, rho_prime: float | None = None, *, a0=None) -> tuple[np.ndarray, np.ndarray]:
    """Random map A0 (k x d) and projected states z_i = A0 x_i.

    When k is at least the dimension of the span of the points the map is a
    random isometry on that span, so norms and distances are kept exactly.
    Otherwise A0 has i.i.d. N(0, 1/k) entries.  With ``rho_prime`` given,
    the projected states are checked against 1 - rho' <= ||z||^2 <= 1 + rho'
    and ||z_i - z_j||^2 >= rho'.  ``a0`` overrides the random draw.
    """
    X = np.asarray(points, dtype=float)
    n, d = X.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if a0 is not None:
        A0 = np.asarray(a0, dtype=float)
        if A0.shape != (k, d):
            raise DimensionMismatch(f"A0 must be {k}x{d}, got {A0.shape}")
    else:
        mode = projection_mode(X, k)
        if mode == "isometry":
            A0 = _isometry(rng, k, d)
        elif mode == "span-isometry":
            _, sv, Vt = np.linalg.svd(X, full_matrices=False)
            basis = Vt[sv > sv[0] * max(n, d) * np.finfo(float).eps]
            A0 = _isometry(rng, k, basis.shape[0]) @ basis
        else:
            A0 = rng.standard_normal((k, d)) / math.sqrt(k)
    Z = X @ A0.T
    if rho_prime is not None:
        sq = np.einsum("ij,ij->i", Z, Z)
        if sq.min() < 1 - rho_prime or sq.max() > 1 + rho_prime:
            raise ProjectionFailed(
                f"projected squared norms span [{sq.min():.4f}, {sq.max():.4f}], need [{1 - rho_prime:.4f}, {1 + rho_prime:.4f}]"
            )
        if n >= 2:
            D2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
            np.fill_diagonal(D2, np.inf)
            if D2.min() < rho_prime:
                raise ProjectionFailed(f"projected squared distance {D2.min():.4g} < rho' = {rho_prime:.4g}")
    return A0, Z


def sample_surrogates(
    r: int,
    k: int,
    seed=None,
    *,
    z=None,
    rho_prime: float | None = None,
    max_draws: int = SURROGATE_DRAWS,
) -> np.ndarray:
    """r random unit vectors in R^k (rows) with pairwise |<q_a, q_b>| < 0.5.

    With ``rho_prime`` the pairwise inner products must also stay below
    1 - 2 rho' (the readout threshold), and with ``z`` every <q_s, z_i> must
    stay below 1 - 2 rho' so selector rows never fire on a finished state.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = 0.5 if rho_prime is None else min(0.5, 1.0 - 2.0 * rho_prime)
    Z = None if z is None else np.asarray(z, dtype=float)
    worst = ""
    for _ in range(max_draws):
        Q = rng.standard_normal((r, k))
        Q /= np.linalg.norm(Q, axis=1, keepdims=True)
        if r > 1:
            G = Q @ Q.T
            np.fill_diagonal(G, 0.0)
            # the 0.5 bound is on |<q_a, q_b>|; the readout threshold only on <q_a, q_b>
            if np.abs(G).max() >= 0.5 or G.max() >= limit:
                worst = f"max pairwise inner product {np.abs(G).max():.4f}"
                continue
        if Z is not None and rho_prime is not None:
            m = (Z @ Q.T).max()
            if m > 1.0 - 2.0 * rho_prime:
                worst = f"<q, z> reaches {m:.4f} > 1 - 2 rho' = {1 - 2 * rho_prime:.4f}"
                continue
        return Q
    raise SurrogateCorrelated(f"no valid surrogate set in {max_draws} draws ({worst})")


# ------------------------------------------------------------- network ----


@dataclass
class MemorizerNet:
    A0: np.ndarray
    blocks: list[ResidualBlock]
    final_block: ResidualBlock
    surrogates: np.ndarray
    k: int
    ell: int
    rho: float
    rho_prime: float
    meta: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.surrogates.shape[0]

    @property
    def d(self) -> int:
        return self.A0.shape[1]

    @property
    def parameter_count(self) -> int:
        """Weight entries (biases excluded): d k + 2 l k^2 + k r + r^2."""
        return self.A0.size + sum(b.weight_count for b in self.blocks) + self.final_block.weight_count

    @property
    def bias_count(self) -> int:
        return sum(b.s.size for b in self.blocks) + self.final_block.s.size

    def parameter_bound(self) -> int:
        return self.d * self.k + 2 * self.ell * self.k**2 + self.k * self.r + self.r**2

    def to_json(self) -> dict:
        from .matio import matrix_to_json

        def blk(b):
            return {"U": matrix_to_json(b.U), "V": matrix_to_json(b.V), "s": [float(x) for x in b.s]}

        return {
            "k": self.k,
            "ell": self.ell,
            "rho": self.rho,
            "rho_prime": self.rho_prime,
            "A0": matrix_to_json(self.A0),
            "blocks": [blk(b) for b in self.blocks],
            "final_block": blk(self.final_block),
            "surrogates": matrix_to_json(self.surrogates),
            "parameter_count": self.parameter_count,
            "parameter_bound": self.parameter_bound(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MemorizerNet":
        from .matio import matrix_from_json

        def blk(o):
            return ResidualBlock(matrix_from_json(o["U"]), matrix_from_json(o["V"]), np.asarray(o["s"], dtype=float))

        return cls(
            A0=matrix_from_json(obj["A0"]),
            blocks=[blk(o) for o in obj["blocks"]],
            final_block=blk(obj["final_block"]),
            surrogates=matrix_from_json(obj["surrogates"]),
            k=int(obj["k"]),
            ell=int(obj["ell"]),
            rho=float(obj["rho"]),
            rho_prime=float(obj["rho_prime"]),
            meta=dict(obj.get("meta", {})),
        )


def hidden_width(n: int, rho: float, r: int, c: float = DEFAULT_C) -> int:
    """k = ceil(c ln n / rho^2), floored for the surrogate condition and capped at n."""
    raw = math.ceil(c * math.log(n) / rho**2) if n > 1 else 1
    floor = max(math.ceil(4 * math.log(r)) + 1 if r > 1 else 1, 2)
    return max(1, min(max(raw, floor), n))


def hidden_states(net: MemorizerNet, x) -> list[np.ndarray]:
    """[h_0, h_1, ..., h_l] for a single input or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d:
        raise DimensionMismatch(f"input has dimension {x.shape[-1]}, network expects {net.d}")
    h = x @ net.A0.T
    out = [h]
    for b in net.blocks:
        h = h + block_apply(b, h)
        out.append(h)
    return out


def forward(net: MemorizerNet, x) -> np.ndarray:
    return block_apply(net.final_block, hidden_states(net, x)[-1])


def predict(net: MemorizerNet, x) -> np.ndarray:
    """1-based class index of the largest output."""
    return np.argmax(forward(net, x), axis=-1) + 1


def _build_once(data: Dataset, k: int, ell: int, rho_prime: float, seed: int, attempt: int, a0) -> MemorizerNet:
    n = data.n
    A0, Z = jl_project(data.points, k, _stage_rng(seed, attempt, _STAGE_PROJECTION), rho_prime, a0=a0)
    Q = sample_surrogates(
        data.r,
        k,
        _stage_rng(seed, attempt, _STAGE_SURROGATES),
        z=Z if ell > 1 else None,
        rho_prime=rho_prime,
    )
    V_targets = Q[data.labels - 1]
    blocks = []
    for j in range(ell):
        lo, hi = j * k, min((j + 1) * k, n)
        alphas = np.vstack([V_targets[:lo], Z[lo:]])
        blocks.append(build_selector_block(alphas, V_targets, np.arange(lo, hi), rho_prime, width=k))
    _check_selector_inputs(Q, np.arange(data.r), rho_prime)
    final = _selector(Q, np.eye(data.r), 1.0 - 2.0 * rho_prime, data.r)
    return MemorizerNet(A0, blocks, final, Q, k, ell, data.rho, rho_prime)


def build_memorizer(
    data: Dataset,
    seed: int = 0,
    *,
    c: float = DEFAULT_C,
    retries: int = DEFAULT_RETRIES,
    k: int | None = None,
    a0=None,
) -> MemorizerNet:
    """Construct a network with forward(x_i) = e_{label_i} for every point.

    Each attempt draws fresh randomness for the projection and the surrogate
    labels from child seeds of ``seed``; after ``retries`` failed attempts the
    last error is re-raised.
    """
    n = data.n
    k = hidden_width(n, data.rho, data.r, c) if k is None else k
    ell = math.ceil(n / k)
    rho_prime = RHO_PRIME_FRACTION * data.rho
    last = None
    for attempt in range(retries):
        try:
            net = _build_once(data, k, ell, rho_prime, seed, attempt, a0)
        except (ProjectionFailed, SurrogateCorrelated, SeparationViolated) as exc:
            last = exc
            continue
        net.meta = {
            "seed": seed,
            "attempts": attempt + 1,
            "c": c,
            "projection": "override" if a0 is not None else projection_mode(data.points, k),
            "n": n,
            "d": data.d,
            "r": data.r,
        }
        return net
    assert last is not None
    raise type(last)(f"{last} (after {retries} attempts)") from last


@dataclass
class FitReport:
    fraction: float
    max_deviation: float
    layer_ok: list[bool]
    layer_max_deviation: list[float]
    n: int

    @property
    def first_broken_layer(self) -> int | None:
        """1-based index of the first block whose states break the invariant."""
        for j, ok in enumerate(self.layer_ok):
            if not ok:
                return j
        return None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "fraction": self.fraction,
            "max_deviation": self.max_deviation,
            "layer_ok": self.layer_ok,
            "layer_max_deviation": self.layer_max_deviation,
            "first_broken_layer": self.first_broken_layer,
        }


def verify_fit(net: MemorizerNet, data: Dataset, tol: float = FIT_TOL) -> FitReport:
    """Fraction of points mapped to their one-hot label, plus the per-layer check
    that after block j the first j k states are surrogates and the rest are
    still their projections.  ``layer_ok[0]`` refers to h_0."""
    H = hidden_states(net, data.points)
    Y = block_apply(net.final_block, H[-1])
    onehot = np.eye(net.r)[data.labels - 1]
    dev = np.max(np.abs(Y - onehot), axis=1)
    Z = H[0]
    V = net.surrogates[data.labels - 1]
    layer_dev = []
    for j, h in enumerate(H):
        expected = np.vstack([V[: j * net.k], Z[j * net.k :]])
        layer_dev.append(float(np.max(np.abs(h - expected))))
    return FitReport(
        fraction=float(np.mean(dev <= tol)),
        max_deviation=float(dev.max()),
        layer_ok=[m <= tol for m in layer_dev],
        layer_max_deviation=layer_dev,
        n=data.n,
    )
