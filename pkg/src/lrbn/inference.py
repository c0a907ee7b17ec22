"""MAP inference of latent configurations by coordinate ascent.

The posterior P(h|x) is approximated by its conditional pseudo-likelihood:
each latent unit is set to the mode of its full conditional given all other
units (iterated conditional modes). Each accepted update can only increase
the joint probability, so the sweep converges to a single-flip local
maximum. Brute-force enumeration oracles are included for testing at desk
scale.

Updates within one sample are sequential (the monotonicity guarantee needs
sequential acceptance); parallelism is applied across samples instead, via
the *_batch variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    LayerParams,
    VISIBLE_KINDS,
    conditional_logprob_visible,
    prior_logprob,
    sigmoid,
    softplus,
)

SWEEP_ORDERS = ("ascending", "seeded_random_permutation")

BRUTEFORCE_MAX_UNITS = 20


@dataclass(frozen=True)
class IcmConfig:
    max_sweeps: int = 10
    sweep_order: str = "ascending"
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.sweep_order not in SWEEP_ORDERS:
            raise ValueError(f"sweep_order must be one of {SWEEP_ORDERS}")


@dataclass
class IcmResult:
    state: np.ndarray
    final_joint_logprob: float
    sweeps_used: int
    converged: bool
    delta_evals: int = 0
    trace: list = field(default_factory=list)  # joint after each accepted flip


def pair_joint_logprob(params: LayerParams, x, h, kind: str) -> float:
    """log P(x, h) for a standalone two-layer model."""
    return prior_logprob(params.d, h) + conditional_logprob_visible(
        params, h, x, kind
    )


def pair_joint_batch(params: LayerParams, X, H, kind: str) -> np.ndarray:
    """log P(x, h) for row-aligned (X, H), vectorized over rows."""
    X = np.asarray(X, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    prior = H @ params.d - np.sum(softplus(params.d))
    A = H @ params.W.T + params.b
    if kind == "binary":
        return prior + np.sum(X * A - softplus(A), axis=1)
    R = X - A
    return prior - 0.5 * np.sum(R * R, axis=1) - 0.5 * X.shape[1] * np.log(2 * np.pi)


def init_latent(params: LayerParams, x, kind: str) -> np.ndarray:
    """Feed-forward initialization: threshold the factorized posterior.

    The link directions are dropped so the units decouple; for gaussian
    input the diagonal of the induced quadratic term is kept as a
    per-unit correction s_j = 0.5 * sum_i w_ij^2. Ties go to 0.
    """
    return init_latent_batch(params, np.asarray(x, dtype=np.float64)[None, :], kind)[0]


def init_latent_batch(params: LayerParams, X, kind: str) -> np.ndarray:
    if kind not in VISIBLE_KINDS:
        raise ValueError(f"kind must be one of {VISIBLE_KINDS}")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != params.n_lower:
        raise ValueError(
            f"dimension mismatch: x ({X.shape[1]}) vs W {params.W.shape}"
        )
    pre = X @ params.W + params.d
    if kind == "gaussian":
        pre -= 0.5 * np.sum(params.W * params.W, axis=0)
    return (pre > 0).astype(np.float64)


def flip_delta(params: LayerParams, j: int, h, x, activations, kind: str) -> float:
    """log P(h_j=1, h_-j, x) - log P(h_j=0, h_-j, x).

    `activations` must be W @ h + b evaluated with h_j = 0; the caller
    maintains this cache incrementally, making each call O(n_d).
    """
    w = params.W[:, j]
    a0 = np.asarray(activations, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kind == "binary":
        return float(
            params.d[j] + x @ w - np.sum(softplus(a0 + w) - softplus(a0))
        )
    r = x - a0
    return float(params.d[j] + r @ w - 0.5 * (w @ w))


def _sweep_orders(n_h: int, cfg: IcmConfig):
    if cfg.sweep_order == "ascending":
        base = np.arange(n_h)
        while True:
            yield base
    else:
        rng = np.random.default_rng(cfg.rng_seed)
        while True:
            yield rng.permutation(n_h)


def icm_map(
    params: LayerParams,
    x,
    init,
    cfg: IcmConfig = IcmConfig(),
    kind: str = "binary",
    record_trace: bool = False,
) -> IcmResult:
    """Coordinate-ascent MAP of h given x for a standalone layer pair.

    Sweeps the units in the configured order, flipping each to the mode of
    its full conditional (tie -> 0); stops when a full sweep changes nothing
    or max_sweeps is reached.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    h = np.asarray(init, dtype=np.float64).ravel().copy()
    if h.size != params.n_upper or x.size != params.n_lower:
        raise ValueError(
            f"dimension mismatch: x ({x.size}), init ({h.size}) vs W {params.W.shape}"
        )
    n_h = h.size
    if n_h == 0:
        return IcmResult(h, pair_joint_logprob(params, x, h, kind), 0, True)

    W = params.W
    a = W @ h + params.b
    trace = []
    running = pair_joint_logprob(params, x, h, kind) if record_trace else 0.0
    sweeps = 0
    converged = False
    evals = 0
    orders = _sweep_orders(n_h, cfg)
    for _ in range(cfg.max_sweeps):
        sweeps += 1
        changed = False
        for j in next(orders):
            w = W[:, j]
            a0 = a - w if h[j] else a
            delta = flip_delta(params, j, h, x, a0, kind)
            evals += 1
            new = 1.0 if delta > 0 else 0.0
            if new != h[j]:
                a = a0 + w if new else a0
                if record_trace:
                    running += delta if new else -delta
                    trace.append(running)
                h[j] = new
                changed = True
        if not changed:
            converged = True
            break
    final = pair_joint_logprob(params, x, h, kind)
    return IcmResult(h, final, sweeps, converged, evals, trace)


def icm_map_batch(params: LayerParams, X, H_init, cfg: IcmConfig = IcmConfig(),
                  kind: str = "binary"):
    """Vectorized icm_map across the rows of X.

    Within each sample the updates are sequential over units, exactly as in
    icm_map; samples are independent. Returns (H, converged, sweeps_used).
    """
    X = np.asarray(X, dtype=np.float64)
    H = np.asarray(H_init, dtype=np.float64).copy()
    m, n_h = H.shape
    if X.shape != (m, params.n_lower) or n_h != params.n_upper:
        raise ValueError("dimension mismatch in batch ICM")
    converged = np.zeros(m, dtype=bool)
    sweeps_used = np.zeros(m, dtype=np.int64)
    if n_h == 0 or m == 0:
        return H, np.ones(m, dtype=bool), sweeps_used
    W, b, d = params.W, params.b, params.d
    wsq = 0.5 * np.sum(W * W, axis=0)
    active = np.arange(m)
    A = H @ W.T + b
    orders = _sweep_orders(n_h, cfg)
    for _ in range(cfg.max_sweeps):
        Xa, Ha, Aa = X[active], H[active], A[active]
        sweeps_used[active] += 1
        changed = np.zeros(active.size, dtype=bool)
        for j in next(orders):
            w = W[:, j]
            A0 = Aa - np.outer(Ha[:, j], w)
            if kind == "binary":
                delta = d[j] + Xa @ w - np.sum(softplus(A0 + w) - softplus(A0), axis=1)
            else:
                delta = d[j] + (Xa - A0) @ w - wsq[j]
            new = (delta > 0).astype(np.float64)
            diff = new - Ha[:, j]
            rows = diff != 0
            Aa = A0 + np.outer(new, w)
            Ha[:, j] = new
            changed |= rows
        H[active], A[active] = Ha, Aa
        done = ~changed
        converged[active[done]] = True
        active = active[changed]
        if active.size == 0:
            break
    return H, converged, sweeps_used


def middle_layer_params(lower_pair: LayerParams, upper_pair: LayerParams,
                        h_above) -> LayerParams:
    """Effective standalone pair for a middle latent layer.

    Given its upper neighbor, the middle units have independent priors
    sigmoid(c_j) with c = W_upper @ h_above + d_upper, so conditioning on
    (h_below, h_above) reduces to a two-layer problem with d replaced by c.
    """
    h_above = np.asarray(h_above, dtype=np.float64).ravel()
    if h_above.size != upper_pair.n_upper:
        raise ValueError("h_above does not match the upper pair")
    if upper_pair.n_lower != lower_pair.n_upper:
        raise ValueError("layer pairs do not chain at the middle layer")
    c = upper_pair.W @ h_above + upper_pair.b
    return lower_pair.replace(d=c)


def icm_map_middle(lower_pair: LayerParams, upper_pair: LayerParams,
                   h_below, h_above, init, cfg: IcmConfig = IcmConfig()) -> IcmResult:
    """MAP of a middle latent layer given both neighboring layers."""
    eff = middle_layer_params(lower_pair, upper_pair, h_above)
    return icm_map(eff, h_below, init, cfg, kind="binary")


def icm_map_middle_batch(lower_pair, upper_pair, H_below, H_above, H_init,
                         cfg: IcmConfig = IcmConfig()):
    """Batch middle-layer MAP; rows may have different upper states.

    The effective prior c differs per row, so the generic batch kernel is
    inlined here with a per-row c matrix.
    """
    H_below = np.asarray(H_below, dtype=np.float64)
    H_above = np.asarray(H_above, dtype=np.float64)
    H = np.asarray(H_init, dtype=np.float64).copy()
    m, n_h = H.shape
    C = H_above @ upper_pair.W.T + upper_pair.b  # (m, n_h) per-row priors
    W, b = lower_pair.W, lower_pair.b
    converged = np.zeros(m, dtype=bool)
    active = np.arange(m)
    A = H @ W.T + b
    orders = _sweep_orders(n_h, cfg)
    for _ in range(cfg.max_sweeps):
        Xa, Ha, Aa, Ca = H_below[active], H[active], A[active], C[active]
        changed = np.zeros(active.size, dtype=bool)
        for j in next(orders):
            w = W[:, j]
            A0 = Aa - np.outer(Ha[:, j], w)
            delta = Ca[:, j] + Xa @ w - np.sum(softplus(A0 + w) - softplus(A0), axis=1)
            new = (delta > 0).astype(np.float64)
            diff = new - Ha[:, j]
            rows = diff != 0
            Aa = A0 + np.outer(new, w)
            Ha[:, j] = new
            changed |= rows
        H[active], A[active] = Ha, Aa
        converged[active[~changed]] = True
        active = active[changed]
        if active.size == 0:
            break
    return H, converged


def enumerate_binary(n: int) -> np.ndarray:
    """All binary vectors of length n, lexicographically ordered, as rows."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.float64)
    grid = np.indices((2,) * n).reshape(n, -1).T
    return np.ascontiguousarray(grid, dtype=np.float64)


def all_pair_joints(params: LayerParams, x, H, kind: str) -> np.ndarray:
    """log P(x, h) for every row h of H, vectorized."""
    x = np.asarray(x, dtype=np.float64).ravel()
    prior = H @ params.d - np.sum(softplus(params.d))
    A = H @ params.W.T + params.b
    if kind == "binary":
        return prior + A @ x - np.sum(softplus(A), axis=1)
    R = x - A
    return prior - 0.5 * np.sum(R * R, axis=1) - 0.5 * x.size * np.log(2 * np.pi)


def bruteforce_map(params: LayerParams, x, kind: str = "binary"):
    """Exact MAP by enumeration of all 2^n_h states (n_h <= 20).

    Ties break to the lexicographically smallest state.
    """
    n_h = params.n_upper
    if n_h > BRUTEFORCE_MAX_UNITS:
        raise ValueError(
            f"n_h = {n_h} exceeds brute-force limit {BRUTEFORCE_MAX_UNITS}"
        )
    best_val = -np.inf
    best_h = None
    chunk = 1 << 14
    H_all = enumerate_binary(n_h)
    for start in range(0, H_all.shape[0], chunk):
        H = H_all[start : start + chunk]
        vals = all_pair_joints(params, x, H, kind)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_h = H[k].copy()
    return best_h, best_val
