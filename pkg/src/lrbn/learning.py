"""Hard-EM parameter estimation by minibatch stochastic gradient ascent.

The intractable marginal likelihood is replaced by the max-out objective
sum_m log max_h P(x^(m), h). Each minibatch alternates an E-step (MAP
completion of the latent layer via ICM) with an M-step (gradient ascent on
the completed-data log-likelihood, or the closed form for the hybrid case).
Deep models are built by greedy stacking of two-layer fits and optionally
refined by unsupervised or supervised fine-tuning over three-layer windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .inference import (
    IcmConfig,
    icm_map_batch,
    icm_map_middle_batch,
    init_latent_batch,
    pair_joint_batch,
)
from .model import DeepLRBN, LayerParams, sigmoid, softplus

OFFSET_CLAMP = 4.0
PRIOR_CLAMP = 10.0
PARAM_CONVERGENCE_RTOL = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.25
    minibatch_size: int = 20
    max_epochs: int = 50
    icm: IcmConfig = field(default_factory=IcmConfig)
    rng_seed: int = 0
    validation_size: int = 100
    early_stop_patience: int = 5
    finetune_alternations: int = 2

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.validation_size < 0:
            raise ValueError("validation_size must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class TrainReport:
    """Per-epoch mean completed-data log-likelihoods and the stop reason."""

    train_ll: list = field(default_factory=list)
    val_ll: list = field(default_factory=list)
    epochs_run: int = 0
    stop_reason: str = ""


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    T = np.zeros((labels.size, n_classes), dtype=np.float64)
    T[np.arange(labels.size), labels] = 1.0
    return T


# --- gradients --------------------------------------------------------------


def gradient_discrete(params: LayerParams, x, h):
    """Gradients of log P(x, h) for a binary-visible pair at a completed point."""
    x = np.asarray(x, dtype=np.float64).ravel()
    h = np.asarray(h, dtype=np.float64).ravel()
    if x.size != params.n_lower or h.size != params.n_upper:
        raise ValueError("dimension mismatch in gradient_discrete")
    r = x - sigmoid(params.W @ h + params.b)
    return np.outer(r, h), r, h - sigmoid(params.d)


def gradient_hybrid(params: LayerParams, x, h):
    """Gradients of log P(x, h) for a gaussian-visible pair."""
    x = np.asarray(x, dtype=np.float64).ravel()
    h = np.asarray(h, dtype=np.float64).ravel()
    if x.size != params.n_lower or h.size != params.n_upper:
        raise ValueError("dimension mismatch in gradient_hybrid")
    r = x - params.W @ h - params.b
    return np.outer(r, h), r, h - sigmoid(params.d)


def _mean_gradient(params: LayerParams, X, H, kind: str):
    """Mean completed-data gradient over a batch (rows of X and H aligned)."""
    A = H @ params.W.T + params.b
    R = X - sigmoid(A) if kind == "binary" else X - A
    m = X.shape[0]
    dW = R.T @ H / m
    db = R.mean(axis=0)
    dd = H.mean(axis=0) - sigmoid(params.d)
    return dW, db, dd


def _step(params: LayerParams, grads, lr: float) -> LayerParams:
    dW, db, dd = grads
    W = params.W + lr * dW
    b = params.b + lr * db
    d = params.d + lr * dd
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(d))):
        raise FloatingPointError(
            "non-finite parameter after update (diverged; reduce learning rate)"
        )
    return LayerParams(W, b, d)


# --- closed-form M-step (gaussian visibles) ---------------------------------


def closed_form_W(X, H, b, ridge: float = 0.0) -> np.ndarray:
    """Least-squares weights for gaussian visibles given completions.

    Solves (sum h h^T + ridge I) W^T = sum h (x - b)^T. With ridge = 0 the
    latent Gram matrix must be nonsingular.
    """
    X = np.asarray(X, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if X.shape[0] != H.shape[0] or X.shape[0] < 1:
        raise ValueError("need at least one aligned (x, h) sample")
    n_h = H.shape[1]
    G = H.T @ H + ridge * np.eye(n_h)
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(G)
        if rank < n_h:
            raise ValueError(
                f"latent Gram matrix is rank deficient ({rank} < {n_h}); "
                "pass a positive ridge"
            )
    rhs = H.T @ (X - np.asarray(b, dtype=np.float64))
    return np.linalg.solve(G, rhs).T


def closed_form_m_step(X, H, ridge: float = 1e-8) -> LayerParams:
    """Exact full-batch M-step for a gaussian-visible pair.

    W and b are fit jointly (augmenting h with a constant), which zeroes
    both summed gradients; d_j = logit(mean h_j), clamped.
    """
    X = np.asarray(X, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    m = X.shape[0]
    Haug = np.hstack([H, np.ones((m, 1))])
    G = Haug.T @ Haug + ridge * np.eye(H.shape[1] + 1)
    sol = np.linalg.solve(G, Haug.T @ X)
    W = sol[:-1].T
    b = sol[-1]
    p = np.clip(H.mean(axis=0), 1e-12, 1 - 1e-12)
    d = np.clip(np.log(p) - np.log1p(-p), -PRIOR_CLAMP, PRIOR_CLAMP)
    return LayerParams(W, b, d)


# --- single-pair training ----------------------------------------------------


def init_params(X, n_hidden: int, kind: str, seed) -> LayerParams:
    """Standard initialization: small uniform weights, data-driven offsets.

    Binary visibles get b = logit of the per-pixel mean clamped to +-4;
    gaussian visibles get the column mean. Prior biases start at 0.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n_d = X.shape[1]
    W = rng.uniform(-0.01, 0.01, size=(n_d, n_hidden))
    if kind == "binary":
        p = np.clip(X.mean(axis=0), 1e-6, 1 - 1e-6)
        b = np.clip(np.log(p) - np.log1p(-p), -OFFSET_CLAMP, OFFSET_CLAMP)
    else:
        b = X.mean(axis=0)
    return LayerParams(W, b, np.zeros(n_hidden))


class _EStepCache:
    """Per-sample warm starts: last MAP state, feed-forward init on first visit."""

    def __init__(self, m: int, n_h: int):
        self.H = np.zeros((m, n_h), dtype=np.float64)
        self.visited = np.zeros(m, dtype=bool)

    def get(self, params: LayerParams, X, idx, kind: str) -> np.ndarray:
        fresh = ~self.visited[idx]
        H = self.H[idx]
        if np.any(fresh):
            H[fresh] = init_latent_batch(params, X[fresh], kind)
        return H

    def put(self, idx, H) -> None:
        self.H[idx] = H
        self.visited[idx] = True


def _completed_ll(params: LayerParams, X, cache: _EStepCache, cfg: TrainConfig,
                  kind: str, refresh: bool) -> float:
    """Mean max-out log-likelihood; optionally re-runs ICM to refresh states."""
    idx = np.arange(X.shape[0])
    H = cache.get(params, X, idx, kind)
    if refresh:
        H, _, _ = icm_map_batch(params, X, H, cfg.icm, kind)
        cache.put(idx, H)
    return float(np.mean(pair_joint_batch(params, X, H, kind)))


def train_layer(X, n_hidden: int, cfg: TrainConfig, kind: str = "binary"):
    """Fit one latent layer by minibatch hard-EM (E-step: ICM MAP; M-step:
    gradient ascent on the completed data). Returns (LayerParams, TrainReport).

    Early stopping tracks the mean completed log-likelihood on a held-out
    validation slice (falling back to the training objective when
    validation_size is 0); the best parameters seen are returned.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty matrix")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(3)
    split_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[2])

    m = X.shape[0]
    n_val = min(cfg.validation_size, m - 1) if cfg.validation_size else 0
    perm = split_rng.permutation(m)
    X_val, X_train = X[np.sort(perm[:n_val])], X[np.sort(perm[n_val:])]

    params = init_params(X_train, n_hidden, kind, seeds[1])
    m_train = X_train.shape[0]
    train_cache = _EStepCache(m_train, n_hidden)
    val_cache = _EStepCache(n_val, n_hidden)

    report = TrainReport()
    best_obj, best_params, since_best = -np.inf, params, 0
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(m_train)
        for start in range(0, m_train, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            Xb = X_train[idx]
            Hb = train_cache.get(params, Xb, idx, kind)
            Hb, _, _ = icm_map_batch(params, Xb, Hb, cfg.icm, kind)
            train_cache.put(idx, Hb)
            params = _step(params, _mean_gradient(params, Xb, Hb, kind),
                           cfg.learning_rate)
        report.train_ll.append(
            _completed_ll(params, X_train, train_cache, cfg, kind, refresh=False)
        )
        if n_val:
            report.val_ll.append(
                _completed_ll(params, X_val, val_cache, cfg, kind, refresh=True)
            )
        report.epochs_run = epoch + 1
        obj = report.val_ll[-1] if n_val else report.train_ll[-1]
        if obj > best_obj:
            best_obj, best_params, since_best = obj, params, 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                report.stop_reason = "early_stop"
                return best_params, report
    report.stop_reason = "max_epochs"
    return best_params, report


def map_codes(params: LayerParams, X, kind: str, icm: IcmConfig = IcmConfig()):
    """Per-sample MAP latent codes under one pair, from feed-forward init."""
    X = np.asarray(X, dtype=np.float64)
    H0 = init_latent_batch(params, X, kind)
    H, _, _ = icm_map_batch(params, X, H0, icm, kind)
    return H


# --- deep models -------------------------------------------------------------


def greedy_stack(X, latent_sizes, cfg: TrainConfig, kind: str = "binary"):
    """Train latent layers bottom-up, feeding MAP codes upward.

    Each pair is trained as a standalone two-layer model on the codes of the
    pair below. Returns (DeepLRBN, list of TrainReports).
    """
    latent_sizes = list(latent_sizes)
    if not latent_sizes:
        raise ValueError("need at least one latent layer size")
    layers, reports = [], []
    data, layer_kind = np.asarray(X, dtype=np.float64), kind
    for n_hidden in latent_sizes:
        params, report = train_layer(data, n_hidden, cfg, layer_kind)
        layers.append(params)
        reports.append(report)
        data = map_codes(params, data, layer_kind, cfg.icm)
        layer_kind = "binary"
    return DeepLRBN(layers=tuple(layers), visible_kind=kind), reports


def infer_states(model: DeepLRBN, X, icm: IcmConfig = IcmConfig()):
    """Bottom-up MAP chain: h^l = argmax P(h^l | h^{l-1}) per sample."""
    states = []
    data, kind = np.asarray(X, dtype=np.float64), model.visible_kind
    for pair in model.layers:
        data = map_codes(pair, data, kind, icm)
        states.append(data)
        kind = "binary"
    return states


def deep_completed_ll(model: DeepLRBN, X, states) -> float:
    """Mean log P(x, h^1..h^L) over samples at the given completions."""
    X = np.asarray(X, dtype=np.float64)
    top = model.layers[-1]
    total = states[-1] @ top.d - np.sum(softplus(top.d))
    below = [X] + list(states[:-1])
    for l, pair in enumerate(model.layers):
        kind = model.visible_kind if l == 0 else "binary"
        total = total + pair_joint_batch(pair, below[l], states[l], kind) \
            - (states[l] @ pair.d - np.sum(softplus(pair.d)))
    return float(np.mean(total))


def _sga_epoch(params: LayerParams, X, H, cfg: TrainConfig, kind: str):
    """One minibatch pass of gradient ascent on completed pairs (no E-step)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.rng_seed, 0xF1)))
    order = rng.permutation(X.shape[0])
    for start in range(0, X.shape[0], cfg.minibatch_size):
        idx = order[start : start + cfg.minibatch_size]
        params = _step(params, _mean_gradient(params, X[idx], H[idx], kind),
                       cfg.learning_rate)
    return params


def _flatten_params(model: DeepLRBN) -> np.ndarray:
    return np.concatenate(
        [np.concatenate([p.W.ravel(), p.b, p.d]) for p in model.layers]
    )


def finetune_unsupervised(model: DeepLRBN, X, cfg: TrainConfig) -> DeepLRBN:
    """Top-down refinement over three-layer windows.

    Each alternation re-infers every middle layer given its neighbors (ICM on
    the conditional pseudo-likelihood, feed-forward initialized) and updates
    the two adjacent parameter sets on the completed pairs, sweeping windows
    from the top down. Stops after the configured number of alternations or
    when the parameters stop moving.
    """
    if model.n_layers < 2:
        warnings.warn("fine-tuning needs at least 2 latent layers; returning "
                      "the model unchanged", stacklevel=2)
        return model
    X = np.asarray(X, dtype=np.float64)
    L = model.n_layers
    layers = list(model.layers)
    for _ in range(cfg.finetune_alternations):
        before = _flatten_params(DeepLRBN(tuple(layers), model.visible_kind))
        states = infer_states(DeepLRBN(tuple(layers), model.visible_kind), X, cfg.icm)
        # windows {l-1, l, l+1} for middle latent layer l = L-1 .. 1
        for l in range(L - 1, 0, -1):
            lower, upper = layers[l - 1], layers[l]
            below = X if l == 1 else states[l - 2]
            below_kind = model.visible_kind if l == 1 else "binary"
            init = init_latent_batch(lower, below, below_kind)
            H_mid, _ = icm_map_middle_batch(lower, upper, below, states[l],
                                            init, cfg.icm)
            states[l - 1] = H_mid
            layers[l - 1] = _sga_epoch(lower, below, H_mid, cfg, below_kind)
            layers[l] = _sga_epoch(upper, H_mid, states[l], cfg, "binary")
        after = _flatten_params(DeepLRBN(tuple(layers), model.visible_kind))
        denom = np.linalg.norm(before) + 1e-12
        if np.linalg.norm(after - before) / denom < PARAM_CONVERGENCE_RTOL:
            break
    return DeepLRBN(tuple(layers), model.visible_kind)


def finetune_supervised(model: DeepLRBN, X, labels, cfg: TrainConfig) -> DeepLRBN:
    """Discriminative refinement with the top layer clamped to the labels.

    The model's lower pairs are assumed pre-trained (greedy stacking); its
    top pair must have one upper unit per class. First the top pair is fit
    on complete (h^{L-1}, t) pairs -- a logistic-regression problem, no
    inference needed -- then top-down window updates run with h^L = t.
    """
    if labels is None:
        raise ValueError("supervised fine-tuning requires labels")
    if model.n_layers < 2:
        raise ValueError("supervised fine-tuning needs at least 2 latent layers")
    X = np.asarray(X, dtype=np.float64)
    n_classes = model.layers[-1].n_upper
    T = one_hot(labels, n_classes)
    L = model.n_layers
    layers = list(model.layers)

    lower_model = DeepLRBN(tuple(layers[:-1]), model.visible_kind)
    states = infer_states(lower_model, X, cfg.icm)
    # step 2: complete-data fit of the top pair
    for _ in range(cfg.max_epochs):
        layers[-1] = _sga_epoch(layers[-1], states[-1], T, cfg, "binary")
    # step 3: top-down windows with the top layer clamped to t
    states = states + [T]
    for _ in range(cfg.finetune_alternations):
        for l in range(L - 1, 0, -1):
            lower, upper = layers[l - 1], layers[l]
            below = X if l == 1 else states[l - 2]
            below_kind = model.visible_kind if l == 1 else "binary"
            init = init_latent_batch(lower, below, below_kind)
            H_mid, _ = icm_map_middle_batch(lower, upper, below, states[l],
                                            init, cfg.icm)
            states[l - 1] = H_mid
            layers[l - 1] = _sga_epoch(lower, below, H_mid, cfg, below_kind)
            layers[l] = _sga_epoch(upper, H_mid, states[l], cfg, "binary")
    return DeepLRBN(tuple(layers), model.visible_kind)


def train_supervised(X, labels, latent_sizes, n_classes: int,
                     cfg: TrainConfig, kind: str = "binary") -> DeepLRBN:
    """Full supervised pipeline: greedy stack of the lower layers, then a
    label-clamped top pair and top-down fine-tuning."""
    latent_sizes = list(latent_sizes)
    if not latent_sizes:
        raise ValueError("need at least one latent layer below the labels")
    lower, _ = greedy_stack(X, latent_sizes, cfg, kind)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.rng_seed, 0x70)))
    top = LayerParams(
        rng.uniform(-0.01, 0.01, size=(latent_sizes[-1], n_classes)),
        np.zeros(latent_sizes[-1]),
        np.zeros(n_classes),
    )
    model = DeepLRBN(lower.layers + (top,), kind)
    return finetune_supervised(model, X, labels, cfg)
