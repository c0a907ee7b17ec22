"""Parameter containers and exact log-probability evaluation for latent
regression Bayesian networks (LRBN).

A model is a stack of fully connected layer pairs. All latent layers are
binary; the visible layer is either binary (sigmoid conditionals) or
real-valued (unit-variance Gaussian conditionals). The joint probability is
a product of local conditionals, so every log-probability here is exact --
no partition function is involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

VISIBLE_KINDS = ("binary", "gaussian")
LOG_2PI = float(np.log(2.0 * np.pi))

MAGIC = b"LRBN"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a serialized model container is malformed."""


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def softplus(a):
    """log(1 + e^a) computed via the stable branch max(a,0) + log1p(e^-|a|)."""
    a = np.asarray(a, dtype=np.float64)
    out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
    return out if out.ndim else float(out)


def _as_vector(v, name):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    return v


def _check_binary(v, name):
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ValueError(f"{name} must be binary (entries in {{0,1}})")


@dataclass(frozen=True)
class LayerParams:
    """Weights and offsets for one adjacent layer pair.

    W has shape (n_lower, n_upper): W[i, j] connects upper unit j to lower
    unit i. b offsets the lower layer; d holds prior biases for the upper
    layer (used when this pair's upper layer is the model top, or while the
    pair is trained standalone during greedy stacking).
    """

    W: np.ndarray
    b: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = _as_vector(self.b, "b")
        d = _as_vector(self.d, "d")
        if W.ndim != 2:
            raise ValueError(f"W must be a matrix, got shape {W.shape}")
        if W.shape != (b.size, d.size):
            raise ValueError(
                f"inconsistent shapes: W {W.shape}, b ({b.size},), d ({d.size},)"
            )
        for name, arr in (("W", W), ("b", b), ("d", d)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", d)

    @property
    def n_lower(self) -> int:
        return self.W.shape[0]

    @property
    def n_upper(self) -> int:
        return self.W.shape[1]

    def replace(self, W=None, b=None, d=None) -> "LayerParams":
        return LayerParams(
            self.W if W is None else W,
            self.b if b is None else b,
            self.d if d is None else d,
        )


@dataclass(frozen=True)
class DeepLRBN:
    """An ordered stack of layer pairs, from the visible pair upward.

    layers[0] connects the visible layer to the first latent layer;
    layers[-1].d is the prior over the top latent layer. Latent layers are
    always binary regardless of visible_kind. Models are immutable once
    constructed and safe for concurrent reads.
    """

    layers: tuple = field()
    visible_kind: str = "binary"

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 1:
            raise ValueError("a model needs at least one layer pair")
        if self.visible_kind not in VISIBLE_KINDS:
            raise ValueError(f"visible_kind must be one of {VISIBLE_KINDS}")
        for lo, hi in zip(layers, layers[1:]):
            if lo.n_upper != hi.n_lower:
                raise ValueError(
                    f"layer pair dimensions do not chain: {lo.n_upper} != {hi.n_lower}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def n_layers(self) -> int:
        """Number of latent layers (L)."""
        return len(self.layers)

    @property
    def n_visible(self) -> int:
        return self.layers[0].n_lower

    @property
    def layer_sizes(self) -> tuple:
        """(n_visible, n_h^1, ..., n_h^L)."""
        return (self.n_visible,) + tuple(p.n_upper for p in self.layers)

    def validate_state(self, state):
        """Check a latent state (one binary vector per latent layer)."""
        state = [np.asarray(h, dtype=np.float64).ravel() for h in state]
        sizes = self.layer_sizes[1:]
        if len(state) != len(sizes):
            raise ValueError(
                f"state has {len(state)} layers, model has {len(sizes)}"
            )
        for h, n in zip(state, sizes):
            if h.size != n:
                raise ValueError(f"latent layer size mismatch: {h.size} != {n}")
            _check_binary(h, "latent state")
        return state


def prior_logprob(d, h) -> float:
    """log P(h) under independent Bernoulli priors P(h_j = 1) = sigmoid(d_j)."""
    d = _as_vector(d, "d")
    h = _as_vector(h, "h")
    if d.size != h.size:
        raise ValueError(f"length mismatch: d ({d.size}) vs h ({h.size})")
    _check_binary(h, "h")
    return float(h @ d - np.sum(softplus(d)))


def conditional_logprob_visible(params: LayerParams, h, x, kind: str) -> float:
    """log P(x | h) for one layer pair.

    Binary: independent sigmoids of the activation a = W h + b.
    Gaussian: independent unit-variance Gaussians with mean a.
    """
    if kind not in VISIBLE_KINDS:
        raise ValueError(f"kind must be one of {VISIBLE_KINDS}")
    h = _as_vector(h, "h")
    x = _as_vector(x, "x")
    if h.size != params.n_upper or x.size != params.n_lower:
        raise ValueError(
            f"dimension mismatch: x ({x.size}), h ({h.size}) vs "
            f"W {params.W.shape}"
        )
    _check_binary(h, "h")
    a = params.W @ h + params.b
    if kind == "binary":
        _check_binary(x, "x")
        return float(x @ a - np.sum(softplus(a)))
    r = x - a
    return float(-0.5 * (r @ r) - 0.5 * x.size * LOG_2PI)


def joint_logprob(model: DeepLRBN, x, state) -> float:
    """log P(x, h^1, ..., h^L): top prior plus the chain of conditionals.

    Intermediate pairs' d vectors do not enter the joint; only the top
    pair's d acts as a prior (the layer above supersedes the others).
    """
    state = model.validate_state(state)
    total = prior_logprob(model.layers[-1].d, state[-1])
    for l in range(model.n_layers - 1, 0, -1):
        total += conditional_logprob_visible(
            model.layers[l], state[l], state[l - 1], "binary"
        )
    total += conditional_logprob_visible(
        model.layers[0], state[0], x, model.visible_kind
    )
    return total


# --- serialization ---------------------------------------------------------
#
# Container layout (little-endian):
#   magic "LRBN" | u32 version | u8 visible_kind | u32 L |
#   (L+1) x u32 layer sizes | per pair: W row-major f64, b f64, d f64
# File extension: .lrbn

_KIND_CODE = {"binary": 0, "gaussian": 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def serialize(model: DeepLRBN) -> bytes:
    sizes = model.layer_sizes
    out = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<B", _KIND_CODE[model.visible_kind]),
        struct.pack("<I", model.n_layers),
        struct.pack(f"<{len(sizes)}I", *sizes),
    ]
    for p in model.layers:
        out.append(np.ascontiguousarray(p.W).astype("<f8").tobytes())
        out.append(p.b.astype("<f8").tobytes())
        out.append(p.d.astype("<f8").tobytes())
    return b"".join(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated container")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk


def deserialize(data: bytes) -> DeepLRBN:
    cur = _Cursor(bytes(data))
    if cur.take(4) != MAGIC:
        raise ModelFormatError("bad magic: not an LRBN container")
    (version,) = struct.unpack("<I", cur.take(4))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    (kind_code,) = struct.unpack("<B", cur.take(1))
    if kind_code not in _CODE_KIND:
        raise ModelFormatError(f"unknown visible kind code {kind_code}")
    (n_pairs,) = struct.unpack("<I", cur.take(4))
    if n_pairs < 1:
        raise ModelFormatError("dimension inconsistency: zero layer pairs")
    sizes = struct.unpack(f"<{n_pairs + 1}I", cur.take(4 * (n_pairs + 1)))
    if any(s < 1 for s in sizes):
        raise ModelFormatError("dimension inconsistency: zero-sized layer")
    layers = []
    for l in range(n_pairs):
        n_lo, n_up = sizes[l], sizes[l + 1]
        W = np.frombuffer(cur.take(8 * n_lo * n_up), dtype="<f8").reshape(n_lo, n_up)
        b = np.frombuffer(cur.take(8 * n_lo), dtype="<f8")
        d = np.frombuffer(cur.take(8 * n_up), dtype="<f8")
        try:
            layers.append(LayerParams(W, b, d))
        except ValueError as exc:
            raise ModelFormatError(f"dimension inconsistency: {exc}") from exc
    if cur.pos != len(cur.buf):
        raise ModelFormatError("dimension inconsistency: trailing bytes")
    return DeepLRBN(layers=tuple(layers), visible_kind=_CODE_KIND[kind_code])


def save(model: DeepLRBN, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load(path) -> DeepLRBN:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
