"""Shared fixtures and independent reference implementations.

The naive_* functions are deliberate re-implementations using plain Python
loops and math.*, kept independent of the library's vectorized code so they
can serve as oracles.
"""

import math

import numpy as np
import pytest

from lrbn.model import DeepLRBN, LayerParams


def random_pair(rng, n_d, n_h, scale=1.0):
    return LayerParams(
        rng.normal(0, scale, size=(n_d, n_h)),
        rng.normal(0, scale, size=n_d),
        rng.normal(0, scale, size=n_h),
    )


def random_model(rng, sizes, kind="binary", scale=1.0):
    layers = [
        random_pair(rng, sizes[l], sizes[l + 1], scale)
        for l in range(len(sizes) - 1)
    ]
    return DeepLRBN(layers=tuple(layers), visible_kind=kind)


def random_binary(rng, n):
    return rng.integers(0, 2, size=n).astype(float)


def naive_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def naive_pair_joint(params, x, h, kind):
    """log P(x, h) for one pair, via per-unit probabilities."""
    total = 0.0
    for j in range(len(h)):
        p = naive_sigmoid(params.d[j])
        total += math.log(p if h[j] == 1 else 1.0 - p)
    for i in range(len(x)):
        a = sum(params.W[i, j] * h[j] for j in range(len(h))) + params.b[i]
        if kind == "binary":
            p = naive_sigmoid(a)
            total += math.log(p if x[i] == 1 else 1.0 - p)
        else:
            total += -0.5 * (x[i] - a) ** 2 - 0.5 * math.log(2.0 * math.pi)
    return total


def naive_deep_joint(model, x, states):
    """log P(x, h^1..h^L) composed pair by pair, priors from the top only."""
    top = model.layers[-1]
    total = 0.0
    for j in range(len(states[-1])):
        p = naive_sigmoid(top.d[j])
        total += math.log(p if states[-1][j] == 1 else 1.0 - p)
    below = [x] + list(states[:-1])
    for l, pair in enumerate(model.layers):
        kind = model.visible_kind if l == 0 else "binary"
        lower, upper = below[l], states[l]
        for i in range(len(lower)):
            a = sum(pair.W[i, j] * upper[j] for j in range(len(upper))) + pair.b[i]
            if kind == "binary":
                p = naive_sigmoid(a)
                total += math.log(p if lower[i] == 1 else 1.0 - p)
            else:
                total += -0.5 * (lower[i] - a) ** 2 - 0.5 * math.log(2.0 * math.pi)
    return total


def all_binary_tuples(n):
    """Second, independent enumerator (recursive, lexicographic)."""
    if n == 0:
        return [()]
    rest = all_binary_tuples(n - 1)
    return [(0,) + t for t in rest] + [(1,) + t for t in rest]


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
