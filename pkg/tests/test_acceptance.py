"""Acceptance gates.

One test per criterion, named test_criterion_NN_*, so a verbose run prints
one pass/fail line per criterion. Criteria 1-7 are dataset-free property
gates and run in minutes. Criteria 8-11 reproduce published-scale image
experiments and need a corpus directory:

    LRBN_DATA_DIR  directory holding the MNIST IDX quartet
                   (train-images-idx3-ubyte, train-labels-idx1-ubyte,
                   t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte)
                   and optionally ocr_letters.lmat (128-dim binary).
    LRBN_FULL=1    additionally enables the multi-hour full-scale gates.

Without LRBN_DATA_DIR those tests skip with an explanatory reason.
"""

import os
import time

import numpy as np
import pytest

from lrbn.data_io import Dataset, binarize, idx_images_to_matrix, load_idx, \
    load_lmat, split_validation
from lrbn.evaluation import CslConfig, csl_logprob, exact_logprob, \
    mean_reconstruction_error
from lrbn.inference import (
    IcmConfig,
    bruteforce_map,
    enumerate_binary,
    flip_delta,
    icm_map,
    init_latent,
    pair_joint_batch,
    pair_joint_logprob,
)
from lrbn.learning import (
    TrainConfig,
    closed_form_m_step,
    gradient_discrete,
    gradient_hybrid,
    greedy_stack,
)
from lrbn.model import serialize

from conftest import random_binary, random_model, random_pair

DATA_DIR = os.environ.get("LRBN_DATA_DIR")
FULL = os.environ.get("LRBN_FULL") == "1"

SKIP_NO_DATA = "needs an image corpus: set LRBN_DATA_DIR to a directory " \
               "with the MNIST IDX files (no dataset is bundled)"
SKIP_NOT_FULL = "full-scale gate (hours of training): set LRBN_FULL=1 to run"


def _random_case(r, kind):
    n_d = int(r.integers(2, 9))
    n_h = int(r.integers(2, 11))
    p = random_pair(r, n_d, n_h, scale=0.7)
    x = random_binary(r, n_d) if kind == "binary" else r.normal(size=n_d)
    return p, x


def _converged_cases(n_models=200):
    """Shared corpus for criteria 1-3: 100 discrete + 100 hybrid runs."""
    cases = []
    for i in range(n_models):
        kind = "binary" if i % 2 == 0 else "gaussian"
        r = np.random.default_rng(1000 + i)
        p, x = _random_case(r, kind)
        res = icm_map(p, x, init_latent(p, x, kind), IcmConfig(max_sweeps=100),
                      kind, record_trace=True)
        cases.append((p, x, kind, res))
    return cases


CASES = _converged_cases()


def test_criterion_01_icm_monotone_ascent():
    # joint log-probability strictly increases at every accepted flip
    violations = 0
    for p, x, kind, res in CASES:
        assert res.converged
        seq = [pair_joint_logprob(p, x, init_latent(p, x, kind), kind)]
        seq += res.trace
        if not all(b > a for a, b in zip(seq, seq[1:])):
            violations += 1
    assert violations == 0


def test_criterion_02_icm_local_optimality():
    # at convergence no single flip improves the joint
    for p, x, kind, res in CASES:
        a_full = p.W @ res.state + p.b
        for j in range(p.n_upper):
            a0 = a_full - p.W[:, j] if res.state[j] else a_full
            delta = flip_delta(p, j, res.state, x, a0, kind)
            gain = -delta if res.state[j] else delta
            assert gain <= 0.0


def test_criterion_03_oracle_map_agreement():
    fixed_point_hits = 0
    gaps = []
    for p, x, kind, _ in CASES:
        h_star, best = bruteforce_map(p, x, kind)
        res_at_star = icm_map(p, x, h_star, kind=kind)
        if np.array_equal(res_at_star.state, h_star):
            fixed_point_hits += 1
        res = icm_map(p, x, init_latent(p, x, kind),
                      IcmConfig(max_sweeps=100), kind)
        gaps.append(best - res.final_joint_logprob)
    gaps = np.array(gaps)
    edges = [0.0, 1e-9, 0.01, 0.1, 0.5, np.inf]
    counts = np.histogram(gaps, bins=edges)[0]
    print("\nMAP gap histogram (nats):")
    for lo, hi, n in zip(edges, edges[1:], counts):
        print(f"  [{lo:g}, {hi:g}): {n}")
    assert fixed_point_hits == len(CASES)  # oracle state is a fixed point
    within = int(np.sum(gaps <= 0.5))
    print(f"within 0.5 nats: {within}/{len(CASES)}")
    assert within >= 0.95 * len(CASES)


def test_criterion_04_gradient_finite_differences():
    eps = 1e-6
    checked = 0
    worst = 0.0
    i = 0
    while checked < 1000:
        kind = "binary" if i % 2 == 0 else "gaussian"
        r = np.random.default_rng(2000 + i)
        p, x = _random_case(r, kind)
        h = random_binary(r, p.n_upper)
        grad_fn = gradient_discrete if kind == "binary" else gradient_hybrid
        dW, db, dd = grad_fn(p, x, h)
        flat = np.concatenate([dW.ravel(), db, dd])
        n_params = flat.size
        for j in r.choice(n_params, size=min(8, n_params), replace=False):
            theta = np.concatenate([p.W.ravel(), p.b, p.d])
            for sign, store in ((1, "hi"), (-1, "lo")):
                t = theta.copy()
                t[j] += sign * eps
                W = t[: p.W.size].reshape(p.W.shape)
                b = t[p.W.size : p.W.size + p.b.size]
                d = t[p.W.size + p.b.size :]
                q = p.replace(W=W, b=b, d=d)
                if sign == 1:
                    hi = pair_joint_logprob(q, x, h, kind)
                else:
                    lo = pair_joint_logprob(q, x, h, kind)
            fd = (hi - lo) / (2 * eps)
            rel = abs(flat[j] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
            checked += 1
        i += 1
    print(f"\nworst relative error over {checked} coordinates: {worst:.3g}")
    assert worst <= 1e-5


def test_criterion_05_closed_form_m_step_stationarity():
    for seed in range(50):
        r = np.random.default_rng(3000 + seed)
        m, n_d, n_h = 40, int(r.integers(2, 7)), int(r.integers(2, 5))
        H = r.integers(0, 2, size=(m, n_h)).astype(float)
        if np.linalg.matrix_rank(np.hstack([H, np.ones((m, 1))])) < n_h + 1:
            continue
        X = r.normal(size=(m, n_d))
        p = closed_form_m_step(X, H, ridge=0.0)
        dW = np.zeros_like(p.W)
        db = np.zeros_like(p.b)
        for k in range(m):
            gW, gb, _ = gradient_hybrid(p, X[k], H[k])
            dW += gW
            db += gb
        assert np.max(np.abs(dW)) / m <= 1e-8
        assert np.max(np.abs(db)) / m <= 1e-8


def test_criterion_06_normalization_oracle():
    for seed in range(50):
        r = np.random.default_rng(4000 + seed)
        if seed % 5 == 4:
            # deep model: marginalize latents exactly, then sum over x
            n_d = int(r.integers(2, 6))
            m = random_model(r, [n_d, int(r.integers(2, 5)),
                                 int(r.integers(2, 5))])
            lls = [exact_logprob(m, x) for x in enumerate_binary(n_d)]
            total = np.exp(lls).sum()
        else:
            n_d = int(r.integers(2, 9))
            n_h = int(r.integers(2, min(9, 17 - n_d)))
            p = random_pair(r, n_d, n_h)
            Xs = enumerate_binary(n_d)
            Hs = enumerate_binary(n_h)
            X = np.repeat(Xs, len(Hs), axis=0)
            H = np.tile(Hs, (len(Xs), 1))
            total = np.exp(pair_joint_batch(p, X, H, "binary")).sum()
        assert abs(total - 1.0) <= 1e-8


def test_criterion_07_csl_vs_exact():
    csl_means, exact_vals, close = [], [], 0
    for seed in range(50):
        r = np.random.default_rng(5000 + seed)
        m = random_model(r, [int(r.integers(3, 7)), int(r.integers(2, 13))],
                         scale=0.5)
        x = random_binary(r, m.n_visible)
        res = csl_logprob(m, x, CslConfig(sample_count=100_000, repetitions=1,
                                          rng_seed=seed))
        exact = exact_logprob(m, x)
        csl_means.append(res.mean)
        exact_vals.append(exact)
        if abs(res.mean - exact) <= 0.1:
            close += 1
    print(f"\nwithin 0.1 nats: {close}/50")
    assert close >= 48
    assert np.mean(csl_means) <= np.mean(exact_vals) + 0.02


# --- image-corpus reproductions ----------------------------------------------


def _require_data():
    if not DATA_DIR or not os.path.isdir(DATA_DIR):
        pytest.skip(SKIP_NO_DATA)


def _mnist_file(name):
    path = os.path.join(DATA_DIR, name)
    if not os.path.exists(path):
        pytest.skip(f"{SKIP_NO_DATA} (missing {name})")
    return path


def _mnist_binary():
    train = binarize(idx_images_to_matrix(
        load_idx(_mnist_file("train-images-idx3-ubyte"))), 0.5)
    test = binarize(idx_images_to_matrix(
        load_idx(_mnist_file("t10k-images-idx3-ubyte"))), 0.5)
    return train.astype(float), test.astype(float)


def _quick_config(seed=0):
    return TrainConfig(learning_rate=0.25, minibatch_size=20, max_epochs=10,
                       icm=IcmConfig(max_sweeps=10), rng_seed=seed,
                       validation_size=100, early_stop_patience=5)


_quick_runs = {}


def _quick_mode_run(seed=0):
    """Criterion 8 quick gate: 100-100 layers on a 10k subset."""
    if seed not in _quick_runs:
        train, test = _mnist_binary()
        started = time.time()
        net, _ = greedy_stack(train[:10_000], [100, 100], _quick_config(seed))
        err = mean_reconstruction_error(net, test[:1000])
        wall = time.time() - started
        _quick_runs[seed] = (serialize(net), err, wall)
    return _quick_runs[seed]


def test_criterion_08_mnist_reconstruction():
    _require_data()
    blob, err, wall = _quick_mode_run()
    print(f"\nquick mode: {err:.2f} px in {wall:.0f}s")
    assert err <= 15.0
    assert wall <= 600
    if not FULL:
        pytest.skip(f"quick gate passed ({err:.2f} px); {SKIP_NOT_FULL}")
    train, test = _mnist_binary()
    cfg = TrainConfig(learning_rate=0.25, minibatch_size=20, max_epochs=50,
                      icm=IcmConfig(max_sweeps=10), rng_seed=0,
                      validation_size=100, early_stop_patience=5)
    net, _ = greedy_stack(train, [200, 200], cfg)
    full_err = mean_reconstruction_error(net, test)
    print(f"full scale: {full_err:.2f} px")
    assert full_err <= 8.0


def test_criterion_09_ocr_letters():
    _require_data()
    path = os.path.join(DATA_DIR, "ocr_letters.lmat")
    if not os.path.exists(path):
        pytest.skip(f"{SKIP_NO_DATA} (missing ocr_letters.lmat)")
    if not FULL:
        pytest.skip(SKIP_NOT_FULL)
    ds = load_lmat(path)
    train, test = split_validation(ds, min(5000, ds.n_samples // 5), 0)
    cfg = TrainConfig(learning_rate=0.25, minibatch_size=20, max_epochs=50,
                      icm=IcmConfig(max_sweeps=10), rng_seed=0,
                      validation_size=100, early_stop_patience=5)
    net, _ = greedy_stack(train.as_float(), [200, 200], cfg)
    err = mean_reconstruction_error(net, test.as_float())
    print(f"\nOCR reconstruction: {err:.2f} px")
    assert err <= 5.0
    res = csl_logprob(net, test.as_float()[:500],
                      CslConfig(sample_count=100_000, repetitions=3,
                                rng_seed=0))
    print(f"OCR CSL: {res.mean:.2f} nats")
    assert res.mean >= -45.0


def test_criterion_10_mnist_logprob_depth_gain():
    _require_data()
    if not FULL:
        pytest.skip(SKIP_NOT_FULL)
    train, test = _mnist_binary()
    cfg = TrainConfig(learning_rate=0.25, minibatch_size=20, max_epochs=50,
                      icm=IcmConfig(max_sweeps=10), rng_seed=0,
                      validation_size=100, early_stop_patience=5)
    one, _ = greedy_stack(train, [200], cfg)
    two, _ = greedy_stack(train, [200, 200], cfg)
    csl_cfg = CslConfig(sample_count=100_000, repetitions=3, rng_seed=0)
    ll_one = csl_logprob(one, test[:1000], csl_cfg).mean
    ll_two = csl_logprob(two, test[:1000], csl_cfg).mean
    print(f"\n1-layer {ll_one:.1f} vs 2-layer {ll_two:.1f} nats")
    assert ll_two - ll_one >= 2.0


def test_pipeline_smoke_small_digits():
    """End-to-end dry run of the criterion-8 pipeline on a tiny local corpus.

    Not a numbered gate; guards the plumbing the corpus gates rely on so a
    skip of 8-11 never hides a broken pipeline.
    """
    from sklearn.datasets import load_digits

    X = binarize(load_digits().data / 16.0, 0.5).astype(float)
    started = time.time()
    net, reports = greedy_stack(X[:1500], [30, 30], _quick_config())
    err = mean_reconstruction_error(net, X[1500:])
    wall = time.time() - started
    print(f"\ndigits smoke: {err:.2f} px in {wall:.1f}s")
    assert net.layer_sizes == (64, 30, 30)
    assert err <= 8.0  # trained model reconstructs most of each 64-px digit
    assert all(r.epochs_run >= 1 for r in reports)


def test_criterion_11_reproducibility():
    _require_data()
    blob1, err1, _ = _quick_mode_run(seed=42)
    _quick_runs.pop(42)  # force a genuine re-run
    blob2, err2, _ = _quick_mode_run(seed=42)
    assert blob1 == blob2
    assert err1 == err2
