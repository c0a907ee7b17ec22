"""scikit-learn style front end.

Wraps greedy stacking, fine-tuning, MAP encoding, reconstruction, and
sampling behind the usual fit/transform/predict surface so the model
composes with sklearn pipelines and model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .evaluation import mean_reconstruction_error, reconstruct_batch, \
    ancestral_sample_batch
from .inference import IcmConfig, pair_joint_batch
from .learning import (
    TrainConfig,
    deep_completed_ll,
    finetune_unsupervised,
    greedy_stack,
    infer_states,
    map_codes,
    train_supervised,
)
from .model import softplus


class LatentRegressionEstimator(BaseEstimator, TransformerMixin):
    """Deep directed generative model with binary latent layers.

    fit() trains the latent layers greedily bottom-up by hard EM and
    optionally fine-tunes top-down. transform() returns the top layer's MAP
    codes; predict() (supervised mode) returns the most likely class under
    the label-clamped top pair; score() is the mean max-out log-likelihood.

    Parameters mirror TrainConfig; latent_sizes lists latent layer widths
    bottom-up, excluding the label layer in supervised mode.
    """

    def __init__(
        self,
        latent_sizes=(200,),
        visible_kind="binary",
        learning_rate=0.25,
        minibatch_size=20,
        max_epochs=20,
        max_sweeps=10,
        validation_size=100,
        early_stop_patience=5,
        finetune=None,
        random_state=0,
    ):
        self.latent_sizes = latent_sizes
        self.visible_kind = visible_kind
        self.learning_rate = learning_rate
        self.minibatch_size = minibatch_size
        self.max_epochs = max_epochs
        self.max_sweeps = max_sweeps
        self.validation_size = validation_size
        self.early_stop_patience = early_stop_patience
        self.finetune = finetune
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            minibatch_size=self.minibatch_size,
            max_epochs=self.max_epochs,
            icm=IcmConfig(max_sweeps=self.max_sweeps),
            rng_seed=self.random_state,
            validation_size=self.validation_size,
            early_stop_patience=self.early_stop_patience,
        )

    def _validate_data_matrix(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if self.visible_kind == "binary" and not np.all((X == 0) | (X == 1)):
            raise ValueError("binary visible_kind requires data in {0,1}")
        return X

    def fit(self, X, y=None):
        if self.finetune not in (None, "unsupervised", "supervised"):
            raise ValueError("finetune must be None, 'unsupervised' or 'supervised'")
        X = self._validate_data_matrix(X)
        cfg = self._train_config()
        if self.finetune == "supervised":
            if y is None:
                raise ValueError("supervised fine-tuning requires labels y")
            y = np.asarray(y, dtype=np.int64).ravel()
            self.classes_ = np.unique(y)
            y_idx = np.searchsorted(self.classes_, y)
            self.model_ = train_supervised(
                X, y_idx, list(self.latent_sizes), self.classes_.size, cfg,
                self.visible_kind,
            )
        else:
            self.model_, self.reports_ = greedy_stack(
                X, list(self.latent_sizes), cfg, self.visible_kind
            )
            if self.finetune == "unsupervised":
                self.model_ = finetune_unsupervised(self.model_, X, cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before using this estimator")

    def transform(self, X) -> np.ndarray:
        """MAP codes of the top (non-label) latent layer."""
        self._check_fitted()
        X = self._validate_data_matrix(X)
        model = self.model_
        pairs = model.layers[:-1] if self.finetune == "supervised" else model.layers
        icm = self._train_config().icm
        data, kind = X, model.visible_kind
        for pair in pairs:
            data = map_codes(pair, data, kind, icm)
            kind = "binary"
        return data

    def predict(self, X) -> np.ndarray:
        """Most likely class of the clamped top pair (supervised mode only)."""
        self._check_fitted()
        if self.finetune != "supervised":
            raise NotFittedError("predict requires finetune='supervised'")
        X = self._validate_data_matrix(X)
        H = self.transform(X)
        top = self.model_.layers[-1]
        # log P(h^{L-1}, t = e_c) up to a shared constant, per class
        scores = H @ (top.W + top.b[:, None]) - np.sum(softplus(top.W + top.b[:, None]), axis=0)
        scores = scores + top.d
        return self.classes_[np.argmax(scores, axis=1)]

    def score(self, X, y=None) -> float:
        """Mean completed-data log-likelihood max_h log P(x, h) per sample."""
        self._check_fitted()
        X = self._validate_data_matrix(X)
        icm = self._train_config().icm
        model = self.model_
        if model.n_layers == 1:
            states = infer_states(model, X, icm)
            return float(np.mean(pair_joint_batch(model.layers[0], X, states[0],
                                                  model.visible_kind)))
        states = infer_states(model, X, icm)
        return deep_completed_ll(model, X, states)

    def reconstruct(self, X) -> np.ndarray:
        self._check_fitted()
        X = self._validate_data_matrix(X)
        return reconstruct_batch(self.model_, X, self._train_config().icm)

    def reconstruction_error(self, X) -> float:
        self._check_fitted()
        X = self._validate_data_matrix(X)
        return mean_reconstruction_error(self.model_, X, self._train_config().icm)

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        X, _ = ancestral_sample_batch(self.model_, n_samples, rng)
        return X
