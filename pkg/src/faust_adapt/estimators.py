"""Scikit-learn estimator facade.

``SourceNetClassifier`` is a plain supervised classifier over the desk-scale
generator/head stack. ``DomainAdapter`` wraps the source-free adaptation
loop: given a fitted source classifier (or checkpoint path), ``fit`` consumes
unlabeled target samples only. Both expose the usual ``get_params`` /
``set_params`` surface so they compose with pipelines and grid tools.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .adapt import AdaptConfig, adapt_run, load_state_copy
from .data import Dataset
from .models import Model, load_checkpoint, predict_proba, save_checkpoint
from .pretrain import PretrainConfig, pretrain_source
from .validation import check_labels, check_samples


class SourceNetClassifier(BaseEstimator, ClassifierMixin):
    """Supervised source-model trainer with label smoothing and weak
    augmentation."""

    def __init__(
        self,
        label_smoothing: float = 0.1,
        learning_rate: float = 0.01,
        batch_size: int = 64,
        max_epochs: int = 60,
        raster_shape: tuple[int, int] | None = None,
        seed: int = 0,
    ):
        self.label_smoothing = label_smoothing
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.raster_shape = raster_shape
        self.seed = seed

    def fit(self, X, y):
        X = check_samples(X, self.raster_shape)
        y = check_labels(y, len(X))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        samples = X.reshape(len(X), *X.shape[2:]) if self.raster_shape else X
        dataset = Dataset(
            samples.astype(np.float32),
            encoded,
            n_classes=len(self.classes_),
            domain="source",
            descriptor={"family": "user", "seed": self.seed},
        )
        config = PretrainConfig(
            label_smoothing=self.label_smoothing,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.seed,
        )
        self.model_, self.history_ = pretrain_source(dataset, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.model_, check_samples(X, self.raster_shape))

    def predict(self, X):
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def save(self, path):
        self._check_fitted()
        save_checkpoint(self.model_, path)


class DomainAdapter(BaseEstimator, ClassifierMixin):
    """Source-free adapter: retrains the feature generator of a pretrained
    source model against its frozen head using only unlabeled target samples.
    """

    def __init__(
        self,
        source=None,
        alpha: float = 0.5,
        beta: float = 0.5,
        gamma: int = 0,
        views: int = 2,
        temperature: float = 0.025,
        optimizer: str = "adam",
        learning_rate: float = 2e-4,
        batch_size: int = 64,
        max_epochs: int = 100,
        mc_samples: int = 10,
        augment_regime: str = "strong",
        raster_shape: tuple[int, int] | None = None,
        seed: int = 0,
    ):
        self.source = source
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.views = views
        self.temperature = temperature
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.mc_samples = mc_samples
        self.augment_regime = augment_regime
        self.raster_shape = raster_shape
        self.seed = seed

    def _resolve_source(self) -> tuple[Model, np.ndarray]:
        src = self.source
        if src is None:
            raise ValueError("DomainAdapter requires a source model, estimator, or checkpoint path")
        if isinstance(src, SourceNetClassifier):
            src._check_fitted()
            return src.model_, src.classes_
        if isinstance(src, (str, bytes)):
            model, _ = load_checkpoint(src)
            return model, np.arange(model.n_classes)
        if isinstance(src, Model):
            return src, np.arange(src.n_classes)
        raise TypeError(f"unsupported source type: {type(src).__name__}")

    def fit(self, X, y=None):
        """Adapt to unlabeled target samples; ``y`` is ignored and accepted
        only for pipeline compatibility."""
        X = check_samples(X, self.raster_shape)
        model, self.classes_ = self._resolve_source()
        config = AdaptConfig(
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            views=self.views,
            temperature=self.temperature,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            mc_samples=self.mc_samples,
            augment_regime=self.augment_regime,
            seed=self.seed,
        )
        result = adapt_run(load_state_copy(model), X, config)
        self.model_ = result.model
        self.run_log_ = result.log
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.model_, check_samples(X, self.raster_shape))

    def predict(self, X):
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def save(self, path):
        self._check_fitted()
        save_checkpoint(self.model_, path)
