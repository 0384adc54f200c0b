"""scikit-learn style wrappers around the single-stream model and the linear baseline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DimensionError
from .model import AMemNet, Architecture
from .numerics import softmax
from .training import TrainConfig, fit, fit_linear_head


def _encode(y):
    classes, codes = np.unique(y, return_inverse=True)
    return classes, codes.astype(np.int64)


class AMemNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Predicts the class of a partially observed sample from its feature vector.

    ``fit`` needs the matching full-observation features as ``full_features``;
    ``transform`` returns the generated full-feature estimate.
    """

    def __init__(self, hidden=512, h=256, slots=512, similarity="dot", batch=64, d_steps=2,
                 epochs=30, lr_d=1e-4, lr_g=1e-4, momentum=0.9, lambda_cls=1.0,
                 lambda_rec=0.1, seed=0):
        self.hidden = hidden
        self.h = h
        self.slots = slots
        self.similarity = similarity
        self.batch = batch
        self.d_steps = d_steps
        self.epochs = epochs
        self.lr_d = lr_d
        self.lr_g = lr_g
        self.momentum = momentum
        self.lambda_cls = lambda_cls
        self.lambda_rec = lambda_rec
        self.seed = seed

    def fit(self, X, y, full_features=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if full_features is None:
            raise ValueError("fit requires full_features (one full-observation row per row of X)")
        V = check_array(full_features, dtype=np.float64)
        if V.shape != X.shape:
            raise DimensionError(f"full_features has shape {V.shape}, X has {X.shape}")
        self.classes_, codes = _encode(y)
        self.n_features_in_ = X.shape[1]
        arch = Architecture(d=X.shape[1], hidden=self.hidden, h=self.h, slots=self.slots,
                            classes=len(self.classes_), similarity=self.similarity)
        config = TrainConfig(batch=self.batch, d_steps=self.d_steps, epochs=self.epochs,
                             lr_d=self.lr_d, lr_g=self.lr_g, momentum=self.momentum,
                             lambda_cls=self.lambda_cls, lambda_rec=self.lambda_rec, seed=self.seed)
        model_ss, batch_ss = np.random.SeedSequence(self.seed).spawn(2)
        self.model_ = AMemNet(arch, model_ss)
        self.report_ = fit(self.model_, X, V, codes, config,
                           np.random.Generator(np.random.PCG64(batch_ss)))
        return self

    def _validated(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._validated(X)
        return self.model_.predict_proba(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        X = self._validated(X)
        return self.model_.transform(X)


class LinearHeadClassifier(ClassifierMixin, BaseEstimator):
    """Softmax regression trained with Adam; the baseline head used in benchmarks."""

    def __init__(self, epochs=30, batch=64, lr=1e-4, seed=0):
        self.epochs = epochs
        self.batch = batch
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = _encode(y)
        self.n_features_in_ = X.shape[1]
        self.coef_, self.intercept_ = fit_linear_head(X, codes, len(self.classes_), self.epochs,
                                                      self.batch, self.lr, self.seed)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=-1).data

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
