"""scikit-learn style wrappers.

``X`` is an ``(n_samples, 3J, P, T)`` array of observed motion in metres and
``y`` the matching ``(n_samples, 3J, P, T')`` future.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import TrainWindow
from .errors import ConfigError
from .metrics import mpjpe
from .model import EmpmpModel, ModelConfig, forward, preset
from .train import TrainPlan, train
from .transforms import DctBasis, dct_forward, dct_inverse, ipips_restore, pips_sort
from .validation import check_consistent_length, check_motion


class TemporalDCT(TransformerMixin, BaseEstimator):
    """Orthonormal DCT-II along the frame axis."""

    def fit(self, X, y=None):
        X = check_motion(X)
        self.n_frames_ = X.shape[-1]
        self.basis_ = DctBasis.build(self.n_frames_)
        return self

    def _basis(self):
        if not hasattr(self, "basis_"):
            raise NotFittedError("TemporalDCT is not fitted yet")
        return self.basis_

    def transform(self, X):
        return dct_forward(check_motion(X, T=self._basis().T), self.basis_)

    def inverse_transform(self, X):
        return dct_inverse(check_motion(X, T=self._basis().T), self.basis_)


class PersonSorter(TransformerMixin, BaseEstimator):
    """Canonical person order: descending summed first-frame hip distance."""

    def __init__(self, hip_index: int = 0):
        self.hip_index = hip_index

    def fit(self, X, y=None):
        X = check_motion(X)
        self.n_persons_ = X.shape[-2]
        return self

    def sort(self, X):
        """Return the sorted batch and the per-sample permutations."""
        if not hasattr(self, "n_persons_"):
            raise NotFittedError("PersonSorter is not fitted yet")
        X = check_motion(X, P=self.n_persons_, batched=True)
        pairs = [pips_sort(x, self.hip_index) for x in X]
        return np.stack([s for s, _ in pairs]), [p for _, p in pairs]

    def transform(self, X):
        return self.sort(X)[0]

    @staticmethod
    def restore(Y, perms):
        return np.stack([ipips_restore(y, p) for y, p in zip(Y, perms)])


class EMPMPForecaster(RegressorMixin, BaseEstimator):
    """Multi-person motion forecaster trained with Adam.

    Architecture fields left as ``None`` come from ``preset``; ``J``, ``P``,
    ``T`` and ``T_out`` are finally taken from the training data. ``score``
    returns the negative MPJPE in millimetres, so larger is better.
    """

    def __init__(self, preset: str = "cmu-1s", C: int | None = None, K: int | None = None,
                 N: int | None = None, M: int | None = None, alpha: float | None = None,
                 hip_index: int = 0, norm_layout: str | None = None, init: str | None = None,
                 epochs: int = 10, batch_size: int = 128, lr: float = 3e-4, schedule: str = "constant",
                 decay_factor: float = 0.8, decay_every: int = 10, augment: bool = True,
                 max_grad_norm: float | None = None, seed: int = 0):
        self.preset = preset
        self.C = C
        self.K = K
        self.N = N
        self.M = M
        self.alpha = alpha
        self.hip_index = hip_index
        self.norm_layout = norm_layout
        self.init = init
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.augment = augment
        self.max_grad_norm = max_grad_norm
        self.seed = seed

    def _model_config(self, J: int, P: int, T: int, T_out: int) -> ModelConfig:
        overrides = {k: getattr(self, k) for k in ("C", "K", "N", "M", "alpha", "norm_layout", "init")
                     if getattr(self, k) is not None}
        return preset(self.preset, J=J, P=P, T=T, T_out=T_out, hip_index=self.hip_index,
                      seed=self.seed, **overrides)

    def _plan(self) -> TrainPlan:
        return TrainPlan(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                         schedule=self.schedule, decay_factor=self.decay_factor,
                         decay_every=self.decay_every, seed=self.seed, augment=self.augment,
                         max_grad_norm=self.max_grad_norm)

    def fit(self, X, y):
        X = check_motion(X, batched=True)
        y = check_motion(y, batched=True, name="y")
        check_consistent_length(X, y)
        if y.shape[1:3] != X.shape[1:3]:
            raise ConfigError(f"X has (3J, P) = {X.shape[1:3]}, y has {y.shape[1:3]}")
        _, feat, P, T = X.shape
        cfg = self._model_config(feat // 3, P, T, y.shape[-1])
        model = EmpmpModel(cfg)
        windows = [TrainWindow(x, t, "X", i) for i, (x, t) in enumerate(zip(X, y))]
        result = train(self._plan(), model, windows)
        self.model_ = result.model
        self.history_ = result.history
        self.n_features_in_ = feat
        return self

    def _check_fitted(self) -> EmpmpModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("EMPMPForecaster is not fitted yet")
        return self.model_

    def predict(self, X):
        model = self._check_fitted()
        c = model.config
        X = check_motion(X, J=c.J, P=c.P, T=c.T)
        return forward(X, model)

    def score(self, X, y, sample_weight=None):
        y = check_motion(y, name="y")
        return -mpjpe(self.predict(X), y)

    @classmethod
    def from_model(cls, model: EmpmpModel, **params) -> "EMPMPForecaster":
        """Wrap an already trained model without refitting."""
        c = model.config
        est = cls(C=c.C, K=c.K, N=c.N, M=c.M, alpha=c.alpha, hip_index=c.hip_index,
                  norm_layout=c.norm_layout, init=c.init, seed=c.seed, **params)
        est.model_ = model
        est.history_ = []
        est.n_features_in_ = 3 * c.J
        return est
