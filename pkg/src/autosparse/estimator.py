"""scikit-learn style classifier wrapping the sparse trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset
from .flops import model_ledger, run_flops_fraction
from .model import DEFAULT_S0
from .training import TrainConfig, model_from_config, train


class AutoSparseClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier whose weights are pruned while it trains.

    Inputs are 2-D ``(n_samples, n_features)`` or N-D image batches; set
    ``input_shape`` (e.g. ``(28, 28)``) when flat features should be fed to
    convolution layers. Hyper-parameters mirror ``TrainConfig``.
    """

    def __init__(self, hidden=(256, 128), epochs=10, batch_size=256, momentum=0.875,
                 max_lr=0.256, warmup=5, weight_decay=3.0517578125e-05, label_smoothing=0.1,
                 alpha0=0.75, schedule="sigmoid_cosine", zero_from=None, autotune=None,
                 s0=DEFAULT_S0, dense_exempt=(), prune=True, backward_keep_fraction=None,
                 input_shape=None, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.max_lr = max_lr
        self.warmup = warmup
        self.weight_decay = weight_decay
        self.label_smoothing = label_smoothing
        self.alpha0 = alpha0
        self.schedule = schedule
        self.zero_from = zero_from
        self.autotune = autotune
        self.s0 = s0
        self.dense_exempt = dense_exempt
        self.prune = prune
        self.backward_keep_fraction = backward_keep_fraction
        self.input_shape = input_shape
        self.random_state = random_state

    def to_config(self) -> TrainConfig:
        schedule = self.schedule if isinstance(self.schedule, dict) else {"kind": self.schedule}
        superset = ({"mode": "all", "keep_fraction": 1.0} if self.backward_keep_fraction is None
                    else {"mode": "topk", "keep_fraction": float(self.backward_keep_fraction)})
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, momentum=self.momentum,
            max_lr=self.max_lr, warmup=self.warmup, weight_decay=self.weight_decay,
            label_smoothing=self.label_smoothing, alpha0=self.alpha0, schedule=schedule,
            zero_from=self.zero_from, autotune=self.autotune, seed=self.random_state,
            backward_superset=superset, hidden=list(self.hidden), s0=self.s0,
            dense_exempt=list(self.dense_exempt), prune=self.prune,
        )

    def _shape(self, X):
        if self.input_shape is not None:
            return tuple(self.input_shape)
        return X.shape[1:]

    def fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        k = len(self.classes_)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_shape_ = self._shape(X)
        config = self.to_config()
        data = LabeledDataset(X, self._encoder.transform(y), max(k, 2))
        ev = None
        if eval_set is not None:
            Xe, ye = check_X_y(*eval_set, allow_nd=True, dtype=np.float32)
            ev = LabeledDataset(Xe, self._encoder.transform(ye), max(k, 2), "eval")
        model = model_from_config(config, self.input_shape_, max(k, 2))
        self.model_, self.history_ = train(model, data, config, eval_data=ev)
        self.config_ = config
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True, dtype=np.float32)
        if int(np.prod(X.shape[1:])) != self.n_features_in_:
            raise ValueError(f"X has {int(np.prod(X.shape[1:]))} features, "
                             f"expected {self.n_features_in_}")
        return self.model_.predict_logits(X)[:, :len(self.classes_)]

    def predict_proba(self, X):
        z = self.decision_function(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def sparsity_report(self):
        check_is_fitted(self, "model_")
        return self.model_.sparsity_report()

    def flops_fractions(self):
        """(train, inference) FLOPS fractions from the last epoch record."""
        check_is_fitted(self, "model_")
        if self.history_:
            h = self.history_[-1]
            return h.train_flops_fraction, h.infer_flops_fraction
        return run_flops_fraction([], model_ledger(self.model_))
