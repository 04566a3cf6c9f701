"""Scikit-learn style wrappers over the eye pipeline and classifier.

`EyeDiagramTransformer` turns frames into (H, W, 2) tensors;
`ConvNetClassifier` wraps the numpy CNN behind fit/predict/score so the
pair composes with sklearn pipelines and model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_random_state

from . import classifier as cnn
from . import eyepipe

__all__ = ["EyeDiagramTransformer", "ConvNetClassifier"]


class EyeDiagramTransformer(TransformerMixin, BaseEstimator):
    """Stateless frame -> eye-tensor transform.

    Parameters mirror the preprocessing pipeline: trace length, render
    resolution, and output tensor dimensions.
    """

    def __init__(self, n_s=eyepipe.DEFAULT_TRACE_LEN,
                 render_h=None, render_w=None,
                 out_h=eyepipe.DEFAULT_TENSOR_H,
                 out_w=eyepipe.DEFAULT_TENSOR_W):
        self.n_s = n_s
        self.render_h = render_h
        self.render_w = render_w
        self.out_h = out_h
        self.out_w = out_w

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        """X: iterable of ComplexFrame.  Returns (n, out_h, out_w, 2)."""
        render_h = self.render_h if self.render_h is not None else self.out_h
        render_w = self.render_w if self.render_w is not None else self.out_w
        tensors = [eyepipe.frame_to_tensor(frame, n_s=self.n_s,
                                           render_h=render_h,
                                           render_w=render_w,
                                           out_h=self.out_h,
                                           out_w=self.out_w).data
                   for frame in X]
        return np.stack(tensors).astype(np.float32)


class ConvNetClassifier(ClassifierMixin, BaseEstimator):
    """Compact residual CNN trained with SGD + momentum.

    X is an (n, H, W, 2) array of eye tensors in [0, 1]; y are integer or
    string labels.
    """

    def __init__(self, stem_channels=8, block_channels=(16, 32, 64),
                 residual=True, init_scale=1.0, learning_rate=0.001,
                 momentum=0.9, epochs=20, batch_size=32, random_state=0):
        self.stem_channels = stem_channels
        self.block_channels = block_channels
        self.residual = residual
        self.init_scale = init_scale
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 4 or X.shape[3] != 2:
            raise ValueError(f"X must be (n, H, W, 2), got {X.shape}")
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        seed = int(check_random_state(self.random_state)
                   .randint(0, 2 ** 31 - 1))
        model_cfg = cnn.ModelConfig(
            input_h=X.shape[1], input_w=X.shape[2],
            class_count=len(self.classes_),
            stem_channels=self.stem_channels,
            block_channels=tuple(self.block_channels),
            residual=self.residual, init_scale=self.init_scale,
            init_seed=seed)
        train_cfg = cnn.TrainConfig(
            learning_rate=self.learning_rate, momentum=self.momentum,
            epochs=self.epochs, batch_size=self.batch_size,
            eval_each_epoch=False, shuffle_seed=seed)

        def batch_factory(epoch):
            rng = np.random.default_rng(seed + epoch)
            order = rng.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                sel = order[start:start + self.batch_size]
                yield X[sel], y_idx[sel]

        params, state, metrics = cnn.train_batches(model_cfg, train_cfg,
                                                   batch_factory)
        self.model_config_ = model_cfg
        self.params_ = params
        self.state_ = state
        self.training_metrics_ = metrics
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict")

    def decision_function(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float32)
        out = []
        for start in range(0, len(X), self.batch_size):
            out.append(cnn.predict_logits(self.params_, self.state_,
                                          self.model_config_,
                                          X[start:start + self.batch_size]))
        return np.concatenate(out)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[logits.argmax(axis=1)]

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
