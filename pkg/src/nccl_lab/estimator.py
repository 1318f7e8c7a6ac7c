"""Scikit-learn facade over the continual trainer.

The underlying trainer consumes a task stream, not a flat (X, y); this
wrapper covers the single-task case so the model slots into sklearn
pipelines and model selection. ``partial_fit`` with a ``classes`` split
is deliberately not offered: task boundaries carry state (snapshots,
buffer) that sklearn's API cannot express.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import ExperimentConfig
from .continual import ReplayBuffer, Task, train_task
from .evaluation import probe_logits, train_probe
from .geometry import build_etf
from .model import ModelConfig, features_np, init_model


class SAMixClassifier(BaseEstimator, ClassifierMixin):
    """Single-task classifier trained with the mixed-prototype objective.

    Parameters mirror the experiment config's loss/model/train sections;
    the fitted attributes expose the encoder features and the probe head.
    """

    def __init__(self, embed_dim=16, hidden_dim=64, epochs=30,
                 batch_size=32, lr=0.05, alpha=25.0, mix=True,
                 interp_mode="slerp", mode="ta_nccl", seed=0):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.alpha = alpha
        self.mix = mix
        self.interp_mode = interp_mode
        self.mode = mode
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ValueError(f"SAMixClassifier: X must be 2-D, got "
                             f"shape {X.shape}")
        self.classes_ = np.unique(y)
        k = len(self.classes_)
        if k < 2:
            raise ValueError("SAMixClassifier: need at least 2 classes")
        if k == 2 and self.mix and self.interp_mode == "slerp":
            # a 2-class prototype frame is antipodal, where the great
            # circle between prototypes is not unique
            raise ValueError("SAMixClassifier: slerp mixing is undefined "
                             "for exactly 2 classes; use interp_mode="
                             "'linear' or mix=False")
        y_idx = np.searchsorted(self.classes_, y)

        cfg = ExperimentConfig()
        cfg.dataset.classes = k
        cfg.dataset.input_dim = X.shape[1]
        cfg.tasks.count = 1
        cfg.tasks.classes_per_task = k
        cfg.method_mode = self.mode
        cfg.mix.enabled = self.mix
        cfg.mix.alpha = self.alpha
        cfg.mix.interp_mode = self.interp_mode
        cfg.model.embed_dim = max(self.embed_dim, k)
        cfg.model.hidden_dim = self.hidden_dim
        cfg.train.batch_size = self.batch_size
        cfg.train.lr = self.lr
        cfg.train.seed = self.seed
        cfg.validate()

        streams = np.random.SeedSequence(self.seed).spawn(4)
        rng_model, rng_data, rng_mix, rng_buffer = \
            (np.random.default_rng(s) for s in streams)
        self.prototypes_ = build_etf(k, cfg.model.embed_dim, seed=self.seed)
        model_cfg = ModelConfig(
            input_dim=X.shape[1], hidden_dim=self.hidden_dim,
            feature_dim=cfg.model.feature_dim,
            proj_hidden_dim=cfg.model.proj_hidden_dim,
            embed_dim=cfg.model.embed_dim, num_classes=k)
        self.params_ = init_model(model_cfg, rng_model)

        empty = np.empty((0, X.shape[1]))
        task = Task(0, np.arange(k), X, y_idx, empty, np.empty(0, dtype=int),
                    empty, np.empty(0, dtype=int))
        train_task(self.params_, task, self.prototypes_, None,
                   np.array([], dtype=np.int64), np.arange(k),
                   ReplayBuffer(0, rng_buffer), cfg, self.epochs,
                   rng_data, rng_mix, rng_buffer)
        self.classifier_ = train_probe(self.params_, X, y_idx, k)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "classifier_")
        return probe_logits(self.params_, self.classifier_,
                            np.asarray(X, dtype=np.float64))

    def predict(self, X):
        idx = np.argmax(self.decision_function(X), axis=1)
        return self.classes_[idx]

    def transform(self, X):
        """Unit-sphere embedding of X under the fitted encoder+projector."""
        check_is_fitted(self, "params_")
        return features_np(self.params_, np.asarray(X, dtype=np.float64))
