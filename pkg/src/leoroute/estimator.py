"""Scikit-learn style wrapper around the hop-distance model.

DistanceFieldRegressor exposes the train/predict cycle through the familiar
fit/predict/score surface (with get_params/set_params from BaseEstimator), so
the model drops into sklearn tooling such as clone() and parameter search.
"""
import numpy as np
from sklearn.base import BaseEstimator

from . import gnn
from .graphs import NodeFeatures
from .oracle import Dataset, TrainingSample

__all__ = ["DistanceFieldRegressor", "check_samples"]


def check_samples(samples) -> list:
    """Validate a sequence of TrainingSample inputs.

    Checks per-sample shape consistency, a symmetric ahat, a binary mask with
    at least one masked-in node, finite labels under the mask, and a common
    feature width across samples.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("expected at least one sample")
    widths = None
    for i, s in enumerate(samples):
        if not isinstance(s, TrainingSample):
            raise TypeError(f"sample {i}: expected TrainingSample, got {type(s).__name__}")
        n = s.n
        if s.ahat.shape != (n, n):
            raise ValueError(f"sample {i}: ahat shape {s.ahat.shape} != ({n}, {n})")
        if not np.allclose(s.ahat, s.ahat.T):
            raise ValueError(f"sample {i}: ahat must be symmetric")
        if s.features.low_order.shape[0] != n or s.features.high_order.shape[0] != n:
            raise ValueError(f"sample {i}: feature row count != {n}")
        if s.mask.shape != (n,) or not np.all(np.isin(s.mask, (0.0, 1.0))):
            raise ValueError(f"sample {i}: mask must be a length-{n} 0/1 vector")
        if s.mask.sum() == 0:
            raise ValueError(f"sample {i}: mask has no masked-in node")
        if not np.all(np.isfinite(s.labels[s.mask == 1.0])):
            raise ValueError(f"sample {i}: labels must be finite where mask is 1")
        w = (s.features.low_order.shape[1], s.features.high_order.shape[1])
        if widths is None:
            widths = w
        elif w != widths:
            raise ValueError(f"sample {i}: feature widths {w} != {widths}")
    return samples


class DistanceFieldRegressor(BaseEstimator):
    """Per-node hop-distance regressor over graph samples.

    Parameters mirror the training hyperparameters; fitted state lives in
    `params_` (model tensors) and `report_` (loss history).
    """

    def __init__(self, hidden=32, learning_rate=1e-3, beta=1e-4, epochs=200,
                 batch=1, early_stop_patience=20, optimizer="adam", seed=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.beta = beta
        self.epochs = epochs
        self.batch = batch
        self.early_stop_patience = early_stop_patience
        self.optimizer = optimizer
        self.seed = seed

    def _hyper(self) -> gnn.Hyperparameters:
        return gnn.Hyperparameters(
            learning_rate=self.learning_rate,
            beta=self.beta,
            epochs=self.epochs,
            batch=self.batch,
            early_stop_patience=self.early_stop_patience,
            hidden=self.hidden,
            optimizer=self.optimizer,
            seed=self.seed,
        )

    def fit(self, samples, validation=None):
        """Fit on TrainingSample instances; `validation` is optional."""
        train = check_samples(samples)
        val = check_samples(validation) if validation else []
        dataset = Dataset(
            samples=train + val,
            train_indices=list(range(len(train))),
            val_indices=list(range(len(train), len(train) + len(val))),
        )
        self.params_, self.report_ = gnn.train(dataset, self._hyper())
        return self

    def predict(self, sample) -> np.ndarray:
        """Per-node predicted distances for one sample.

        Accepts a TrainingSample or an (ahat, NodeFeatures) pair.
        """
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit() first")
        if isinstance(sample, TrainingSample):
            ahat, features = sample.ahat, sample.features
        else:
            ahat, features = sample
            if not isinstance(features, NodeFeatures):
                raise TypeError("expected (ahat, NodeFeatures) or TrainingSample")
        return gnn.predict_field(self.params_, ahat, features)

    def score(self, samples) -> float:
        """Negative masked mean squared error (higher is better)."""
        samples = check_samples(samples)
        errs = []
        for s in samples:
            pred = self.predict(s)
            errs.append(float(np.sum(s.mask * (pred - s.labels) ** 2) / s.mask.sum()))
        return -float(np.mean(errs))
