"""Scikit-learn style front end for the bag-trained detector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dsrf import FrequencyGrid
from .training import Bag, TrainConfig, classify_alarm, classify_points, train

__all__ = ["TdEfumiClassifier", "check_bags"]


def check_bags(bags, y=None):
    """Normalize fit inputs to a list of :class:`Bag`.

    Accepts either ready-made bags (y omitted) or a sequence of 2-d point
    arrays plus binary bag labels.
    """
    bags = list(bags)
    if not bags:
        raise ValueError("at least one bag is required")
    if all(isinstance(b, Bag) for b in bags):
        if y is not None:
            raise ValueError("y must be omitted when passing Bag objects")
        return bags
    if y is None:
        raise ValueError("bag labels y are required when passing raw point arrays")
    y = np.asarray(y)
    if y.shape[0] != len(bags):
        raise ValueError("y must provide one label per bag")
    out = []
    for i, (points, label) in enumerate(zip(bags, y)):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError(f"bag {i} must be a non-empty 2-d array")
        if not np.all(np.isfinite(points)):
            raise ValueError(f"bag {i} contains non-finite values")
        out.append(Bag(bag_id=str(i), label="positive" if label else "negative", points=points))
    return out


class TdEfumiClassifier(BaseEstimator):
    """Multiple-instance dictionary learner with a linear read-out.

    Fit on bags of stacked-complex feature vectors with bag-level labels;
    ``decision_function`` then scores individual points (higher means more
    target-like) and ``predict`` thresholds the scores at ``threshold``.

    Parameters mirror :class:`tdefumi.training.TrainConfig`; see there for
    their meaning.
    """

    def __init__(
        self,
        n_target_atoms=2,
        n_background_atoms=8,
        mean_reg=0.05,
        classifier_ridge=1e-3,
        smooth_reg=1e-2,
        sparse_penalty=0.1,
        posterior_scale=5.0,
        balance_scale=1.0,
        batch_size=32,
        n_epochs=100,
        learning_rate=0.5,
        lr_decay_steps=None,
        grad_ridge=1e-4,
        tol=1e-6,
        random_state=0,
        frequency_grid=None,
        pooling="max",
        threshold=0.5,
    ):
        self.n_target_atoms = n_target_atoms
        self.n_background_atoms = n_background_atoms
        self.mean_reg = mean_reg
        self.classifier_ridge = classifier_ridge
        self.smooth_reg = smooth_reg
        self.sparse_penalty = sparse_penalty
        self.posterior_scale = posterior_scale
        self.balance_scale = balance_scale
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.learning_rate = learning_rate
        self.lr_decay_steps = lr_decay_steps
        self.grad_ridge = grad_ridge
        self.tol = tol
        self.random_state = random_state
        self.frequency_grid = frequency_grid
        self.pooling = pooling
        self.threshold = threshold

    def _config(self) -> TrainConfig:
        return TrainConfig(
            n_target_atoms=self.n_target_atoms,
            n_background_atoms=self.n_background_atoms,
            mean_reg=self.mean_reg,
            classifier_ridge=self.classifier_ridge,
            smooth_reg=self.smooth_reg,
            sparse_penalty=self.sparse_penalty,
            posterior_scale=self.posterior_scale,
            balance_scale=self.balance_scale,
            batch_size=self.batch_size,
            n_epochs=self.n_epochs,
            learning_rate=self.learning_rate,
            lr_decay_steps=self.lr_decay_steps,
            grad_ridge=self.grad_ridge,
            tol=self.tol,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Train on bags: X is a sequence of (n_i, dim) arrays or Bag objects."""
        bags = check_bags(X, y)
        grid = self.frequency_grid
        if grid is not None and not isinstance(grid, FrequencyGrid):
            grid = FrequencyGrid(np.asarray(grid, dtype=float))
        self.model_ = train(bags, self._config(), grid=grid)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the estimator before scoring")

    def decision_function(self, X):
        """Per-point target scores for a (n, dim) array."""
        self._require_fitted()
        return classify_points(np.asarray(X, dtype=float), self.model_)

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold).astype(int)

    def score_bag(self, points, pooling=None):
        """Pooled score of one bag of points."""
        self._require_fitted()
        return classify_alarm(points, self.model_, pooling=pooling or self.pooling)

    def predict_bags(self, bags, pooling=None):
        self._require_fitted()
        return np.asarray(
            [self.score_bag(np.atleast_2d(np.asarray(b, dtype=float)), pooling) for b in bags]
        )
