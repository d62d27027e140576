"""Shared estimator plumbing: input validation and the allocator interface."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted

from .effectiveness import as_weight

N_INPUTS = 5


def check_inputs(X, n_inputs: int = N_INPUTS) -> np.ndarray:
    """Validate allocator input rows ``[cl, cm, cn, alpha, beta(, m0..m4)]``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n_inputs:
        raise ValueError(f"X has {X.shape[1]} features, but the allocator expects {n_inputs}")
    return X


class AllocatorMixin:
    """Allocator API on top of a per-sample ``allocate(tau, sigma)``.

    ``predict`` returns admissible deflections, one row per input row.
    ``score`` is the R^2 of the moments reproduced through the model.
    """

    name = "allocator"

    def allocate(self, tau, sigma) -> np.ndarray:
        raise NotImplementedError

    def allocate_many(self, tau, sigma) -> np.ndarray:
        tau, sigma = np.atleast_2d(tau), np.atleast_2d(sigma)
        return np.array([self.allocate(t, s) for t, s in zip(tau, sigma)]).reshape(len(tau), 5)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = check_inputs(X, self.n_features_in_)
        return self.allocate_many(X[:, :3], X[:, 3:5])

    def achieved_moments(self, X) -> np.ndarray:
        X = check_inputs(X, self.n_features_in_)
        return self.model_.evaluate(self.predict(X), X[:, 3:5])

    def score(self, X, y=None, sample_weight=None) -> float:
        X = check_inputs(X, self.n_features_in_)
        w = as_weight(getattr(self, "weight_", None))
        tau = X[:, :3]
        res = self.achieved_moments(X) - tau
        ss_res = np.sum(w.norm2(res))
        ss_tot = np.sum(w.norm2(tau - tau.mean(axis=0)))
        return float(1.0 - ss_res / ss_tot)
