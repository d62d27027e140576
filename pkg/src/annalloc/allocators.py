"""Reference allocators used as oracles and sanity baselines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .base import AllocatorMixin
from .effectiveness import SyntheticModel, project_box
from .metrics import gauss_newton_box
from .dataset import lhs_sample


class _FittedOnModel(AllocatorMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        self.model_ = self.model if self.model is not None else SyntheticModel()
        self.box_ = self.model_.box()
        self.n_features_in_ = 5
        return self


class ZeroAllocator(_FittedOnModel):
    """Commands the zero deflection (projected into the box) for every demand."""

    name = "zero"

    def __init__(self, model=None):
        self.model = model

    def fit(self, X=None, y=None):
        super().fit(X, y)
        self.u_ = project_box(np.zeros(self.box_.dim), self.box_)
        return self

    def allocate(self, tau, sigma):
        return self.u_

    def allocate_many(self, tau, sigma):
        return np.broadcast_to(self.u_, (len(np.atleast_2d(tau)), self.box_.dim)).copy()


class ConstantAllocator(ZeroAllocator):
    name = "constant"

    def __init__(self, model=None, value=None):
        self.model = model
        self.value = value

    def fit(self, X=None, y=None):
        super().fit(X, y)
        if self.value is not None:
            self.u_ = project_box(np.asarray(self.value, dtype=float), self.box_)
        return self


class OracleAllocator(_FittedOnModel):
    """Numerical inverse of the model: best box-feasible least-squares solution.

    Multi-start projected Gauss-Newton (zero command first, then LHS points),
    stopping as soon as the 1-norm residual reaches ``tol``.
    """

    name = "oracle"

    def __init__(self, model=None, tol=1e-15, starts=16, seed=0):
        self.model = model
        self.tol = tol
        self.starts = starts
        self.seed = seed

    def fit(self, X=None, y=None):
        super().fit(X, y)
        box = self.box_
        inits = [project_box(np.zeros(box.dim), box)]
        if self.starts > 1 and np.all(np.isfinite(box.width)):
            inits += list(lhs_sample(self.starts - 1, box.lower, box.upper, np.random.default_rng([self.seed, 3])))
        self.inits_ = inits
        return self

    def allocate(self, tau, sigma):
        best_u, best_r = None, np.inf
        for u0 in self.inits_:
            u, r = gauss_newton_box(self.model_, tau, sigma, u0, tol=self.tol, max_iter=50)
            if r < best_r:
                best_u, best_r = u, r
            if best_r <= self.tol:
                break
        return best_u
