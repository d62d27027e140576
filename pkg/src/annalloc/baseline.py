"""Affine allocators: local linearization plus box-constrained weighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .base import AllocatorMixin
from .effectiveness import BoxSet, SyntheticModel, as_weight, project_box
from .errors import RankDeficientError

COND_LIMIT = 1e12
MAX_ITER = 200


@dataclass(frozen=True)
class AffineLocalModel:
    """``G(u, sigma0) ~ slope @ u + offset`` around ``u0``."""

    slope: np.ndarray
    offset: np.ndarray
    u0: np.ndarray
    sigma0: np.ndarray

    def predict(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.slope.T + self.offset


def linearize(model, u0, sigma0, side=None) -> AffineLocalModel:
    u0 = np.asarray(u0, dtype=float)
    sigma0 = np.asarray(sigma0, dtype=float)
    slope = np.asarray(model.jacobian_u(u0, sigma0, side=side), dtype=float)
    offset = model.evaluate(u0, sigma0) - slope @ u0
    return AffineLocalModel(slope, offset, u0, sigma0)


def weighted_pinv(slope, tau_bar, weight=None) -> np.ndarray:
    """Minimum ``u' W u`` solution of ``slope @ u = tau_bar``.

    ``weight`` acts on the controls (n x n, default identity).
    """
    g = np.asarray(slope, dtype=float)
    tau_bar = np.asarray(tau_bar, dtype=float)
    w_inv = np.linalg.inv(as_weight(weight, g.shape[1]).w)
    gram = g @ w_inv @ g.T
    if np.linalg.cond(gram) > COND_LIMIT:
        raise RankDeficientError("slope matrix is (numerically) rank deficient")
    return w_inv @ g.T @ np.linalg.solve(gram, tau_bar)


@dataclass
class QpSolution:
    u: np.ndarray
    active_set: tuple
    kkt_residual: float
    iterations: int
    converged: bool
    objective: float


def _status(x, lo, hi) -> tuple:
    return tuple("lower" if xi <= l else "upper" if xi >= h else "free" for xi, l, h in zip(x, lo, hi))


def kkt_residual(a, b, x, box: BoxSet) -> float:
    """Projected-gradient stationarity ``max |x - P(x - grad)|`` of ``0.5 ||a x - b||^2``."""
    g = a.T @ (a @ x - b)
    return float(np.max(np.abs(x - project_box(x - g, box)))) if x.size else 0.0


def solve_box_qp(slope, target, weight=None, box: BoxSet | None = None, x0=None,
                 max_iter: int = MAX_ITER) -> QpSolution:
    """Minimize ``||slope @ u - target||_W^2`` subject to ``box``.

    Primal active-set (bounded-variable least squares): solve the free
    variables' least-squares subproblem, step back to the first bound hit if
    the solution leaves the box, and release the bound whose multiplier has
    the wrong sign by the largest amount (lowest index on ties). Rank
    deficient subproblems take the minimum-norm step.
    """
    g = np.asarray(slope, dtype=float)
    n = g.shape[1]
    box = box if box is not None else BoxSet.unbounded(n)
    w = as_weight(weight, g.shape[0])
    a = w.root @ g
    b = w.root @ np.asarray(target, dtype=float)
    lo, hi = box.lower, box.upper
    x = project_box(box.center if x0 is None else x0, box)

    scale = np.linalg.norm(a) * (np.linalg.norm(b) + np.linalg.norm(a @ x)) + 1e-300
    tol = 1e-13 * scale
    status = np.zeros(n, dtype=int)  # 0 free, -1 at lower, +1 at upper
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        free = status == 0
        r = b - a @ x
        z = x.copy()
        if free.any():
            step = np.linalg.lstsq(a[:, free], r, rcond=None)[0]
            z[free] += step
        outside = free & ((z < lo) | (z > hi))
        if not outside.any():
            x = np.where(free, np.clip(z, lo, hi), x)
            grad = a.T @ (a @ x - b)
            viol = np.where(status < 0, -grad, np.where(status > 0, grad, 0.0))
            j = int(np.argmax(viol))
            if viol[j] <= tol:
                converged = True
                break
            status[j] = 0
            continue
        d = z - x
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(z < lo, (lo - x) / d, np.where(z > hi, (hi - x) / d, np.inf))
        lim = np.where(outside, np.maximum(lim, 0.0), np.inf)
        alpha = float(np.min(lim))
        x = np.where(free, x + alpha * d, x)
        hit = outside & (lim <= alpha)
        status[hit & (z < lo)] = -1
        status[hit & (z > hi)] = 1
        x = np.where(status < 0, lo, np.where(status > 0, hi, np.clip(x, lo, hi)))

    res = a @ x - b
    return QpSolution(
        u=x,
        active_set=_status(x, lo, hi),
        kkt_residual=kkt_residual(a, b, x, box),
        iterations=it,
        converged=converged,
        objective=float(res @ res),
    )


def allocate_affine(model, tau_d, sigma, u_prev=None, weight=None, box: BoxSet | None = None) -> QpSolution:
    """Linearize at ``(u_prev, sigma)`` and solve the box QP warm-started there."""
    box = box if box is not None else model.box()
    u_prev = box.center if u_prev is None else np.asarray(u_prev, dtype=float)
    local = linearize(model, u_prev, sigma, side=1)
    return solve_box_qp(local.slope, np.asarray(tau_d, dtype=float) - local.offset, weight, box, x0=u_prev)


class QPAllocator(AllocatorMixin, BaseEstimator):
    """Affine QP allocator (absolute or incremental form).

    With ``warm_start=True`` each call linearizes at the previous solution,
    so a sequence of calls is history dependent; ``warm_start=False``
    linearizes at the box center every time, which makes it a deterministic
    map from ``(tau, sigma)`` to deflections.
    """

    name = "qp"

    def __init__(self, model=None, weight=None, warm_start=True, max_iter=MAX_ITER):
        self.model = model
        self.weight = weight
        self.warm_start = warm_start
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        self.model_ = self.model if self.model is not None else SyntheticModel()
        self.box_ = self.model_.box()
        self.weight_ = as_weight(self.weight)
        self.n_features_in_ = 5
        self.reset()
        return self

    def reset(self):
        self.u_prev_ = self.box_.center.copy()
        self.last_solution_ = None
        return self

    def allocate(self, tau, sigma) -> np.ndarray:
        u0 = self.u_prev_ if self.warm_start else self.box_.center
        local = linearize(self.model_, u0, sigma, side=1)
        sol = solve_box_qp(local.slope, np.asarray(tau, dtype=float) - local.offset, self.weight_, self.box_, x0=u0,
                           max_iter=self.max_iter)
        self.last_solution_ = sol
        if self.warm_start:
            self.u_prev_ = sol.u
        return sol.u
