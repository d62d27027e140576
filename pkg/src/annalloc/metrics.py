"""Allocator quality measures: worst-case error, coverage, trajectory replay, timing.

An allocator here is any object with ``allocate(tau, sigma) -> u``; objects
that also offer ``allocate_many(tau, sigma)`` are evaluated in batches.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .baseline import linearize, solve_box_qp
from .dataset import lhs_sample
from .effectiveness import project_box
from .errors import InsufficientSamplesError

COVERAGE_NOTE = (
    "coverage ratio = fraction of attainable demands (uniform over the bounding box, "
    "rejection-sampled) whose 1-norm allocation error is <= eps_cov; it approaches the "
    "volume ratio as eps_cov -> 0 when the allocator image lies inside the attainable set"
)


def _allocate_many(alloc, tau, sigma) -> np.ndarray:
    if hasattr(alloc, "allocate_many"):
        return np.asarray(alloc.allocate_many(tau, sigma), dtype=float)
    return np.array([alloc.allocate(t, s) for t, s in zip(tau, sigma)], dtype=float).reshape(len(tau), -1)


def allocation_errors(alloc, model, tau, sigma) -> np.ndarray:
    """Vector of ``||G(P(alloc(tau, sigma)), sigma) - tau||_1`` over rows."""
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (len(tau), 2))
    u = project_box(_allocate_many(alloc, tau, sigma), model.box())
    return np.sum(np.abs(model.evaluate(u, sigma) - tau), axis=-1)


def allocation_error(alloc, model, tau, sigma) -> float:
    u = project_box(alloc.allocate(np.asarray(tau, dtype=float), np.asarray(sigma, dtype=float)), model.box())
    return float(np.sum(np.abs(model.evaluate(u, sigma) - np.asarray(tau, dtype=float))))


def fit_scores(alloc, model, tau, sigma) -> dict:
    """MSE, RMSE and R^2 of the moments an allocator reproduces (unweighted)."""
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (len(tau), 2))
    u = project_box(_allocate_many(alloc, tau, sigma), model.box())
    res = model.evaluate(u, sigma) - tau
    ss_res = float(np.sum(res * res))
    ss_tot = float(np.sum((tau - tau.mean(axis=0)) ** 2))
    mse = ss_res / len(tau)
    return {"mse": mse, "rmse": float(np.sqrt(mse)), "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")}


# --- maximum allocation error ------------------------------------------------

def nested_lhs(n: int, dim: int, seed) -> np.ndarray:
    """``n`` points in the unit cube built from LHS blocks of sizes 1, 1, 2, 4, ...

    Point sets are prefix-nested: the first ``k`` points do not depend on
    ``n``, so more starts always means a superset of starts.
    """
    blocks, total, k = [], 0, 0
    while total < n:
        size = max(1, total)
        blocks.append(lhs_sample(size, np.zeros(dim), np.ones(dim), np.random.default_rng([seed, k])))
        total += size
        k += 1
    return np.vstack(blocks)[:n]


def pattern_search_max(f, z0, step=0.25, min_step=1e-6, max_evals=50_000):
    """Compass search maximizing ``f`` over the unit cube.

    ``f`` maps a (k, d) array of points to k values. Each poll evaluates the
    2d axis neighbours (clipped to the cube), moves to the best strict
    improvement, and halves the step otherwise.
    """
    z = np.clip(np.asarray(z0, dtype=float), 0.0, 1.0)
    d = z.size
    fz = float(f(z[None])[0])
    evals = 1
    eye = np.eye(d)
    while step >= min_step and evals < max_evals:
        polls = np.clip(np.vstack([z + step * eye, z - step * eye]), 0.0, 1.0)
        vals = f(polls)
        evals += len(polls)
        j = int(np.argmax(vals))
        if vals[j] > fz:
            z, fz = polls[j], float(vals[j])
        else:
            step *= 0.5
    return z, fz, evals


@dataclass
class MaeReport:
    mae: float
    tau_star: list
    sigma_star: list
    u_star: list
    starts: int
    per_start: list
    end_points: list = field(default_factory=list, repr=False)
    norm: str = "1-norm of moment error; a lower bound on the true maximum"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _domain(model):
    box, sbox = model.box(), model.state_box()
    lo = np.concatenate([box.lower, sbox.lower])
    hi = np.concatenate([box.upper, sbox.upper])
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("MAE search needs a bounded control box and envelope")
    return lo, hi


def mae_objective(alloc, model):
    """Allocation error as a function of unit-cube points ``(u', sigma)``.

    Demands are generated as ``tau = G(u', sigma)``, so every demand visited
    is attainable.
    """
    lo, hi = _domain(model)

    def f(z):
        p = lo + np.atleast_2d(z) * (hi - lo)
        u, sigma = p[:, :5], p[:, 5:]
        return allocation_errors(alloc, model, model.evaluate(u, sigma), sigma)

    return f, lo, hi


def mae(alloc, model, starts: int = 16, seed: int = 0, min_step: float = 1e-6) -> MaeReport:
    """Multi-start search for the maximum allocation error over ``U x S``."""
    if starts < 1:
        raise ValueError("starts must be >= 1")
    f, lo, hi = mae_objective(alloc, model)
    seeds = nested_lhs(starts, lo.size, seed)
    best = (-np.inf, None)
    per_start, ends = [], []
    for z0 in seeds:
        z, fz, _ = pattern_search_max(f, z0, min_step=min_step)
        per_start.append(fz)
        ends.append(z.tolist())
        if fz > best[0]:
            best = (fz, z)
    p = lo + best[1] * (hi - lo)
    u, sigma = p[:5], p[5:]
    tau = model.evaluate(u, sigma)
    return MaeReport(
        mae=float(best[0]), tau_star=tau.tolist(), sigma_star=sigma.tolist(), u_star=u.tolist(),
        starts=starts, per_start=per_start, end_points=ends,
    )


def mae_on_ball(alloc, model, sigma, radius: float, starts: int = 16, seed: int = 0,
                min_step: float = 1e-6) -> MaeReport:
    """Maximum allocation error over demands ``||tau||_2 <= radius`` at a fixed ``sigma``.

    Points of the cube ``[-radius, radius]^3`` outside the ball are pulled
    radially onto its surface. The caller is responsible for the ball lying
    inside the attainable set.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    sigma = np.asarray(sigma, dtype=float)

    def to_tau(z):
        v = (2.0 * np.atleast_2d(z) - 1.0) * radius
        n = np.linalg.norm(v, axis=1, keepdims=True)
        return np.where(n > radius, v * (radius / np.maximum(n, 1e-300)), v)

    def f(z):
        tau = to_tau(z)
        return allocation_errors(alloc, model, tau, np.broadcast_to(sigma, (len(tau), 2)))

    best = (-np.inf, None)
    per_start, ends = [], []
    for z0 in nested_lhs(starts, 3, seed):
        z, fz, _ = pattern_search_max(f, z0, min_step=min_step)
        per_start.append(fz)
        ends.append(z.tolist())
        if fz > best[0]:
            best = (fz, z)
    tau = to_tau(best[1])[0]
    u = np.asarray(_allocate_many(alloc, tau[None], sigma[None]))[0]
    return MaeReport(
        mae=float(best[0]), tau_star=tau.tolist(), sigma_star=sigma.tolist(), u_star=u.tolist(),
        starts=starts, per_start=per_start, end_points=ends,
        norm="1-norm of moment error over a command ball; a lower bound on the true maximum",
    )


def is_stationary_at_kink_or_face(f, z, h=1e-4, face_tol=1e-4, curvature_tol=1e-12) -> bool:
    """True if ``z`` is on a face of the unit cube or ``f`` bends within ``h`` of it.

    For a piecewise-linear objective an interior maximizer of a single
    linear piece cannot exist unless the piece is flat, so a stalled search
    point must show a kink (nonzero second difference) or sit on a face.
    """
    z = np.asarray(z, dtype=float)
    if np.any((z <= face_tol) | (z >= 1.0 - face_tol)):
        return True
    eye = np.eye(z.size)
    pts = np.vstack([z[None], z + h * eye, z - h * eye])
    v = f(pts)
    second = v[1:1 + z.size] + v[1 + z.size:] - 2.0 * v[0]
    return bool(np.any(np.abs(second) > curvature_tol))


# --- attainability -----------------------------------------------------------

def gauss_newton_box(model, tau, sigma, u0, tol=1e-6, max_iter=30):
    """Projected Gauss-Newton for ``min ||G(u, sigma) - tau||^2`` over the box.

    Each step solves the linearized problem with the box QP and backtracks
    until the residual decreases. Returns ``(u, residual_1norm)``.
    """
    box = model.box()
    tau = np.asarray(tau, dtype=float)
    u = project_box(u0, box)
    r = model.evaluate(u, sigma) - tau
    cost = float(r @ r)
    for _ in range(max_iter):
        if np.sum(np.abs(r)) <= tol:
            break
        local = linearize(model, u, sigma, side=1)
        cand = solve_box_qp(local.slope, tau - local.offset, None, box, x0=u).u
        step = cand - u
        accepted = False
        t = 1.0
        for _ in range(20):
            trial = u + t * step
            rt = model.evaluate(trial, sigma) - tau
            ct = float(rt @ rt)
            if ct < cost:
                u, r, cost, accepted = trial, rt, ct, True
                break
            t *= 0.5
        if not accepted:
            break
    return u, float(np.sum(np.abs(r)))


def is_attainable(model, tau, sigma, tol_feas: float = 1e-6, starts: int = 16, seed: int = 0):
    """Whether ``tau`` lies in the pointwise attainable set at ``sigma``.

    Runs projected Gauss-Newton from the zero command (projected into the
    box) and LHS points, stopping at the first start whose 1-norm residual
    reaches ``tol_feas``. Returns ``(attainable, best_u, best_residual)``.
    """
    if tol_feas <= 0:
        raise ValueError("tol_feas must be positive")
    box = model.box()
    sigma = np.asarray(sigma, dtype=float)
    inits = [project_box(np.zeros(box.dim), box)]
    if starts > 1:
        inits += list(lhs_sample(starts - 1, box.lower, box.upper, np.random.default_rng([seed, 3])))
    best_u, best_r = None, np.inf
    for u0 in inits:
        u, res = gauss_newton_box(model, tau, sigma, u0, tol=tol_feas)
        if res < best_r:
            best_u, best_r = u, res
        if best_r <= tol_feas:
            break
    return best_r <= tol_feas, best_u, best_r


# --- coverage ----------------------------------------------------------------

@dataclass
class CoverageReport:
    sigma_grid: list
    attainable: list
    drawn: list
    covered: list
    ratio: list
    overall: float
    eps_cov: float
    tol_feas: float
    note: str = COVERAGE_NOTE

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sigma_grid(model, n_alpha: int = 9, n_beta: int = 9) -> np.ndarray:
    sbox = model.state_box()
    a = np.linspace(sbox.lower[0], sbox.upper[0], n_alpha)
    b = np.linspace(sbox.lower[1], sbox.upper[1], n_beta)
    return np.array([(x, y) for x in a for y in b])


def sample_attainable(model, sigma, n: int, seed, tol_feas: float = 1e-6, max_draw_factor: int = 20,
                      n_hull: int = 2000):
    """Rejection-sample ``n`` attainable demands uniformly from the image's bounding box.

    Returns ``(taus, drawn)``; fewer than ``n`` taus come back if the draw
    budget runs out.
    """
    box = model.box()
    rng = np.random.default_rng(seed)
    img = model.evaluate(lhs_sample(n_hull, box.lower, box.upper, rng), np.asarray(sigma, dtype=float))
    lo, hi = img.min(axis=0), img.max(axis=0)
    kept, drawn = [], 0
    while len(kept) < n and drawn < max_draw_factor * n:
        tau = lo + rng.random(3) * (hi - lo)
        drawn += 1
        ok, _, _ = is_attainable(model, tau, sigma, tol_feas, seed=drawn)
        if ok:
            kept.append(tau)
    return np.array(kept).reshape(-1, 3), drawn


def coverage_ratio(alloc, model, grid=None, samples_per_sigma: int = 100, eps_cov=1e-3, seed: int = 0,
                   tol_feas: float = 1e-6, min_attainable: int = 30) -> CoverageReport:
    """Per-condition fraction of attainable demands the allocator reproduces within ``eps_cov``."""
    if samples_per_sigma < 100:
        raise ValueError("samples_per_sigma must be >= 100")
    if eps_cov <= 0:
        raise ValueError("eps_cov must be positive")
    grid = sigma_grid(model) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    att, drawn, cov, ratio = [], [], [], []
    for k, sigma in enumerate(grid):
        taus, nd = sample_attainable(model, sigma, samples_per_sigma, [seed, 4, k], tol_feas)
        if len(taus) < min_attainable:
            raise InsufficientSamplesError(f"only {len(taus)} attainable samples at sigma={sigma.tolist()}")
        errs = allocation_errors(alloc, model, taus, sigma)
        c = int(np.sum(errs <= eps_cov))
        att.append(len(taus))
        drawn.append(nd)
        cov.append(c)
        ratio.append(c / len(taus))
    return CoverageReport(grid.tolist(), att, drawn, cov, ratio, float(min(ratio)), float(eps_cov), tol_feas)


# --- trajectory replay -------------------------------------------------------

AXES = {"cl": 0, "cm": 1, "cn": 2}


def helix(t, duration=1.0, radius=0.003, axis="cn") -> np.ndarray:
    """Circle of ``radius`` (one turn per second) in the two non-axis moments,
    axis component ramping linearly from 0 to ``radius`` over ``duration``."""
    t = np.asarray(t, dtype=float)
    k = AXES[axis]
    others = [i for i in range(3) if i != k]
    tau = np.zeros(t.shape + (3,))
    tau[..., others[0]] = radius * np.cos(2 * np.pi * t)
    tau[..., others[1]] = radius * np.sin(2 * np.pi * t)
    tau[..., k] = radius * t / duration
    return tau


@dataclass
class TrajectoryResult:
    t: np.ndarray
    tau_d: np.ndarray
    tau_a: np.ndarray
    u: np.ndarray
    err: np.ndarray
    call_s: np.ndarray

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.err))

    @property
    def max_error(self) -> float:
        return float(np.max(self.err))

    @property
    def mean_call_s(self) -> float:
        return float(np.mean(self.call_s))

    def to_csv(self, path, header_comment: str | None = None):
        cols = ["t", "cl_d", "cm_d", "cn_d", "cl_a", "cm_a", "cn_a"] + [f"u{i}" for i in range(5)] + ["err", "call_us"]
        data = np.column_stack([self.t, self.tau_d, self.tau_a, self.u, self.err, self.call_s * 1e6])
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def run_trajectory(alloc, model, duration=1.0, dt=1e-3, radius=0.003, axis="cn",
                   alpha=(0.0, 8.0), beta=(-12.0, 12.0)) -> TrajectoryResult:
    """Track a helical moment demand while alpha and beta sweep linearly."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    frac = t / duration
    sig = np.column_stack([alpha[0] + frac * (alpha[1] - alpha[0]), beta[0] + frac * (beta[1] - beta[0])])
    tau_d = helix(t, duration, radius, axis)
    box = model.box()
    u = np.empty((n, 5))
    call = np.empty(n)
    clock = time.perf_counter
    for k in range(n):
        t0 = clock()
        uk = alloc.allocate(tau_d[k], sig[k])
        call[k] = clock() - t0
        u[k] = project_box(uk, box)
    tau_a = model.evaluate(u, sig)
    err = np.sum(np.abs(tau_a - tau_d), axis=1)
    return TrajectoryResult(t, tau_d, tau_a, u, err, call)


# --- timing ------------------------------------------------------------------

def timing_workload(model, n_calls: int, seed: int = 0):
    box, sbox = model.box(), model.state_box()
    rng = np.random.default_rng([seed, 5])
    u = box.lower + rng.random((n_calls, 5)) * box.width
    sigma = sbox.lower + rng.random((n_calls, 2)) * sbox.width
    return model.evaluate(u, sigma), sigma


def time_allocator(alloc, tau, sigma, warmup: int = 100) -> float:
    """Mean wall-clock seconds per ``allocate`` call over the workload."""
    for k in range(min(warmup, len(tau))):
        alloc.allocate(tau[k], sigma[k])
    if hasattr(alloc, "reset"):
        alloc.reset()
    allocate = alloc.allocate
    t0 = time.perf_counter()
    for k in range(len(tau)):
        allocate(tau[k], sigma[k])
    return (time.perf_counter() - t0) / len(tau)


def bench_timing(allocators: dict, model, n_calls: int = 10_000, seed: int = 0) -> dict:
    """Mean per-call time of each allocator on one shared random workload."""
    if n_calls < 1000:
        raise ValueError("n_calls must be >= 1000")
    tau, sigma = timing_workload(model, n_calls, seed)
    return {name: time_allocator(a, tau, sigma) for name, a in allocators.items()}


def dump_json(obj, path):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=default)
        fh.write("\n")
