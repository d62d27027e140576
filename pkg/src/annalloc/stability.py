"""Closed-loop simulation with an allocator in the loop and an ultimate-bound checker.

The plant is ``x' = f(x) + B(x) tau`` where the virtual control ``tau`` is
either the commanded moment (ideal loop) or the moment the allocator
actually produces, ``G(P(alloc(k(x), sigma(x))), sigma(x))`` (actual loop).
Allocation error then enters as a bounded input perturbation, and a
Lyapunov function with monomial class-K bounds yields an ultimate bound
``rho(r)`` on the state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .effectiveness import project_box
from .errors import InadmissibleError, NonfiniteStateError
from .metrics import allocation_error, mae, mae_on_ball

STATUS_PASS = "PASS"
STATUS_FAIL = "FAIL"
STATUS_INADMISSIBLE = "INADMISSIBLE"


@dataclass(frozen=True)
class Monomial:
    """Class-K function ``c * r**p`` with closed-form inverse."""

    c: float
    p: float

    def __post_init__(self):
        if not (self.c > 0 and self.p >= 1):
            raise ValueError(f"need c > 0 and p >= 1, got c={self.c}, p={self.p}")

    def __call__(self, r):
        return self.c * np.power(r, self.p)

    def inv(self, v):
        return np.power(np.asarray(v, dtype=float) / self.c, 1.0 / self.p)


@dataclass(frozen=True)
class ClassKSpec:
    """Lyapunov bounds on the ball ``||x|| <= r``.

    ``a1(|x|) <= V(x) <= a2(|x|)``, ``dV/dx (f + B tau) <= -a3(|x|)`` on the
    ideal loop and ``||dV/dx B|| <= a4(|x|)``.
    """

    a1: Monomial
    a2: Monomial
    a3: Monomial
    a4: Monomial
    theta: float
    r: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.r > 0:
            raise ValueError("r must be positive")

    @property
    def basin_radius(self) -> float:
        """Largest initial-state norm covered by the bound."""
        return float(self.a2.inv(self.a1(self.r)))

    @property
    def delta_limit(self) -> float:
        """Largest allocation error for which the bound applies."""
        return float(self.theta * self.a3(self.basin_radius) / self.a4(self.r))

    def admissible(self, delta: float) -> bool:
        return bool(delta <= self.delta_limit)


def rho_bound(spec: ClassKSpec, delta: float) -> float:
    """Ultimate bound ``a1^-1(a2(a3^-1(delta * a4(r) / theta)))``."""
    if delta < 0 or not np.isfinite(delta):
        raise ValueError("delta must be finite and non-negative")
    if not spec.admissible(delta):
        raise InadmissibleError(
            f"allocation error {delta:.6g} exceeds the admissible limit {spec.delta_limit:.6g}")
    return float(spec.a1.inv(spec.a2(spec.a3.inv(delta / spec.theta * spec.a4(spec.r)))))


@dataclass
class ClosedLoopSystem:
    """Plant, virtual control law and scheduling map.

    ``command_radius(r)``, when given, bounds ``||k(x)||`` over ``||x|| <= r``
    and lets the checker restrict the error search to the commands the loop
    can visit (valid only with a constant ``sigma_of_x``).
    """

    f: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    k_ctrl: Callable[[np.ndarray], np.ndarray]
    sigma_of_x: Callable[[np.ndarray], np.ndarray]
    dim: int
    command_radius: Callable[[float], float] | None = None
    constant_sigma: bool = False

    def ideal_rhs(self, x):
        return self.f(x) + self.b(x) @ self.k_ctrl(x)

    def actual_rhs(self, alloc, model):
        box = model.box()

        def rhs(x):
            sigma = self.sigma_of_x(x)
            u = project_box(alloc.allocate(self.k_ctrl(x), sigma), box)
            return self.f(x) + self.b(x) @ model.evaluate(u, sigma)

        return rhs

    def check_rank(self, states) -> bool:
        return all(np.linalg.matrix_rank(self.b(x)) == 3 for x in states)


def rk4_integrate(rhs, x0, t_end: float, dt: float):
    """Fixed-step classical Runge-Kutta. Returns ``(t, states)``.

    The last step is shortened so the grid ends exactly at ``t_end``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    n = int(np.ceil(t_end / dt - 1e-9))
    t = np.minimum(np.arange(n + 1) * dt, t_end)
    out = np.empty((n + 1, x.size))
    out[0] = x
    for i in range(n):
        h = t[i + 1] - t[i]
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonfiniteStateError(f"non-finite state at t={t[i + 1]:.6g}", t[: i + 1], out[: i + 1])
        out[i + 1] = x
    return t, out


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    err: np.ndarray

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def to_csv(self, path, header_comment: str | None = None):
        cols = ["t"] + [f"x{i}" for i in range(self.x.shape[1])] + ["norm", "err"]
        data = np.column_stack([self.t, self.x, self.norm, self.err])
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def simulate(sys: ClosedLoopSystem, alloc, model, x0, t_end: float, dt: float) -> Trajectory:
    """Integrate the actual closed loop; ``err`` is the allocation error along the path."""
    t, x = rk4_integrate(sys.actual_rhs(alloc, model), x0, t_end, dt)
    err = np.array([allocation_error(alloc, model, sys.k_ctrl(xi), sys.sigma_of_x(xi)) for xi in x])
    return Trajectory(t, x, err)


def simulate_ideal(sys: ClosedLoopSystem, x0, t_end: float, dt: float) -> Trajectory:
    t, x = rk4_integrate(sys.ideal_rhs, x0, t_end, dt)
    return Trajectory(t, x, np.zeros(len(t)))


def settling_index(norms, rho: float):
    """First index from which ``norms`` stays inside ``[0, rho]``, or None."""
    outside = np.flatnonzero(np.asarray(norms) > rho)
    if outside.size == 0:
        return 0
    i = int(outside[-1]) + 1
    return i if i < len(norms) else None


@dataclass
class BoundReport:
    delta: float
    delta_source: str
    delta_limit: float
    admissible: bool
    rho: float | None
    r: float
    theta: float
    basin_radius: float
    settling_times: list
    sup_norm_after: list
    final_norms: list
    status: str
    settle_atol: float = 0.0
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == STATUS_PASS

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("trajectories")
        d["passed"] = self.passed
        return d

    def to_text(self) -> str:
        rho = "n/a" if self.rho is None else f"{self.rho:.6g}"
        sup = max((s for s in self.sup_norm_after if s is not None), default=float("nan"))
        return (f"status={self.status} delta={self.delta:.6g} ({self.delta_source}) "
                f"limit={self.delta_limit:.6g} rho={rho} sup_after_settling={sup:.6g} "
                f"max_final_norm={max(self.final_norms):.6g}")


def check_ultimate_bound(sys: ClosedLoopSystem, alloc, model, spec: ClassKSpec, x0s, t_end: float = 10.0,
                         dt: float = 0.01, delta: float | None = None, conservative: bool = False,
                         starts: int = 16, seed: int = 0, settle_atol: float = 1e-5) -> BoundReport:
    """Measure the allocation error, compute ``rho`` and verify it on simulated trajectories.

    Without an explicit ``delta`` the error is searched over the command
    ball the loop can visit (or over the whole box and envelope when
    ``conservative`` is set or the system gives no command radius). An
    inadmissible error is reported; the trajectories are still simulated.
    Settling is detected against the ball of radius ``max(rho, settle_atol)``;
    the floor lets ``delta = 0`` (``rho = 0``) settle on a finite horizon and
    leaves any larger ``rho`` untouched.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    too_far = np.linalg.norm(x0s, axis=1) > spec.basin_radius * (1 + 1e-12)
    if too_far.any():
        raise ValueError(f"initial states outside the basin radius {spec.basin_radius:.6g}")

    if delta is not None:
        source = "supplied"
    elif conservative or sys.command_radius is None or not sys.constant_sigma:
        delta, source = mae(alloc, model, starts=starts, seed=seed).mae, "full-domain MAE"
    else:
        sigma0 = sys.sigma_of_x(np.zeros(sys.dim))
        delta = mae_on_ball(alloc, model, sigma0, sys.command_radius(spec.r), starts=starts, seed=seed).mae
        source = "command-ball MAE"
    delta = float(delta)

    admissible = spec.admissible(delta)
    rho = rho_bound(spec, delta) if admissible else None

    trajs, t_settle, sup_after = [], [], []
    for x0 in x0s:
        tr = simulate(sys, alloc, model, x0, t_end, dt)
        trajs.append(tr)
        if rho is None:
            t_settle.append(None)
            sup_after.append(None)
            continue
        i = settling_index(tr.norm, max(rho, settle_atol))
        t_settle.append(None if i is None else float(tr.t[i]))
        sup_after.append(None if i is None else float(tr.norm[i:].max()))

    if not admissible:
        status = STATUS_INADMISSIBLE
    elif all(s is not None for s in t_settle):
        status = STATUS_PASS
    else:
        status = STATUS_FAIL
    return BoundReport(
        delta=delta, delta_source=source, delta_limit=spec.delta_limit, admissible=admissible, rho=rho,
        r=spec.r, theta=spec.theta, basin_radius=spec.basin_radius, settling_times=t_settle,
        sup_norm_after=sup_after, final_norms=[float(tr.norm[-1]) for tr in trajs], status=status, settle_atol=settle_atol,
        trajectories=trajs,
    )


# --- shipped toy loop --------------------------------------------------------

TOY_GAIN = 0.02
TOY_COMMAND_RADIUS = 0.01
TOY_SIGMA = (4.0, 0.0)
TOY_R = 0.05
TOY_THETA = 0.5


def toy_system(gain: float = TOY_GAIN, command_radius: float = TOY_COMMAND_RADIUS,
               sigma=TOY_SIGMA) -> ClosedLoopSystem:
    """``x' = -x + tau`` in R^3 with ``k(x) = -gain * x`` clipped to a command ball."""
    sigma = np.asarray(sigma, dtype=float)
    eye = np.eye(3)

    def k_ctrl(x):
        v = -gain * np.asarray(x, dtype=float)
        n = np.linalg.norm(v)
        return v if n <= command_radius else v * (command_radius / n)

    return ClosedLoopSystem(
        f=lambda x: -np.asarray(x, dtype=float),
        b=lambda x: eye,
        k_ctrl=k_ctrl,
        sigma_of_x=lambda x: sigma,
        dim=3,
        command_radius=lambda r: min(gain * r, command_radius),
        constant_sigma=True,
    )


def toy_class_k(r: float = TOY_R, theta: float = TOY_THETA) -> ClassKSpec:
    """Bounds for ``V = |x|^2 / 2`` on the toy loop.

    ``V' = -|x|^2 + x.k(x)`` and ``x.k(x) <= 0`` because ``k`` points against
    ``x``, so ``a3 = r^2``; ``dV/dx B = x^T`` gives ``a4 = r``.
    """
    half_sq = Monomial(0.5, 2.0)
    return ClassKSpec(half_sq, half_sq, Monomial(1.0, 2.0), Monomial(1.0, 1.0), theta, r)


def lyapunov_violation(sys: ClosedLoopSystem, spec: ClassKSpec, n: int = 2000, seed: int = 0) -> float:
    """Largest violation of the three class-K inequalities for ``V = |x|^2 / 2`` on random states.

    Non-positive means the inequalities hold at every sample.
    """
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, sys.dim))
    x = d / np.linalg.norm(d, axis=1, keepdims=True) * (spec.r * rng.random((n, 1)) ** (1.0 / sys.dim))
    worst = -np.inf
    for xi in x:
        nx = np.linalg.norm(xi)
        v = 0.5 * nx**2
        vdot = xi @ sys.ideal_rhs(xi)
        worst = max(worst, spec.a1(nx) - v, v - spec.a2(nx), vdot + spec.a3(nx),
                    np.linalg.norm(xi @ sys.b(xi)) - spec.a4(nx))
    return float(worst)


def toy_initial_states(spec: ClassKSpec, scale: float = 0.95) -> np.ndarray:
    """Six axis points and eight diagonal points at ``scale`` times the basin radius."""
    axes = np.vstack([np.eye(3), -np.eye(3)])
    diag = np.array([[a, b, c] for a in (1, -1) for b in (1, -1) for c in (1, -1)]) / np.sqrt(3.0)
    return np.vstack([axes, diag]) * scale * spec.basin_radius
