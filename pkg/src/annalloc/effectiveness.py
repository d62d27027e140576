"""Control, state and moment spaces, box projection and effectiveness models.

Angles are in degrees everywhere. A control vector is ordered
``[de, d7U, d7L, d8U, d8L]`` (elevator, left clamshell upper/lower, right
clamshell upper/lower); a state vector is ``[alpha, beta]``; a moment vector
is ``[Cl, Cm, Cn]``. All evaluation functions broadcast over leading axes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import EmptyBoxError, FormatError, PwlBreakpointError

N_CONTROLS = 5
N_STATES = 2
N_MOMENTS = 3

SURFACES = ("de", "d7U", "d7L", "d8U", "d8L")
STATES = ("alpha", "beta")
MOMENTS = ("cl", "cm", "cn")

PWL_KNEE = 10.0
PWL_SLOPE = 0.5

DEFAULT_PARAMS_FILE = Path(__file__).with_name("data") / "default_model.txt"


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``lower <= x <= upper``. Infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).copy()
        upper = np.asarray(self.upper, dtype=float).copy()
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if np.any(lower > upper):
            raise EmptyBoxError(f"box is empty: lower={lower}, upper={upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            c = 0.5 * (self.lower + self.upper)
        return np.where(np.isfinite(c), c, 0.0)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=-1)

    @classmethod
    def unbounded(cls, dim: int) -> "BoxSet":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))


# default saturation limits (deg)
DEFAULT_BOX = BoxSet(
    lower=np.array([-20.0, 0.0, -40.0, 0.0, -40.0]),
    upper=np.array([20.0, 40.0, 0.0, 40.0, 0.0]),
)
# flight envelope used for the helix run: alpha 0..8 deg, beta -12..12 deg
DEFAULT_STATE_BOX = BoxSet(lower=np.array([0.0, -12.0]), upper=np.array([8.0, 12.0]))


def project_box(u, box: BoxSet) -> np.ndarray:
    """Euclidean projection onto a box, i.e. component-wise saturation."""
    return np.clip(np.asarray(u, dtype=float), box.lower, box.upper)


class WeightMatrix:
    """Symmetric positive definite weight for the norm ``||x||_W^2 = x' W x``."""

    def __init__(self, w, sym_tol: float = 1e-12):
        w = np.array(w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weight matrix must be square")
        scale = max(1.0, float(np.max(np.abs(w))))
        if np.max(np.abs(w - w.T)) > sym_tol * scale:
            raise ValueError("weight matrix must be symmetric")
        w = 0.5 * (w + w.T)
        eig = np.linalg.eigvalsh(w)
        if eig.min() <= 0.0:
            raise ValueError(f"weight matrix must be positive definite (min eigenvalue {eig.min():.3g})")
        w.flags.writeable = False
        self.w = w
        # upper factor R with W = R' R, so that ||x||_W = ||R x||
        self.root = np.linalg.cholesky(w).T

    @classmethod
    def identity(cls, dim: int = N_MOMENTS) -> "WeightMatrix":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def norm2(self, r) -> np.ndarray:
        """Weighted squared norm over the last axis."""
        r = np.asarray(r, dtype=float)
        return np.einsum("...i,ij,...j->...", r, self.w, r)

    def __repr__(self):
        return f"WeightMatrix({self.w.tolist()!r})"


def as_weight(w, dim: int = N_MOMENTS) -> WeightMatrix:
    if w is None:
        return WeightMatrix.identity(dim)
    if isinstance(w, WeightMatrix):
        return w
    return WeightMatrix(w)


class EffectivenessModel(Protocol):
    """Map ``G(u, sigma)`` from deflections and flight condition to moments."""

    def evaluate(self, u, sigma) -> np.ndarray: ...

    def jacobian_u(self, u, sigma, side=None) -> np.ndarray: ...

    def box(self) -> BoxSet: ...

    def state_box(self) -> BoxSet: ...


@dataclass(frozen=True)
class SyntheticModelParams:
    c_le: float = 4.0e-4
    c_lb: float = -1.0e-5
    c_me: float = -1.0e-3
    c_ma: float = 0.0
    c_m2: float = -5.0e-6
    c_ms: float = -2.0e-4
    c_nf: float = 2.5e-4
    c_na: float = 1.0e-5
    pwl_variant: bool = False

    @property
    def n_coefficients(self) -> int:
        return sum(1 for f in dataclasses.fields(self) if f.type in ("float", float))


def pwl(x) -> np.ndarray:
    """Two-segment odd function: unit slope inside the knee, half slope outside."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(ax <= PWL_KNEE, x, np.sign(x) * (PWL_KNEE + PWL_SLOPE * (ax - PWL_KNEE)))


def pwl_slope(x, side=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    at_kink = ax == PWL_KNEE
    if np.any(at_kink):
        if side is None:
            raise PwlBreakpointError(f"derivative undefined at |x| = {PWL_KNEE}")
        # side=+1 takes the slope of the segment to the right of the kink
        right = np.where(x > 0, PWL_SLOPE, 1.0)
        left = np.where(x > 0, 1.0, PWL_SLOPE)
        kink_slope = right if side > 0 else left
        return np.where(at_kink, kink_slope, np.where(ax < PWL_KNEE, 1.0, PWL_SLOPE))
    return np.where(ax < PWL_KNEE, 1.0, PWL_SLOPE)


def _split(u, sigma):
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if u.shape[-1] != N_CONTROLS or sigma.shape[-1] != N_STATES:
        raise ValueError(f"expected trailing dims {N_CONTROLS} and {N_STATES}, got {u.shape}, {sigma.shape}")
    e = u[..., 0]
    sl = u[..., 1] + u[..., 2]
    sr = u[..., 3] + u[..., 4]
    fl = u[..., 1] - u[..., 2]
    fr = u[..., 3] - u[..., 4]
    return e, sl, sr, fl, fr, sigma[..., 0], sigma[..., 1]


@dataclass(frozen=True)
class SyntheticModel:
    """Cross-coupled elevator/clamshell moment model for a tailless wing.

    ``G(0, sigma) = 0`` for every ``sigma``; there is no state-only term.
    """

    params: SyntheticModelParams = field(default_factory=SyntheticModelParams)
    control_box: BoxSet = DEFAULT_BOX
    envelope: BoxSet = DEFAULT_STATE_BOX

    def box(self) -> BoxSet:
        return self.control_box

    def state_box(self) -> BoxSet:
        return self.envelope

    def evaluate(self, u, sigma) -> np.ndarray:
        p = self.params
        e, sl, sr, fl, fr, alpha, beta = _split(u, sigma)
        if p.pwl_variant:
            e = pwl(e)
            a_gain = pwl(alpha)
            quad = 0.0
        else:
            a_gain = alpha
            quad = p.c_m2 * e * np.abs(e)
        g_l = 1.0 + 0.01 * a_gain
        g_m = 1.0 + 0.02 * a_gain
        cl = p.c_le * (sl - sr) * g_l + p.c_lb * e * beta
        cm = p.c_me * e * g_m + p.c_ms * (sl + sr) + quad + p.c_ma * alpha * e
        cn = p.c_nf * (fl - fr) * g_l + p.c_na * (sl - sr) * alpha
        return np.stack(np.broadcast_arrays(cl, cm, cn), axis=-1)

    def jacobian_u(self, u, sigma, side=None) -> np.ndarray:
        """Partial derivatives ``dG/du`` with shape ``(..., 3, 5)``.

        For the piecewise-linear variant, evaluating exactly at an elevator
        kink raises :class:`PwlBreakpointError` unless ``side`` (+1 or -1)
        selects which segment's slope to use.
        """
        p = self.params
        u = np.asarray(u, dtype=float)
        e = u[..., 0]
        _, _, _, _, _, alpha, beta = _split(u, sigma)
        if p.pwl_variant:
            de = pwl_slope(e, side)
            a_gain = pwl(alpha)
            quad = 0.0
        else:
            de = np.ones_like(e)
            a_gain = alpha
            quad = 2.0 * p.c_m2 * np.abs(e)
        g_l = 1.0 + 0.01 * a_gain
        g_m = 1.0 + 0.02 * a_gain
        shape = np.broadcast_shapes(e.shape, alpha.shape)
        jac = np.zeros(shape + (N_MOMENTS, N_CONTROLS))
        jac[..., 0, 0] = p.c_lb * beta * de
        jac[..., 0, 1:] = (p.c_le * g_l)[..., None] * np.array([1.0, 1.0, -1.0, -1.0])
        jac[..., 1, 0] = (p.c_me * g_m + p.c_ma * alpha) * de + quad
        jac[..., 1, 1:] = p.c_ms
        nf = (p.c_nf * g_l)[..., None] * np.array([1.0, -1.0, -1.0, 1.0])
        na = (p.c_na * alpha)[..., None] * np.array([1.0, 1.0, -1.0, -1.0])
        jac[..., 2, 1:] = nf + na
        return jac

    def lipschitz_bound(self) -> float:
        """Upper bound on the 2-norm Lipschitz constant in ``u`` over the box and envelope."""
        p = self.params
        amax, bmax = np.maximum(np.abs(self.envelope.lower), np.abs(self.envelope.upper))
        emax = max(abs(self.control_box.lower[0]), abs(self.control_box.upper[0]))
        g_l = 1.0 + 0.01 * amax
        g_m = 1.0 + 0.02 * amax
        rows = [
            abs(p.c_lb) * bmax + 4 * abs(p.c_le) * g_l,
            abs(p.c_me) * g_m + abs(p.c_ma) * amax + 2 * abs(p.c_m2) * emax + 4 * abs(p.c_ms),
            4 * (abs(p.c_nf) * g_l + abs(p.c_na) * amax),
        ]
        # Frobenius-type bound from absolute row sums
        return float(np.sqrt(np.sum(np.square(rows))))


@dataclass(frozen=True)
class AffineModel:
    """``G(u, sigma) = offset + slope @ u``, independent of ``sigma``."""

    slope: np.ndarray
    offset: np.ndarray | None = None
    control_box: BoxSet | None = None
    envelope: BoxSet = DEFAULT_STATE_BOX

    def __post_init__(self):
        slope = np.array(self.slope, dtype=float)
        offset = np.zeros(slope.shape[0]) if self.offset is None else np.array(self.offset, dtype=float)
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "offset", offset)
        if self.control_box is None:
            object.__setattr__(self, "control_box", BoxSet.unbounded(slope.shape[1]))

    def box(self) -> BoxSet:
        return self.control_box

    def state_box(self) -> BoxSet:
        return self.envelope

    def evaluate(self, u, sigma=None) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.slope.T + self.offset

    def jacobian_u(self, u, sigma=None, side=None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(self.slope, u.shape[:-1] + self.slope.shape)


# --- key/value parameter files -------------------------------------------------

def _read_kv(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'name = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {text!r}")


def box_keys() -> list[str]:
    return [f"{s}_{side}" for s in SURFACES for side in ("min", "max")]


def write_model_file(path, params: SyntheticModelParams = SyntheticModelParams(), box: BoxSet = DEFAULT_BOX):
    lines = ["# synthetic effectiveness model (per-degree coefficients)"]
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else repr(float(value))}")
    lines.append("# saturation limits [deg]")
    for i, s in enumerate(SURFACES):
        lines.append(f"{s}_min = {float(box.lower[i])!r}")
        lines.append(f"{s}_max = {float(box.upper[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_model_file(path=DEFAULT_PARAMS_FILE) -> SyntheticModel:
    """Load coefficients and saturation limits; missing keys keep their defaults."""
    kv = _read_kv(path)
    names = {f.name for f in dataclasses.fields(SyntheticModelParams)}
    allowed = names | set(box_keys())
    unknown = sorted(set(kv) - allowed)
    if unknown:
        raise FormatError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    try:
        for name in names & set(kv):
            kwargs[name] = _parse_bool(kv[name]) if name == "pwl_variant" else float(kv[name])
        lower = DEFAULT_BOX.lower.copy()
        upper = DEFAULT_BOX.upper.copy()
        for i, s in enumerate(SURFACES):
            if f"{s}_min" in kv:
                lower[i] = float(kv[f"{s}_min"])
            if f"{s}_max" in kv:
                upper[i] = float(kv[f"{s}_max"])
    except ValueError as exc:
        if isinstance(exc, (FormatError, EmptyBoxError)):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    bad = [k for k, v in kwargs.items() if not np.isfinite(v)]
    if bad or not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise FormatError(f"{path}: non-finite values for {bad or 'saturation limits'}")
    return SyntheticModel(SyntheticModelParams(**kwargs), BoxSet(lower, upper))
