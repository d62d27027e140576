"""Training data: Latin hypercube draws over U x S mapped through the model.

Only ``(tau, sigma, mask)`` is kept; the generating deflections are discarded
because training never sees a target deflection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .effectiveness import N_CONTROLS
from .errors import DegenerateInputError, EmptyBoxError, FormatError

CSV_COLUMNS = ("cl", "cm", "cn", "alpha", "beta", "m0", "m1", "m2", "m3", "m4")

HEALTHY = np.ones(N_CONTROLS)


def default_fault_scenarios() -> np.ndarray:
    """All-healthy plus each single-surface failure (failed surface locked at 0)."""
    return np.vstack([HEALTHY, 1.0 - np.eye(N_CONTROLS)])


def lhs_sample(n: int, lower, upper, seed=None) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in the box ``[lower, upper]``.

    Each dimension is split into ``n`` equal-width bins; a random permutation
    assigns one bin per point and the point is jittered uniformly inside it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ValueError("lower/upper shape mismatch")
    if np.any(lower > upper):
        raise EmptyBoxError(f"empty box: {lower} > {upper}")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("LHS needs a bounded box")
    rng = np.random.default_rng(seed)
    d = lower.size
    bins = np.column_stack([rng.permutation(n) for _ in range(d)]) if d else np.empty((n, 0))
    unit = (bins + rng.random((n, d))) / n
    return lower + unit * (upper - lower)


@dataclass
class Dataset:
    """Samples ``[cl, cm, cn, alpha, beta]`` with one fault mask row per sample."""

    tau: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray
    seed: int = 0
    fractions: tuple = (0.7, 0.15, 0.15)
    controls: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float).reshape(-1, 3)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(-1, 2)
        self.mask = np.asarray(self.mask, dtype=float).reshape(-1, N_CONTROLS)
        if not (len(self.tau) == len(self.sigma) == len(self.mask)):
            raise ValueError("tau, sigma and mask must have the same number of rows")
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-12 or min(self.fractions) < 0:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")

    def __len__(self):
        return len(self.tau)

    @property
    def inputs(self) -> np.ndarray:
        """Network input rows ``[cl, cm, cn, alpha, beta]``."""
        return np.hstack([self.tau, self.sigma])

    @property
    def faulted(self) -> bool:
        return bool(np.any(self.mask != 1))

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.tau[idx],
            self.sigma[idx],
            self.mask[idx],
            seed=self.seed,
            fractions=self.fractions,
            controls=None if self.controls is None else self.controls[idx],
        )

    def to_csv(self, path, header_comment: str | None = None):
        rows = np.hstack([self.tau, self.sigma, self.mask])
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# seed={self.seed}" + (f" {header_comment}" if header_comment else "") + "\n")
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        seed = 0
        lines = Path(path).read_text().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("seed="):
                        seed = int(tok[5:])
                continue
            body.append(line)
        if not body or tuple(body[0].split(",")) != CSV_COLUMNS:
            raise FormatError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
        try:
            data = np.array([[float(v) for v in line.split(",")] for line in body[1:] if line], dtype=float)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        data = data.reshape(-1, len(CSV_COLUMNS))
        return cls(data[:, :3], data[:, 3:5], data[:, 5:], seed=seed)


def generate(model, n: int, seed: int = 0, fault_scenarios=None, keep_controls: bool = False) -> Dataset:
    """Draw ``n`` samples by joint LHS over ``U x S`` and evaluate the model.

    With ``fault_scenarios`` (rows of 0/1 flags), each sample picks one
    scenario uniformly and its failed surfaces are forced to zero before the
    model is evaluated.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    box, sbox = model.box(), model.state_box()
    ss = np.random.SeedSequence(seed)
    u_seed, s_seed, m_seed = ss.spawn(3)
    u = lhs_sample(n, box.lower, box.upper, u_seed)
    sigma = lhs_sample(n, sbox.lower, sbox.upper, s_seed)
    if fault_scenarios is None:
        mask = np.ones((n, N_CONTROLS))
    else:
        scen = np.asarray(fault_scenarios, dtype=float).reshape(-1, N_CONTROLS)
        pick = np.random.default_rng(m_seed).integers(0, len(scen), size=n)
        mask = scen[pick]
    u = u * mask
    tau = model.evaluate(u, sigma)
    return Dataset(tau, sigma, mask, seed=seed, controls=u if keep_controls else None)


def split_sizes(n: int, fractions=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split(ds: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle with the dataset seed and cut into train/validation/test."""
    n_train, n_val, _ = split_sizes(len(ds), ds.fractions)
    order = np.random.default_rng([ds.seed, 1]).permutation(len(ds))
    return (
        ds.subset(order[:n_train]),
        ds.subset(order[n_train:n_train + n_val]),
        ds.subset(order[n_train + n_val:]),
    )


@dataclass(frozen=True)
class NormStats:
    """Affine input normalization ``scale * (x - offset)`` onto [-1, 1]."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        offset = np.asarray(self.offset, dtype=float)
        if scale.shape != offset.shape:
            raise ValueError("scale/offset shape mismatch")
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("scale must be positive and finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "offset", offset)

    def apply(self, x) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=float) - self.offset)

    @classmethod
    def identity(cls, dim: int = 5) -> "NormStats":
        return cls(np.ones(dim), np.zeros(dim))


def norm_stats(inputs) -> NormStats:
    """Scale/offset mapping each column's training range onto [-1, 1]."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a nonempty 2-d array")
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(hi == lo):
        cols = np.flatnonzero(hi == lo).tolist()
        raise DegenerateInputError(f"constant input column(s) {cols}")
    return NormStats(2.0 / (hi - lo), 0.5 * (hi + lo))

