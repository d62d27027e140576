"""Fully connected ReLU allocator trained on moment error through saturation.

The network maps ``[cl, cm, cn, alpha, beta]`` (optionally followed by five
0/1 fault flags) to raw deflections. Training never sees target deflections:
the loss is the weighted moment error after the raw output is saturated to
the box and pushed through the effectiveness model, and its gradient flows
back through the model Jacobian.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .base import AllocatorMixin, check_inputs
from .dataset import NormStats, norm_stats, split
from .effectiveness import N_CONTROLS, BoxSet, SyntheticModel, WeightMatrix, as_weight
from .errors import DivergedError, FormatError, ShapeMismatchError

FILE_VERSION = 1
N_NORM_PARAMS = 10
N_BASE_INPUTS = 5


def parse_arch(text) -> tuple[int, ...]:
    """Parse ``"5.16.8.5"`` into layer sizes; needs at least one hidden layer."""
    if isinstance(text, str):
        try:
            sizes = tuple(int(tok) for tok in text.strip().split("."))
        except ValueError as exc:
            raise ValueError(f"bad architecture string {text!r}") from exc
    else:
        sizes = tuple(int(s) for s in text)
    if len(sizes) < 3:
        raise ValueError(f"architecture {text!r} needs input, output and at least one hidden layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive: {text!r}")
    if sizes[0] not in (N_BASE_INPUTS, N_BASE_INPUTS + N_CONTROLS):
        raise ValueError(f"input layer must have 5 (or 10 with fault flags) units, got {sizes[0]}")
    if sizes[-1] != N_CONTROLS:
        raise ValueError(f"output layer must have {N_CONTROLS} units, got {sizes[-1]}")
    return sizes


def format_arch(sizes) -> str:
    return ".".join(str(s) for s in sizes)


def parameter_count(arch) -> int:
    """Trainable weights and biases plus the fixed 5-scale/5-offset input layer."""
    sizes = parse_arch(arch)
    return N_NORM_PARAMS + sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class Network:
    arch: tuple
    norm: NormStats
    thetas: list
    biases: list
    output_box: BoxSet

    def __post_init__(self):
        self.arch = parse_arch(self.arch)
        if len(self.thetas) != len(self.arch) - 1 or len(self.biases) != len(self.thetas):
            raise ShapeMismatchError("number of layers does not match the architecture")
        for i, (th, b) in enumerate(zip(self.thetas, self.biases)):
            want = (self.arch[i + 1], self.arch[i])
            if np.shape(th) != want or np.shape(b) != (want[0],):
                raise ShapeMismatchError(f"layer {i}: expected theta {want} and bias ({want[0]},)")
        if self.norm.scale.shape != (N_BASE_INPUTS,):
            raise ShapeMismatchError("normalization must cover the five moment/state inputs")
        if self.output_box.dim != N_CONTROLS:
            raise ShapeMismatchError("output box must have five components")

    @property
    def n_inputs(self) -> int:
        return self.arch[0]

    @property
    def fault_conditioned(self) -> bool:
        return self.arch[0] > N_BASE_INPUTS

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.arch)

    def params(self) -> list:
        """Trainable arrays, interleaved ``[theta_1, b_1, theta_2, b_2, ...]``."""
        out = []
        for th, b in zip(self.thetas, self.biases):
            out += [th, b]
        return out

    def copy(self) -> "Network":
        return Network(self.arch, self.norm, [t.copy() for t in self.thetas],
                       [b.copy() for b in self.biases], self.output_box)

    def input_layer(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise ShapeMismatchError(f"expected {self.n_inputs} inputs, got {x.shape[-1]}")
        a0 = self.norm.scale * (x[..., :N_BASE_INPUTS] - self.norm.offset)
        if self.fault_conditioned:
            a0 = np.concatenate([a0, x[..., N_BASE_INPUTS:]], axis=-1)
        return a0

    def forward(self, x) -> np.ndarray:
        """Raw (unsaturated) deflections for input rows ``x``."""
        a = self.input_layer(x)
        last = len(self.thetas) - 1
        for i, (th, b) in enumerate(zip(self.thetas, self.biases)):
            z = a @ th.T + b
            a = z if i == last else np.maximum(z, 0.0)
        return a

    def forward_cached(self, x):
        """Forward pass keeping every layer's activation and pre-activation."""
        acts = [self.input_layer(x)]
        pre = []
        last = len(self.thetas) - 1
        for i, (th, b) in enumerate(zip(self.thetas, self.biases)):
            z = acts[-1] @ th.T + b
            pre.append(z)
            acts.append(z if i == last else np.maximum(z, 0.0))
        return acts, pre

    def allocate(self, x) -> np.ndarray:
        """Saturated deflections; failed surfaces (flag 0) are forced to zero."""
        u = np.clip(self.forward(x), self.output_box.lower, self.output_box.upper)
        if self.fault_conditioned:
            u = u * np.asarray(x, dtype=float)[..., N_BASE_INPUTS:]
        return u

    # --- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FILE_VERSION,
            "arch": format_arch(self.arch),
            "norm": {"scale": self.norm.scale.tolist(), "offset": self.norm.offset.tolist()},
            "layers": [{"theta": th.ravel(order="C").tolist(), "b": b.tolist()}
                       for th, b in zip(self.thetas, self.biases)],
            "output_box": {"lower": self.output_box.lower.tolist(), "upper": self.output_box.upper.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if d.get("version") != FILE_VERSION:
            raise FormatError(f"unsupported network file version {d.get('version')!r}")
        try:
            arch = parse_arch(d["arch"])
            norm = NormStats(d["norm"]["scale"], d["norm"]["offset"])
            thetas, biases = [], []
            for i, layer in enumerate(d["layers"]):
                thetas.append(np.array(layer["theta"], dtype=float).reshape(arch[i + 1], arch[i]))
                biases.append(np.array(layer["b"], dtype=float))
            box = BoxSet(d["output_box"]["lower"], d["output_box"]["upper"])
            return cls(arch, norm, thetas, biases, box)
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise FormatError(f"malformed network file: {exc}") from exc

    def save(self, path, **extra):
        d = self.to_dict()
        d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Network":
        text = Path(path).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a valid network file ({exc})") from exc
        if not isinstance(d, dict):
            raise FormatError(f"{path}: not a valid network file")
        return cls.from_dict(d)


def init_network(arch, norm: NormStats, output_box: BoxSet, rng) -> Network:
    """He-uniform weights, zero hidden biases, output bias at the box center."""
    sizes = parse_arch(arch)
    rng = np.random.default_rng(rng)
    thetas, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        thetas.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    biases[-1] = output_box.center.copy()
    return Network(sizes, norm, thetas, biases, output_box)


def split_inputs(x):
    x = np.asarray(x, dtype=float)
    tau, sigma = x[..., :3], x[..., 3:5]
    mask = x[..., 5:] if x.shape[-1] > N_BASE_INPUTS else None
    return tau, sigma, mask


def allocation_loss(net: Network, x, model, weight=None, side=1):
    """Mean weighted moment error and its gradient w.r.t. every trainable array.

    ``x`` rows are network inputs ``[cl, cm, cn, alpha, beta(, m0..m4)]``; the
    moment part is the demand the allocation must reproduce. Returns
    ``(loss, grads)`` with ``grads`` ordered like :meth:`Network.params`.
    The saturation subgradient is 1 inside the box (boundary included) and 0
    strictly outside.
    """
    w = as_weight(weight)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tau, sigma, mask = split_inputs(x)
    if mask is None:
        mask = np.ones((len(x), N_CONTROLS))
    n = len(x)
    acts, pre = net.forward_cached(x)
    raw = acts[-1]
    lo, hi = net.output_box.lower, net.output_box.upper
    u = np.clip(raw, lo, hi) * mask
    res = model.evaluate(u, sigma) - tau
    wres = res @ w.w
    loss = float(np.einsum("ij,ij->", wres, res) / n)

    jac = model.jacobian_u(u, sigma, side=side)
    g_u = np.einsum("ni,nij->nj", (2.0 / n) * wres, jac)
    delta = g_u * mask * ((raw >= lo) & (raw <= hi))

    grads = [None] * (2 * len(net.thetas))
    for i in range(len(net.thetas) - 1, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.thetas[i]) * (pre[i - 1] > 0)
    return loss, grads


def evaluate_loss(net: Network, x, model, weight=None) -> float:
    w = as_weight(weight)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tau, sigma, _ = split_inputs(x)
    res = model.evaluate(net.allocate(x), sigma) - tau
    return float(np.mean(w.norm2(res)))


def moment_scores(net: Network, x, model, weight=None) -> dict:
    """Test-set MSE (weighted moment units), RMSE and R^2 of the reproduced moments."""
    w = as_weight(weight)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tau, sigma, _ = split_inputs(x)
    res = model.evaluate(net.allocate(x), sigma) - tau
    ss_res = float(np.sum(w.norm2(res)))
    ss_tot = float(np.sum(w.norm2(tau - tau.mean(axis=0))))
    mse = ss_res / len(x)
    return {"mse": mse, "rmse": math.sqrt(mse), "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")}


class Adam:
    """Adam with bias correction; moment buffers mirror the parameter list."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    lr0: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 50
    batch: int = 128
    plateau_patience: int = 5
    plateau_factor: float = 0.1
    weight: WeightMatrix = field(default_factory=WeightMatrix.identity)
    seed: int = 0

    def __post_init__(self):
        self.weight = as_weight(self.weight)
        if min(self.lr0, self.beta1, self.beta2, self.epochs, self.batch, self.plateau_patience) <= 0:
            raise ValueError("training hyperparameters must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")


@dataclass
class TrainHistory:
    """Per-epoch losses are mean weighted squared moment errors (raw units)."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    test: dict = field(default_factory=dict)
    units: str = "weighted squared moment coefficient"

    def to_csv(self, path, seed=None):
        with open(path, "w") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            fh.write("epoch,train_loss,val_loss,lr\n")
            for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.lr), 1):
                fh.write(f"{i},{a:.17g},{b:.17g},{c:.17g}\n")


def train(net: Network, x_train, model, config: TrainConfig | None = None, x_val=None,
          callback=None) -> tuple[Network, TrainHistory]:
    """Mini-batch Adam on the allocation loss with reduce-on-plateau.

    The learning rate is multiplied by ``plateau_factor`` whenever the
    monitored loss (validation if given, else training) has not improved for
    ``plateau_patience`` consecutive epochs. ``callback(epoch, net)`` runs
    after every epoch. The input network is not modified.
    """
    cfg = config or TrainConfig()
    net = net.copy()
    x_train = np.asarray(x_train, dtype=float)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam(net.params(), cfg.beta1, cfg.beta2)
    hist = TrainHistory()
    lr = cfg.lr0
    best, wait = np.inf, 0
    n = len(x_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            batch = x_train[order[start:start + cfg.batch]]
            loss, grads = allocation_loss(net, batch, model, cfg.weight)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergedError(f"non-finite loss at epoch {epoch + 1}")
            opt.step(net.params(), grads, lr)
            total += loss * len(batch)
        hist.train_loss.append(total / n)
        hist.lr.append(lr)
        monitored = evaluate_loss(net, x_val, model, cfg.weight) if x_val is not None else hist.train_loss[-1]
        if not math.isfinite(monitored):
            raise DivergedError(f"non-finite validation loss at epoch {epoch + 1}")
        hist.val_loss.append(monitored)
        if monitored < best:
            best, wait = monitored, 0
        else:
            wait += 1
            if wait >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                wait = 0
        if callback is not None:
            callback(epoch, net)
    return net, hist


class NeuralAllocator(AllocatorMixin, BaseEstimator):
    """Learned allocator ``(tau, sigma[, fault flags]) -> u``.

    ``fit`` is unsupervised: ``X`` holds demanded moments and flight
    conditions (plus fault flags when the architecture has 10 inputs) and
    ``y`` is ignored. ``X_val`` drives the reduce-on-plateau schedule.
    """

    name = "ann"

    def __init__(self, arch="5.16.8.5", model=None, learning_rate=0.005, beta1=0.9, beta2=0.999,
                 epochs=50, batch_size=128, plateau_patience=5, plateau_factor=0.1, weight=None,
                 random_state=0):
        self.arch = arch
        self.model = model
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epochs = epochs
        self.batch_size = batch_size
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.weight = weight
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.learning_rate, beta1=self.beta1, beta2=self.beta2, epochs=self.epochs,
            batch=self.batch_size, plateau_patience=self.plateau_patience,
            plateau_factor=self.plateau_factor, weight=as_weight(self.weight), seed=self.random_state,
        )

    def fit(self, X, y=None, X_val=None, callback=None):
        sizes = parse_arch(self.arch)
        X = check_inputs(X, sizes[0])
        if X_val is not None:
            X_val = check_inputs(X_val, sizes[0])
        model = self.model if self.model is not None else SyntheticModel()
        cfg = self._config()
        norm = norm_stats(X[:, :N_BASE_INPUTS])
        net = init_network(sizes, norm, model.box(), np.random.default_rng([cfg.seed, 1]))
        net, hist = train(net, X, model, cfg, x_val=X_val, callback=callback)
        self._set_fitted(net, model, cfg.weight)
        self.history_ = hist
        return self

    def _set_fitted(self, net: Network, model, weight):
        self.network_ = net
        self.model_ = model
        self.weight_ = as_weight(weight)
        self.n_features_in_ = net.n_inputs
        self._layers = [(th.T.copy(), b.copy()) for th, b in zip(net.thetas, net.biases)]
        return self

    @classmethod
    def from_network(cls, net: Network, model=None, weight=None) -> "NeuralAllocator":
        model = model if model is not None else SyntheticModel()
        est = cls(arch=format_arch(net.arch), model=model, weight=weight)
        return est._set_fitted(net, model, weight)

    @property
    def parameter_count_(self) -> int:
        return self.network_.parameter_count

    def allocate_many(self, tau, sigma) -> np.ndarray:
        x = np.hstack([np.atleast_2d(tau), np.atleast_2d(sigma)])
        if self.network_.fault_conditioned:
            x = np.hstack([x, np.ones((len(x), N_CONTROLS))])
        return self.network_.allocate(x)

    def predict_raw(self, X) -> np.ndarray:
        check_is_fitted(self)
        return self.network_.forward(check_inputs(X, self.n_features_in_))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        return self.network_.allocate(check_inputs(X, self.n_features_in_))

    def allocate(self, tau, sigma, mask=None) -> np.ndarray:
        """Single-sample path without validation overhead."""
        net = self.network_
        a = net.norm.scale * (np.concatenate((tau, sigma)) - net.norm.offset)
        if net.fault_conditioned:
            a = np.concatenate((a, np.ones(N_CONTROLS) if mask is None else mask))
        layers = self._layers
        for th_t, b in layers[:-1]:
            a = a @ th_t + b
            np.maximum(a, 0.0, out=a)
        th_t, b = layers[-1]
        u = np.clip(a @ th_t + b, net.output_box.lower, net.output_box.upper)
        return u if mask is None else u * mask

    def test_scores(self, X) -> dict:
        return moment_scores(self.network_, check_inputs(X, self.n_features_in_), self.model_, self.weight_)

    def save(self, path, **extra):
        check_is_fitted(self)
        self.network_.save(path, **extra)

    @classmethod
    def load(cls, path, model=None, weight=None) -> "NeuralAllocator":
        return cls.from_network(Network.load(path), model, weight)


def fit_dataset(ds, model, arch="5.16.8.5", config: TrainConfig | None = None, callback=None):
    """Split, normalize, train and score on the held-out test split.

    Returns the fitted :class:`NeuralAllocator`; its ``history_.test`` holds
    test MSE, RMSE and R^2.
    """
    cfg = config or TrainConfig()
    train_ds, val_ds, test_ds = split(ds)
    sizes = parse_arch(arch)
    faulted = sizes[0] > N_BASE_INPUTS

    def rows(d):
        return np.hstack([d.inputs, d.mask]) if faulted else d.inputs

    est = NeuralAllocator(
        arch=format_arch(sizes), model=model, learning_rate=cfg.lr0, beta1=cfg.beta1, beta2=cfg.beta2,
        epochs=cfg.epochs, batch_size=cfg.batch, plateau_patience=cfg.plateau_patience,
        plateau_factor=cfg.plateau_factor, weight=cfg.weight, random_state=cfg.seed,
    )
    est.fit(rows(train_ds), X_val=rows(val_ds), callback=callback)
    est.history_.test = est.test_scores(rows(test_ds))
    return est
