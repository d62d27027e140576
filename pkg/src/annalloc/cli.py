"""Batch command-line front end: ``gen``, ``train``, ``eval``, ``compare``, ``stability``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then per-key flags (``--n 1000``). Outputs go to
``--out`` under fixed file names. Exit codes: 0 success or report, 2 bad
configuration, 3 I/O or file-format problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import metrics, stability
from .allocators import OracleAllocator
from .baseline import QPAllocator, linearize
from .effectiveness import AffineModel, read_model_file, DEFAULT_PARAMS_FILE
from .errors import DivergedError, FormatError, InsufficientSamplesError, NonfiniteStateError
from .neuralnet import N_BASE_INPUTS, NeuralAllocator, TrainConfig, fit_dataset, format_arch, parse_arch

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

DATASET_FILE = "dataset.csv"
NET_FILE = "net.json"
HISTORY_FILE = "history.csv"
MAE_FILE = "mae.json"
COVERAGE_FILE = "coverage.json"
COMPARE_FILE = "compare.csv"
BOUND_FILE = "bound.json"
MODEL_KINDS = ("smooth", "pwl", "affine")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model_file: str = ""
    model: str = "smooth"
    n: int = 100_000
    seed: int = 0
    arch: str = "5.16.8.5"
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 50
    batch: int = 128
    patience: int = 5
    plateau_factor: float = 0.1
    starts: int = 16
    samples_per_sigma: int = 100
    eps_cov: float = 1e-3
    n_alpha: int = 9
    n_beta: int = 9
    duration: float = 1.0
    dt: float = 1e-3
    radius: float = 0.003
    axis: str = "cn"
    timing_calls: int = 10_000
    r: float = stability.TOY_R
    theta: float = stability.TOY_THETA
    t_end: float = 10.0
    sim_dt: float = 0.01
    out: str = "out"

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            conv = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kwargs[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {types[key]}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.n < 10:
            raise ConfigError("n must be ≥ 10")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {', '.join(MODEL_KINDS)}")
        try:
            parse_arch(self.arch)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.axis not in metrics.AXES:
            raise ConfigError("axis must be cl, cm or cn")
        positive = ("lr", "beta1", "beta2", "epochs", "batch", "patience", "starts", "eps_cov", "n_alpha",
                    "n_beta", "duration", "dt", "radius", "r", "t_end", "sim_dt")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if not 0 < self.plateau_factor < 1 or not 0 < self.theta < 1:
            raise ConfigError("plateau_factor and theta must lie in (0, 1)")
        if self.samples_per_sigma < 100:
            raise ConfigError("samples_per_sigma must be ≥ 100")
        if self.timing_calls < 1000:
            raise ConfigError("timing_calls must be ≥ 1000")

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr, beta1=self.beta1, beta2=self.beta2, epochs=self.epochs, batch=self.batch,
                           plateau_patience=self.patience, plateau_factor=self.plateau_factor, seed=self.seed)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def build_model(cfg: RunConfig):
    model = read_model_file(cfg.model_file or DEFAULT_PARAMS_FILE)
    if cfg.model == "pwl":
        return dataclasses.replace(model, params=dataclasses.replace(model.params, pwl_variant=True))
    if cfg.model == "affine":
        sigma0 = model.state_box().center
        local = linearize(model, np.zeros(5), sigma0)
        return AffineModel(local.slope, local.offset, model.box(), model.state_box())
    return model


def _faulted(cfg: RunConfig) -> bool:
    return parse_arch(cfg.arch)[0] > N_BASE_INPUTS


def load_or_generate(cfg: RunConfig, model, data_path, out: Path):
    """Dataset from ``--data``, else ``<out>/dataset.csv`` if present, else freshly generated."""
    path = Path(data_path) if data_path else out / DATASET_FILE
    if data_path or path.exists():
        return ds_mod.Dataset.from_csv(path), str(path)
    scen = ds_mod.default_fault_scenarios() if _faulted(cfg) else None
    return ds_mod.generate(model, cfg.n, cfg.seed, scen), "generated"


def _load_net(args, out: Path, model) -> NeuralAllocator:
    return NeuralAllocator.load(Path(args.net) if args.net else out / NET_FILE, model=model)


def corrupt_network(est: NeuralAllocator, seed: int) -> NeuralAllocator:
    """Same architecture with weights and biases redrawn at random."""
    net = est.network_.copy()
    rng = np.random.default_rng([seed, 9])
    for th in net.thetas:
        th[...] = rng.normal(0.0, 3.0, size=th.shape)
    for b in net.biases[:-1]:
        b[...] = rng.normal(0.0, 1.0, size=b.shape)
    box = net.output_box
    net.biases[-1][...] = box.lower + rng.random(box.dim) * box.width
    return NeuralAllocator.from_network(net, est.model_)


# --- commands -------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    scen = ds_mod.default_fault_scenarios() if _faulted(cfg) else None
    data = ds_mod.generate(model, cfg.n, cfg.seed, scen)
    path = out / DATASET_FILE
    data.to_csv(path)
    print(f"wrote {len(data)} rows to {path} (seed={cfg.seed})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    data, source = load_or_generate(cfg, model, args.data, out)
    est = fit_dataset(data, model, cfg.arch, cfg.train_config())
    test = est.history_.test
    est.save(out / NET_FILE, seed=cfg.seed, data_seed=data.seed, test=test)
    est.history_.to_csv(out / HISTORY_FILE, seed=cfg.seed)
    print(f"data: {source} ({len(data)} rows, seed={data.seed})")
    print(f"{'arch':<14}{'params':>8}{'MSE':>12}{'RMSE':>12}{'R2':>10}")
    print(f"{cfg.arch:<14}{est.parameter_count_:>8}{test['mse']:>12.4g}{test['rmse']:>12.4g}{test['r2']:>10.5f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    model = build_model(cfg)
    if args.oracle:
        alloc, label, params = OracleAllocator(model, seed=cfg.seed).fit(), "oracle", 0
    else:
        alloc = _load_net(args, out, model)
        label, params = format_arch(alloc.network_.arch), alloc.parameter_count_
    out.mkdir(parents=True, exist_ok=True)
    data, _ = load_or_generate(cfg, model, args.data, out)
    test = ds_mod.split(data)[2]
    if args.score_rows:
        test = test.subset(np.arange(min(args.score_rows, len(test))))
    scores = metrics.fit_scores(alloc, model, test.tau, test.sigma)
    rep = metrics.mae(alloc, model, starts=cfg.starts, seed=cfg.seed)
    metrics.dump_json({"seed": cfg.seed, "allocator": label, **rep.to_dict()}, out / MAE_FILE)
    grid = metrics.sigma_grid(model, cfg.n_alpha, cfg.n_beta)
    cov = metrics.coverage_ratio(alloc, model, grid, cfg.samples_per_sigma, cfg.eps_cov, seed=cfg.seed)
    metrics.dump_json({"seed": cfg.seed, "allocator": label, **cov.to_dict()}, out / COVERAGE_FILE)
    print(f"{'allocator':<14}{'params':>8}{'MSE':>12}{'R2':>10}{'MAE':>12}{'coverage':>10}")
    print(f"{label:<14}{params:>8}{scores['mse']:>12.4g}{scores['r2']:>10.5f}{rep.mae:>12.4g}{cov.overall:>10.3f}")
    fmt = lambda v: "[" + ", ".join(f"{x:.6g}" for x in v) + "]"  # noqa: E731
    print(f"MAE argmax: tau*={fmt(rep.tau_star)} sigma*={fmt(rep.sigma_star)} (starts={cfg.starts}, seed={cfg.seed})")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    model = build_model(cfg)
    ann = _load_net(args, out, model)
    qp = QPAllocator(model).fit()
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, alloc in (("ann", ann), ("qp", qp)):
        if hasattr(alloc, "reset"):
            alloc.reset()
        tr = metrics.run_trajectory(alloc, model, cfg.duration, cfg.dt, cfg.radius, cfg.axis)
        tr.to_csv(out / f"traj_{name}.csv", header_comment=f"seed={cfg.seed} allocator={name}")
        results[name] = tr
    qp.reset()
    timing = metrics.bench_timing({"ann": ann, "qp": qp}, model, cfg.timing_calls, seed=cfg.seed)
    speedup = timing["qp"] / timing["ann"]
    lines = [f"# seed={cfg.seed} timing_calls={cfg.timing_calls} dt={cfg.dt:g}",
             "allocator,mean_err,max_err,mean_call_us,speedup_vs_ann"]
    for name, tr in results.items():
        lines.append(f"{name},{tr.mean_error:.17g},{tr.max_error:.17g},{timing[name] * 1e6:.6g},"
                     f"{timing[name] / timing['ann']:.6g}")
    (out / COMPARE_FILE).write_text("\n".join(lines) + "\n")
    print(f"{'allocator':<10}{'mean_err':>12}{'max_err':>12}{'call_us':>10}")
    for name, tr in results.items():
        print(f"{name:<10}{tr.mean_error:>12.4g}{tr.max_error:>12.4g}{timing[name] * 1e6:>10.2f}")
    print(f"speedup factor (qp / ann mean call time): {speedup:.1f}")
    return EXIT_OK


def cmd_stability(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    model = build_model(cfg)
    if args.oracle:
        alloc, label = OracleAllocator(model, seed=cfg.seed).fit(), "oracle"
    else:
        alloc, label = _load_net(args, out, model), "ann"
        if args.randomize_weights:
            alloc, label = corrupt_network(alloc, cfg.seed), "ann-randomized"
    out.mkdir(parents=True, exist_ok=True)
    sys_ = stability.toy_system()
    spec = stability.toy_class_k(cfg.r, cfg.theta)
    x0s = stability.toy_initial_states(spec)
    delta = 0.0 if args.oracle and args.delta is None else args.delta
    rep = stability.check_ultimate_bound(sys_, alloc, model, spec, x0s, cfg.t_end, cfg.sim_dt, delta=delta,
                                         conservative=args.conservative, starts=cfg.starts, seed=cfg.seed)
    metrics.dump_json({"seed": cfg.seed, "allocator": label, **rep.to_dict()}, out / BOUND_FILE)
    traj_dir = out / "stability"
    traj_dir.mkdir(exist_ok=True)
    for i, tr in enumerate(rep.trajectories):
        tr.to_csv(traj_dir / f"traj_{i:02d}.csv", header_comment=f"seed={cfg.seed} allocator={label}")
    rho = "n/a (inadmissible)" if rep.rho is None else f"{rep.rho:.6g}"
    sup = [s for s in rep.sup_norm_after if s is not None]
    print(f"allocator={label} delta={rep.delta:.6g} ({rep.delta_source}) limit={rep.delta_limit:.6g}")
    print(f"rho(r)={rho} measured sup-norm after settling="
          f"{max(sup) if sup else float('nan'):.6g} final max norm={max(rep.final_norms):.6g}")
    print(rep.status)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "stability": cmd_stability}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    for key in RunConfig.keys():
        common.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")
    parser = argparse.ArgumentParser(prog="annalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the training dataset")
    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--data", help="dataset CSV (default <out>/dataset.csv, else generated)")
    p = sub.add_parser("eval", parents=[common], help="test scores, MAE and coverage")
    p.add_argument("--net")
    p.add_argument("--data")
    p.add_argument("--oracle", action="store_true", help="evaluate the numerical inverse instead of a network")
    p.add_argument("--score-rows", type=int, default=0, help="limit test rows used for MSE/R2 (0 = all)")
    p = sub.add_parser("compare", parents=[common], help="helix replay and timing, network vs QP")
    p.add_argument("--net")
    p = sub.add_parser("stability", parents=[common], help="ultimate-bound check on the toy loop")
    p.add_argument("--net")
    p.add_argument("--oracle", action="store_true", help="use the numerical inverse (zero error)")
    p.add_argument("--randomize-weights", action="store_true", help="corrupt the network weights first")
    p.add_argument("--conservative", action="store_true", help="use the full-domain MAE as the error bound")
    p.add_argument("--delta", type=float, default=None, help="externally supplied allocation error bound")
    return parser


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key in RunConfig.keys():
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return RunConfig.from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg, args)
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergedError, NonfiniteStateError, InsufficientSamplesError) as exc:
        print(f"numerical failure [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
