"""Command-line front end: ``rbfpde <command> [--config file.json] [flags]``.

Every command reads its options from an optional JSON config; explicit flags
override config entries.  Exit codes: 0 success, 2 validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datagen import GenerateConfig, generate_dataset, read_dataset, write_dataset
from .errors import NumericalError, ValidationError
from .evaluation import ExperimentConfig, check_compatible, run_experiment, stability_report, write_trajectories
from .operator import forecast
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("rbfpde")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    return data


def _merge(args, keys) -> dict:
    """Config-file entries overridden by every flag the user actually gave."""
    cfg = _load_config(args.config)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _pop(cfg: dict, key, default=None):
    return cfg.pop(key, default)


def _require(cfg: dict, key):
    if cfg.get(key) is None:
        raise ValidationError(f"missing required option {key!r} (flag --{key.replace('_', '-')} or config entry)")
    return cfg.pop(key)


# --- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _merge(args, ["pde", "n_sequences", "n_interior", "n_boundary", "site_seed", "K", "dt",
                        "resolution", "bc", "noise", "grid_resolution", "seed", "setting", "out",
                        "sites_from", "domain"])
    out = _require(cfg, "out")
    sites_from = _pop(cfg, "sites_from")
    if isinstance(cfg.get("domain"), str):
        cfg["domain"] = _domain_arg(cfg["domain"])
    config = GenerateConfig.from_dict(cfg)
    sites = read_dataset(sites_from).sites if sites_from else None
    ds = generate_dataset(config, sites)
    write_dataset(out, ds)
    print(f"wrote {len(ds.sequences)} sequences ({ds.sites.n} sites) to {out}")
    return EXIT_OK


def _domain_arg(text: str) -> dict:
    """``square:1``, ``disk:1`` or ``annulus:0.5,1``."""
    kind, _, params = text.partition(":")
    try:
        values = [float(v) for v in params.split(",")] if params else [1.0]
    except ValueError as exc:
        raise ValidationError(f"bad domain parameters in {text!r}") from exc
    return {"kind": kind, "params": values, "dim": 2}


def cmd_train(args) -> int:
    cfg = _merge(args, ["dataset", "out", "report", "epochs", "batch_size", "lr", "lam", "h",
                        "linear", "seed", "sigma0", "loo_enabled", "loo_loss", "val_fraction"])
    dataset = _require(cfg, "dataset")
    out = _require(cfg, "out")
    report_path = _pop(cfg, "report")
    unknown = set(cfg) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ValidationError(f"unknown training option(s): {sorted(unknown)}")
    config = TrainConfig.from_dict(cfg)
    model, report = train(read_dataset(dataset), config)
    save_checkpoint(model, out)
    if report_path:
        report.write_csv(report_path)
    print(f"trained {'linear' if model.linear else 'nonlinear'} model: loss {report.train_loss[0]:.4g} -> "
          f"{report.train_loss[-1]:.4g}, sigma {model.sigma:.4g}, best epoch {report.best_epoch}; wrote {out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = _merge(args, ["model", "dataset", "sequence", "steps", "start", "out", "seed"])
    model = load_checkpoint(_require(cfg, "model"))
    ds = read_dataset(_require(cfg, "dataset"))
    out = _require(cfg, "out")
    index = int(cfg.get("sequence") or 0)
    steps = int(cfg.get("steps") or 10)
    check_compatible(model, ds)
    if not 0 <= index < len(ds.sequences):
        raise ValidationError(f"sequence index {index} out of range")
    start = cfg.get("start")
    start = model.p - 1 if start is None else int(start)
    frames = ds.sequences[index].frames
    if start < model.p - 1 or start >= len(frames):
        raise ValidationError(f"cannot seed a forecast at frame {start}")
    result = forecast(model, ds.sites, frames[start - model.p + 1: start + 1], ds.boundary, steps, ds.dt,
                      queries=ds.grid_points, t0=start * ds.dt)
    write_trajectories(out, result)
    print(f"wrote {steps}-step forecast of sequence {index} to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _merge(args, ["dataset", "model", "setting", "horizon", "start", "out_dir", "lam", "workers"])
    cfg.pop("seed", None)
    if cfg.get("dataset") is None or cfg.get("model") is None:
        raise ValidationError("evaluate needs --dataset and --model")
    config = ExperimentConfig.from_dict(cfg)
    for path in (config.dataset, config.model):
        if not Path(path).exists():
            raise ValidationError(f"{path} does not exist")
    _, summary = run_experiment(config)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _merge(args, ["model", "dataset", "dt", "lam"])
    model = load_checkpoint(_require(cfg, "model"))
    ds = read_dataset(_require(cfg, "dataset"))
    dt = float(cfg.get("dt") or ds.dt)
    report = stability_report(model, ds.sites, dt, cfg.get("lam"))
    print(json.dumps(report))
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Quick numerical checks of the core building blocks."""
    from .evaluation import snr
    from .operator import OperatorModel, temporal_update
    from .rbf import solve_coefficients
    from .training import sequence_loss

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    checks = []

    phi = np.array([[1.0, np.exp(-0.5)], [np.exp(-0.5), 1.0]])
    c = solve_coefficients(phi, np.array([1.0, 0.0]), 0.0)
    det = 1.0 - np.exp(-1.0)
    checks.append(("rbf 2x2 interpolation", np.allclose(c, [1.0 / det, -np.exp(-0.5) / det], rtol=1e-12)))

    hist = rng.normal(size=(3, 4, 1))
    out = temporal_update(hist, np.zeros((4, 1)), 3, 0.1)
    checks.append(("temporal update p=3", np.allclose(out, 3 * hist[0] - 3 * hist[1] + hist[2])))

    checks.append(("snr hand example", abs(snr([3.0, 4.0], [3.0, 3.0]) - 10 * np.log10(25.0)) < 1e-12))

    model = OperatorModel.create(d=2, M=1, h=2, p=1, sigma=0.7, seed=int(rng.integers(1 << 31)))
    pts = rng.uniform(-1, 1, (4, 2))
    frames = rng.normal(size=(3, 4, 1))
    loss, grads = sequence_loss(model, pts, frames, 0.1, return_grad=True)
    params = model.parameters()
    k = len(params) - 1
    eps = 1e-6
    plus = model.with_parameters([p + eps if i == k else p for i, p in enumerate(params)])
    minus = model.with_parameters([p - eps if i == k else p for i, p in enumerate(params)])
    fd = (sequence_loss(plus, pts, frames, 0.1) - sequence_loss(minus, pts, frames, 0.1)) / (2 * eps)
    g = float(np.ravel(grads[k])[0])
    checks.append(("sigma gradient", abs(fd - g) <= 1e-4 * max(abs(fd), abs(g), 1e-12)))

    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if not all(ok for _, ok in checks):
        raise NumericalError("selftest failed")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbfpde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with options; flags override it")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    g = command("generate", cmd_generate, "simulate a dataset of measurement sequences")
    g.add_argument("--pde", choices=["wave", "burgers_fisher", "heat"])
    g.add_argument("--domain", help="square:A, disk:R or annulus:R_IN,R_OUT")
    g.add_argument("--n-interior", dest="n_interior", type=int)
    g.add_argument("--n-boundary", dest="n_boundary", type=int)
    g.add_argument("--site-seed", dest="site_seed", type=int)
    g.add_argument("--sites-from", dest="sites_from", help="reuse the sites of an existing dataset")
    g.add_argument("--n-sequences", dest="n_sequences", type=int)
    g.add_argument("--K", type=int, help="transitions per sequence")
    g.add_argument("--dt", type=float)
    g.add_argument("--resolution", type=int, help="fine lattice points per axis")
    g.add_argument("--bc", choices=["zero", "angular"])
    g.add_argument("--noise", type=float, help="noise level relative to the data SD")
    g.add_argument("--grid-resolution", dest="grid_resolution", type=int)
    g.add_argument("--setting", help="tag the dataset for a test setting (i, ii, iii, iv)")
    g.add_argument("--out")

    t = command("train", cmd_train, "fit an operator model to a dataset")
    t.add_argument("--dataset")
    t.add_argument("--out", help="model checkpoint JSON")
    t.add_argument("--report", help="per-epoch CSV")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--h", type=int)
    t.add_argument("--linear", type=_bool)
    t.add_argument("--sigma0", type=float)
    t.add_argument("--loo-enabled", dest="loo_enabled", type=_bool)
    t.add_argument("--loo-loss", dest="loo_loss", choices=["all", "left_out"])
    t.add_argument("--val-fraction", dest="val_fraction", type=float)

    f = command("forecast", cmd_forecast, "roll a model forward from stored seed frames")
    f.add_argument("--model")
    f.add_argument("--dataset")
    f.add_argument("--sequence", type=int)
    f.add_argument("--steps", type=int)
    f.add_argument("--start", type=int)
    f.add_argument("--out", help="trajectories CSV")

    e = command("evaluate", cmd_evaluate, "score forecasts against held-out sequences")
    e.add_argument("--dataset")
    e.add_argument("--model")
    e.add_argument("--setting", choices=["i", "ii", "iii", "iv"])
    e.add_argument("--horizon", type=int)
    e.add_argument("--start", type=int)
    e.add_argument("--lam", type=float)
    e.add_argument("--workers", type=int)
    e.add_argument("--out-dir", dest="out_dir")

    s = command("stability", cmd_stability, "spectral radius of the linear one-step matrix")
    s.add_argument("--model")
    s.add_argument("--dataset", help="dataset whose sites define the matrix")
    s.add_argument("--dt", type=float)
    s.add_argument("--lam", type=float)

    command("selftest", cmd_selftest, "run quick internal consistency checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
