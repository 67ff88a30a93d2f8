"""SNR metrics, the persistence baseline, experiment harness and stability report."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datagen import Dataset, read_dataset
from .errors import ValidationError
from .operator import (
    ForecastResult,
    OperatorModel,
    Stepper,
    build_h_matrix,
    forecast,
    spectral_radius,
)
from .training import load_checkpoint

logger = logging.getLogger(__name__)

SNR_CAP = 150.0
SETTINGS = {
    "i": ("square", "zero"),
    "ii": ("square", "zero"),
    "iii": ("disk", "zero_or_angular"),
    "iv": ("annulus", "zero_or_angular"),
}
MARGINAL_TOL = 1e-9


def snr(u, u_hat, cap: float = SNR_CAP) -> float:
    """``10 log10(sum u^2 / sum (u - u_hat)^2)`` in dB.

    Returns ``cap`` when the error energy underflows and NaN (undefined)
    when the truth is identically zero.
    """
    u = np.asarray(u, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u.shape != u_hat.shape:
        raise ValidationError(f"truth {u.shape} and prediction {u_hat.shape} differ in shape")
    signal = float(np.sum(u * u))
    if signal == 0.0:
        return float("nan")
    err = float(np.sum((u - u_hat) ** 2))
    if err == 0.0:
        return cap
    return min(10.0 * np.log10(signal / err), cap)


def persistence_forecast(frame, steps: int) -> np.ndarray:
    """Repeat ``frame`` for ``steps`` steps."""
    frame = np.asarray(frame, dtype=float)
    return np.repeat(frame[None], steps, axis=0)


@dataclass
class ExperimentConfig:
    dataset: str
    model: str
    setting: str = "i"
    horizon: int = 10
    start: int | None = None
    out_dir: str | None = None
    sequences: list | None = None
    lam: float | None = None
    write_trajectories: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValidationError(f"setting must be one of {sorted(SETTINGS)}")
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown experiment option(s): {sorted(unknown)}")
        return cls(**data)


def check_compatible(model: OperatorModel, ds: Dataset, setting: str | None = None) -> None:
    if model.d != ds.sites.dim or model.M != ds.M or model.p != ds.p:
        raise ValidationError(
            f"model (d={model.d}, M={model.M}, p={model.p}) does not match dataset "
            f"(d={ds.sites.dim}, M={ds.M}, p={ds.p})")
    if setting is not None:
        kind, _ = SETTINGS[setting]
        if ds.domain.kind != kind:
            raise ValidationError(f"setting {setting} expects a {kind} domain, dataset has {ds.domain.kind}")
        tagged = ds.meta.get("setting")
        if tagged not in (None, "train", setting):
            raise ValidationError(f"dataset was generated for setting {tagged}, not {setting}")


def evaluate_sequence(model, ds: Dataset, index: int, horizon: int, start=None, lam=None,
                      stepper: Stepper | None = None) -> ForecastResult:
    """Forecast one stored sequence from its seed frames and score it."""
    seq = ds.sequences[index]
    start = model.p - 1 if start is None else start
    if start < model.p - 1 or start + horizon > seq.K:
        raise ValidationError(f"sequence {index}: cannot forecast {horizon} steps from frame {start}")
    seeds = seq.frames[start - model.p + 1: start + 1]
    result = forecast(model, ds.sites, seeds, ds.boundary, horizon, ds.dt, lam=lam,
                      t0=start * ds.dt, stepper=stepper)
    truth = seq.frames[start + 1: start + 1 + horizon]
    baseline = persistence_forecast(seq.frames[start], horizon)
    result.snr_x = np.array([snr(truth[k], result.sites[k]) for k in range(horizon)])
    result.baseline_snr_x = np.array([snr(truth[k], baseline[k]) for k in range(horizon)])
    if result.queries is not None and seq.grid_frames is not None:
        gtruth = seq.grid_frames[start + 1: start + 1 + horizon]
        result.snr_omega = np.array([snr(gtruth[k], result.queries[k]) for k in range(horizon)])
    result.meta = {"sequence": int(seq.id), "start": int(start)}
    return result


def _write_metrics(path, results_or_mean):
    times, snr_x, snr_o, base = results_or_mean
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "snr_x", "snr_omega", "baseline_snr_x"])
        for k in range(len(times)):
            w.writerow([k + 1, repr(float(times[k])), repr(float(snr_x[k])),
                        "" if snr_o is None else repr(float(snr_o[k])), repr(float(base[k]))])


def write_trajectories(path, result: ForecastResult) -> None:
    """CSV with columns ``step, t, id, variable, value``; ids are ``s<i>`` for sites, ``q<j>`` for queries."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "id", "variable", "value"])
        for k, t in enumerate(result.times):
            for prefix, traj in (("s", result.sites), ("q", result.queries)):
                if traj is None:
                    continue
                for i, row in enumerate(traj[k]):
                    for m, val in enumerate(row):
                        w.writerow([k + 1, repr(float(t)), f"{prefix}{i}", m, repr(float(val))])


def run_experiment(config: ExperimentConfig, model: OperatorModel | None = None, ds: Dataset | None = None):
    """Forecast every selected test sequence of a dataset and write metrics.

    Returns ``(results, summary)``; ``results`` is one :class:`ForecastResult`
    per sequence, each carrying the setting label in its metadata.
    """
    model = model or load_checkpoint(config.model)
    ds = ds or read_dataset(config.dataset)
    check_compatible(model, ds, config.setting)
    indices = list(range(len(ds.sequences))) if config.sequences is None else list(config.sequences)
    if any(not 0 <= i < len(ds.sequences) for i in indices):
        raise ValidationError("sequence index out of range")
    stepper = Stepper(model, ds.sites, config.lam, ds.grid_points)

    def one(i):
        return evaluate_sequence(model, ds, i, config.horizon, config.start, config.lam, stepper)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]
    for r in results:
        r.meta.update(setting=config.setting, model=str(config.model), dataset=str(config.dataset))

    mean_x = np.mean([r.snr_x for r in results], axis=0)
    mean_base = np.mean([r.baseline_snr_x for r in results], axis=0)
    have_omega = all(r.snr_omega is not None for r in results)
    mean_o = np.mean([r.snr_omega for r in results], axis=0) if have_omega else None
    summary = {
        "setting": config.setting,
        "model": str(config.model),
        "dataset": str(config.dataset),
        "horizon": config.horizon,
        "n_sequences": len(results),
        "n_sites": ds.sites.n,
        "mean_snr_x": float(np.mean(mean_x)),
        "mean_baseline_snr_x": float(np.mean(mean_base)),
        "mean_snr_omega": None if mean_o is None else float(np.mean(mean_o)),
        "gain_over_persistence_db": float(np.mean(mean_x - mean_base)),
    }

    if config.out_dir:
        out = Path(config.out_dir)
        (out / "sequences").mkdir(parents=True, exist_ok=True)
        for r in results:
            stem = out / "sequences" / f"seq_{r.meta['sequence']:04d}"
            _write_metrics(f"{stem}_metrics.csv", (r.times, r.snr_x, r.snr_omega, r.baseline_snr_x))
            if config.write_trajectories:
                write_trajectories(f"{stem}_trajectories.csv", r)
        _write_metrics(out / "metrics.csv", (results[0].times, mean_x, mean_o, mean_base))
        (out / "summary.json").write_text(json.dumps({**summary, "config": asdict(config)}, indent=2))
    return results, summary


def stability_report(model: OperatorModel, sites, dt: float, lam=None, H=None) -> dict:
    """Spectral radius of the one-step matrix and whether rollouts are stable.

    ``H`` may be passed directly to bypass assembly.
    """
    if H is None:
        if not model.linear or model.p != 1 or model.M != 1:
            raise ValidationError("stability analysis applies only to the linear first-order variant "
                                  "(no F_net, p = 1, M = 1)")
        H = build_h_matrix(model, sites, dt, model.lam if lam is None else lam).H
    rho = spectral_radius(H)
    if abs(rho - 1.0) <= MARGINAL_TOL:
        status = "marginal"
    else:
        status = "stable" if rho < 1.0 else "unstable"
    return {"spectral_radius": rho, "stable": bool(rho < 1.0), "status": status}
