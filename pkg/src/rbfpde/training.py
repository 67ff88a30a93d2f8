"""Losses, gradients and the leave-one-out training loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError
from .nn import AdamState, MlpParams, adam_step
from .operator import (
    OperatorModel,
    d_tensor_backward,
    d_tensor_forward,
    rhs_backward,
    rhs_from_coefficients,
    temporal_update,
)
from .rbf import DEFAULT_RIDGE, RidgeSolver, default_sigma

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rbfpde.checkpoint"
CHECKPOINT_VERSION = 1
LOSS_TARGETS = ("all", "left_out")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    lam: float = DEFAULT_RIDGE
    h: int = 16
    linear: bool = False
    seed: int = 0
    loo_enabled: bool = True
    loo_loss: str = "all"
    val_fraction: float = 0.1
    divergence_factor: float = 1e6
    sigma0: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be at least 1")
        if self.lr <= 0 or self.lam < 0:
            raise ValidationError("learning rate must be positive and ridge nonnegative")
        if self.loo_loss not in LOSS_TARGETS:
            raise ValidationError(f"loo_loss must be one of {LOSS_TARGETS}")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    initial_loss: float = float("nan")
    best_epoch: int = -1
    seconds: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "sigma"])
            for e, (tl, vl, s) in enumerate(zip(self.train_loss, self.val_loss, self.sigma)):
                writer.writerow([e, repr(tl), repr(vl), repr(s)])


# --- loss and gradient -------------------------------------------------------

class _Batch:
    """Forward quantities shared by every sample on one site set."""

    def __init__(self, model: OperatorModel, points):
        self.model = model
        self.D, self.cache = d_tensor_forward(model, points, points)
        self.r = self.cache["r"]
        self.phi = model.kernel(self.r)
        self._gz, self._C = [], []  # per-transition factors of grad_D, multiplied out once
        self.grad_phi = np.zeros_like(self.phi)
        self.grad_F = None
        self._solvers = {}

    def transition(self, frames, k, dt, lam, leave_out=None, loss_at="all", want_grad=True):
        """Squared residual of predicting ``frames[k + 1]`` from frames ``k, k-1, ...``."""
        model = self.model
        n = self.phi.shape[0]
        if leave_out is None:
            cols = None
            phi_s = self.phi
        else:
            cols = np.delete(np.arange(n), leave_out)
            phi_s = self.phi[np.ix_(cols, cols)]
        U = frames[k] if cols is None else frames[k][cols]
        # the full-site factorization is reused across transitions
        solver = self._solvers.get(lam) if cols is None else None
        if solver is None:
            solver = RidgeSolver(phi_s, lam)
            if cols is None:
                self._solvers[lam] = solver
        C_s = solver.solve(U)
        if cols is None:
            C = C_s
        else:
            # a zero coefficient at the left-out center drops its column of D
            C = np.zeros((n, C_s.shape[1]))
            C[cols] = C_s
        rhs, f_cache = rhs_from_coefficients(model, self.D, C)
        history = frames[k - model.p + 1: k + 1][::-1]
        resid = frames[k + 1] - temporal_update(history, rhs, model.p, dt)
        if loss_at == "left_out":
            if leave_out is None:
                raise ValidationError("loss at the left-out site needs a leave-out index")
            keep = np.zeros(n, dtype=bool)
            keep[leave_out] = True
            resid = np.where(keep[:, None], resid, 0.0)
        loss = float(np.sum(resid * resid))
        if not want_grad:
            return loss

        grad_rhs = -2.0 * dt * resid
        dwf, dbf, gz, gC = rhs_backward(model, self.D, C, f_cache, grad_rhs, pair_grad=False)
        self._gz.append(gz)
        self._C.append(C)
        if cols is None:
            g_phi_s, _ = solver.backward(gC, C_s, U)
            self.grad_phi += g_phi_s
        else:
            g_phi_s, _ = solver.backward(gC[cols], C_s, U)
            self.grad_phi[np.ix_(cols, cols)] += g_phi_s
        if dwf is not None:
            if self.grad_F is None:
                self.grad_F = [np.zeros_like(a) for a in model.F_net.arrays()]
            for acc, g in zip(self.grad_F, _interleave(dwf, dbf)):
                acc += g
        return loss

    def gradients(self, scale=1.0) -> list:
        """Parameter gradients, ordered like :meth:`OperatorModel.parameters`."""
        model = self.model
        if self._gz:
            grad_D = np.concatenate(self._gz, axis=2) @ np.concatenate(self._C, axis=1).T
        else:
            grad_D = np.zeros_like(self.D)
        dwl, dbl, g_phi_pairs = d_tensor_backward(model, self.cache, grad_D)
        g_phi = self.grad_phi + g_phi_pairs
        g_sigma = float(np.sum(g_phi * model.kernel.dsigma(self.r)))
        grads = _interleave(dwl, dbl)
        if model.F_net is not None:
            grads += self.grad_F if self.grad_F is not None else [np.zeros_like(a) for a in model.F_net.arrays()]
        grads.append(np.array([g_sigma]))
        return [g * scale for g in grads]


def _interleave(ws, bs):
    out = []
    for w, b in zip(ws, bs):
        out += [w, b]
    return out


def _check_frames(frames, M: int, p: int, n_sites=None):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[:, :, None]
    if frames.ndim != 3 or frames.shape[2] != M:
        raise ValidationError(f"frames must have shape (K+1, N, {M})")
    if n_sites is not None and frames.shape[1] != n_sites:
        raise ValidationError(f"frames cover {frames.shape[1]} sites, expected {n_sites}")
    if frames.shape[0] - 1 < p:
        raise ValidationError(f"need at least p+1 = {p + 1} frames")
    if not np.all(np.isfinite(frames)):
        raise ValidationError("frames contain non-finite values")
    return frames


def sequence_loss(model: OperatorModel, points, frames, dt: float, lam=None, leave_out=None,
                  loss_at="all", return_grad=False):
    """Mean squared one-step residual over a measurement sequence.

    ``frames`` has shape ``(K+1, N', M)`` at the interior sites ``points``.
    The sum runs over every step with a full history (``k = p-1 .. K-1``)
    and is divided by ``K``.  With ``return_grad`` the gradient list
    (ordered like :meth:`OperatorModel.parameters`) is returned as well.
    """
    lam = model.lam if lam is None else lam
    points = np.atleast_2d(np.asarray(points, dtype=float))
    frames = _check_frames(frames, model.M, model.p, len(points))
    K = frames.shape[0] - 1
    if leave_out is not None and not 0 <= leave_out < len(points):
        raise ValidationError("leave-out index out of range")
    batch = _Batch(model, points)
    total = 0.0
    for k in range(model.p - 1, K):
        total += batch.transition(frames, k, dt, lam, leave_out, loss_at, want_grad=return_grad)
    if not return_grad:
        return total / K
    return total / K, batch.gradients(1.0 / K)


def loo_select(n_sites: int, rng: np.random.Generator) -> int:
    """Index of the site to leave out, uniform over ``0..n_sites-1``."""
    if n_sites < 2:
        raise ValidationError("leave-one-out needs at least two sites")
    return int(rng.integers(n_sites))


def mean_transition_loss(model: OperatorModel, points, sequences, dt, lam=None) -> float:
    """Average per-step squared residual without leave-one-out."""
    lam = model.lam if lam is None else lam
    batch = _Batch(model, points)
    losses = [batch.transition(seq, k, dt, lam, want_grad=False)
              for seq in sequences for k in range(model.p - 1, seq.shape[0] - 1)]
    return float(np.mean(losses))


# --- training loop -----------------------------------------------------------

def _split(n_seq, fraction, rng):
    order = rng.permutation(n_seq)
    n_val = int(round(fraction * n_seq)) if n_seq > 1 else 0
    if fraction > 0 and n_seq > 1:
        n_val = max(n_val, 1)
    return sorted(order[n_val:]), sorted(order[:n_val])


def train(dataset, config: TrainConfig, model: OperatorModel | None = None):
    """Fit an :class:`OperatorModel` to a dataset with leave-one-out minibatches.

    ``dataset`` needs ``sites`` (a SiteSet), ``dt``, ``p``, ``M`` and
    ``frames`` (a list of ``(K+1, N, M)`` arrays over all sites).  Only the
    interior sites are used.  Returns ``(model, report)`` where the model is
    the one with the lowest validation loss.
    """
    t_start = time.perf_counter()
    if not dataset.frames:
        raise ValidationError("dataset has no sequences")
    rng = np.random.default_rng(config.seed)
    points = dataset.sites.interior
    n_int = len(points)
    seqs = [_check_frames(f, dataset.M, dataset.p)[:, :n_int, :] for f in dataset.frames]
    K = min(s.shape[0] - 1 for s in seqs)
    if K < dataset.p + 1:
        raise ValidationError(f"sequences need K >= p+1 = {dataset.p + 1} steps")
    if config.loo_enabled and n_int < 2:
        raise ValidationError("leave-one-out needs at least two interior sites")

    if model is None:
        sigma0 = config.sigma0 or default_sigma(points)
        model = OperatorModel.create(d=dataset.sites.dim, M=dataset.M, h=config.h, p=dataset.p,
                                     sigma=sigma0, linear=config.linear, seed=config.seed, lam=config.lam)
    elif (model.M, model.p, model.d) != (dataset.M, dataset.p, dataset.sites.dim):
        raise ValidationError("initial model is incompatible with the dataset")

    train_idx, val_idx = _split(len(seqs), config.val_fraction, rng)
    train_seqs = [seqs[i] for i in train_idx]
    val_seqs = [seqs[i] for i in val_idx]
    samples = [(s, k) for s, seq in enumerate(train_seqs) for k in range(dataset.p - 1, seq.shape[0] - 1)]

    report = TrainReport()
    report.initial_loss = mean_transition_loss(model, points, train_seqs, dataset.dt, config.lam)
    logger.info("initial loss %.6g on %d samples", report.initial_loss, len(samples))
    params = model.parameters()
    sigma_index = len(params) - 1
    state = AdamState.for_params(params, lr=config.lr)
    best = (np.inf, model.copy(), -1)
    ceiling = config.divergence_factor * max(report.initial_loss, np.finfo(float).tiny)

    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for b0 in range(0, len(order), config.batch_size):
            chunk = order[b0: b0 + config.batch_size]
            leave = [loo_select(n_int, rng) if config.loo_enabled else None for _ in chunk]
            batch = _Batch(model, points)
            batch_losses = []
            for idx, l in zip(chunk, leave):
                s, k = samples[idx]
                batch_losses.append(batch.transition(
                    train_seqs[s], k, dataset.dt, config.lam, l,
                    config.loo_loss if l is not None else "all"))
            mean_loss = float(np.mean(batch_losses))
            if not np.isfinite(mean_loss) or mean_loss > ceiling:
                raise NumericalError(f"training diverged at epoch {epoch}, batch {b0 // config.batch_size}"
                                     f" (loss {mean_loss:.3g})")
            losses += batch_losses
            grads = batch.gradients(1.0 / len(chunk))
            params, state = adam_step(state, params, grads, sigma_index)
            model = model.with_parameters(params)

        report.train_loss.append(float(np.mean(losses)))
        val = (mean_transition_loss(model, points, val_seqs, dataset.dt, config.lam)
               if val_seqs else report.train_loss[-1])
        report.val_loss.append(val)
        report.sigma.append(model.sigma)
        if val < best[0]:
            best = (val, model.copy(), epoch)
        logger.info("epoch %d: train %.6g  val %.6g  sigma %.4g", epoch, report.train_loss[-1], val, model.sigma)

    report.best_epoch = best[2]
    report.seconds = time.perf_counter() - t_start
    return best[1], report


# --- checkpoints -------------------------------------------------------------

def model_to_dict(model: OperatorModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sigma": model.sigma,
        "p": model.p,
        "h": model.h,
        "M": model.M,
        "d": model.d,
        "lambda": model.lam,
        "L_net": model.L_net.to_dict(),
        "F_net": None if model.F_net is None else model.F_net.to_dict(),
    }


def model_from_dict(data: dict) -> OperatorModel:
    if not isinstance(data, dict):
        raise ValidationError("checkpoint must be a JSON object")
    if data.get("format", CHECKPOINT_FORMAT) != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a model checkpoint (format {data.get('format')!r})")
    if data.get("version", CHECKPOINT_VERSION) != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {data.get('version')}")
    for key in ("sigma", "p", "h", "M", "d", "L_net"):
        if key not in data:
            raise ValidationError(f"checkpoint missing field {key!r}")
    L_net = MlpParams.from_dict(data["L_net"])
    F_net = None if data.get("F_net") is None else MlpParams.from_dict(data["F_net"])
    return OperatorModel(L_net, F_net, float(data["sigma"]), int(data["p"]), int(data["M"]),
                         int(data["h"]), int(data["d"]), float(data.get("lambda", DEFAULT_RIDGE)))


def save_checkpoint(model: OperatorModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_checkpoint(path) -> OperatorModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(data)


def report_to_dict(report: TrainReport) -> dict:
    return asdict(report)
