"""Synthetic measurement datasets: initial conditions, sampling, noise and JSON I/O."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np

from .boundary import BoundarySpec
from .errors import ValidationError
from .geometry import Domain, SiteSet, boundary_distance, eval_grid, select_sites, uniform_sample
from .reference import FineTrajectory, Lattice, PdeSpec, bilinear_matrix, solve_reference, stable_dt

logger = logging.getLogger(__name__)

DATASET_FORMAT = "rbfpde.dataset"
BF_FREQ = np.arange(-3, 4)
BF_COEF_SD = 0.2

# amplitude and sharpness ranges of the Gaussian-bump initial condition
BUMP_DEFAULTS = {"wave": {"amplitude": (1.0, 2.0), "sharpness": (10.0, 100.0)},
                 "heat": {"amplitude": (1.0, 2.0), "sharpness": (2.0, 10.0)}}
# heat bumps are tapered to vanish on the boundary, matching the zero Dirichlet data
HEAT_TAPER = 0.3


@dataclass
class InitialCondition:
    """Either a Gaussian bump ``a exp(-eps |x - z|^2)`` or a trigonometric series per variable."""

    kind: str
    amplitude: float = 0.0
    sharpness: float = 0.0
    center: np.ndarray | None = None
    cos_coef: np.ndarray | None = None  # (M, 7, 7) indexed by (omega + 3, beta + 3)
    sin_coef: np.ndarray | None = None
    taper: float = 0.0  # width of the boundary window ``1 - exp(-(d / taper)^2)``; 0 disables it
    domain: Domain | None = None

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "bump":
            r2 = np.sum((x - self.center) ** 2, axis=1)
            out = self.amplitude * np.exp(-self.sharpness * r2)
            if self.taper > 0:
                d = boundary_distance(self.domain, x)
                out = out * (1.0 - np.exp(-(d / self.taper) ** 2))
            return out[:, None]
        phase = (x[:, 0, None, None] * BF_FREQ[None, :, None]
                 + x[:, 1, None, None] * BF_FREQ[None, None, :])  # (n, 7, 7)
        cos, sin = np.cos(phase), np.sin(phase)
        return (np.einsum("nab,mab->nm", cos, self.cos_coef)
                + np.einsum("nab,mab->nm", sin, self.sin_coef))


def sample_ic(spec: PdeSpec, domain: Domain, rng: np.random.Generator, ranges=None) -> InitialCondition:
    """Draw a random initial condition for ``spec``.

    Wave and heat: ``a ~ U(ranges['amplitude'])``, ``eps ~ U(ranges['sharpness'])``,
    ``z ~ U(domain)``; heat bumps are additionally tapered to zero on the
    boundary.  Burgers-Fisher: every cosine and sine coefficient of
    the integer frequencies ``|omega|, |beta| < 4`` drawn from ``N(0, 0.2)``;
    ``ranges['coef_sd']`` overrides the 0.2.
    """
    if spec.kind == "burgers_fisher":
        sd = (ranges or {}).get("coef_sd", BF_COEF_SD)
        shape = (spec.M, len(BF_FREQ), len(BF_FREQ))
        return InitialCondition("trig", cos_coef=rng.normal(0.0, sd, shape),
                                sin_coef=rng.normal(0.0, sd, shape))
    ranges = {**BUMP_DEFAULTS[spec.kind], **(ranges or {})}
    a = rng.uniform(*ranges["amplitude"])
    eps = rng.uniform(*ranges["sharpness"])
    z = uniform_sample(domain, 1, rng)[0]
    taper = HEAT_TAPER if spec.kind == "heat" else 0.0
    return InitialCondition("bump", amplitude=a, sharpness=eps, center=z, taper=taper, domain=domain)


@dataclass
class MeasurementSequence:
    frames: np.ndarray  # (K+1, N, M)
    dt: float
    id: int = 0
    grid_frames: np.ndarray | None = None  # (K+1, Q, M)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ValidationError("frames must be a (K+1, N, M) array")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("frames must be finite")

    @property
    def K(self) -> int:
        return self.frames.shape[0] - 1


def sample_at_sites(traj: FineTrajectory, sites: SiteSet, coarse_dt: float, grid=None) -> MeasurementSequence:
    """Bilinear spatial sampling of saved frames, thinned to ``coarse_dt``.

    Boundary sites take their exact Dirichlet values.
    """
    saved_dt = traj.times[1] - traj.times[0] if len(traj.times) > 1 else coarse_dt
    factor = coarse_dt / saved_dt
    if abs(factor - round(factor)) > 1e-6 or round(factor) < 1:
        raise ValidationError("coarse time step must be an integer multiple of the saved step")
    keep = np.arange(0, len(traj.times), int(round(factor)))
    fields = traj.fields[keep]
    interp = bilinear_matrix(traj.lattice.axis, sites.points)
    frames = np.stack([interp @ f for f in fields])
    M = fields.shape[2]
    if sites.boundary_count:
        for n, t in enumerate(traj.times[keep]):
            frames[n, sites.n_interior:] = traj.bc.values(t, sites.boundary, M)
    grid_frames = None
    if grid is not None:
        gmat = bilinear_matrix(traj.lattice.axis, grid)
        grid_frames = np.stack([gmat @ f for f in fields])
    return MeasurementSequence(frames, coarse_dt, grid_frames=grid_frames)


def add_noise(seq: MeasurementSequence, level: float, rng: np.random.Generator, sd=None) -> MeasurementSequence:
    """Add i.i.d. Gaussian noise with standard deviation ``level * sd`` per variable.

    ``sd`` defaults to the per-variable standard deviation of ``seq`` itself;
    pass the clean training-set value to match a whole dataset.
    """
    if level < 0:
        raise ValidationError("noise level must be nonnegative")
    if level == 0:
        return MeasurementSequence(seq.frames.copy(), seq.dt, seq.id, seq.grid_frames)
    if sd is None:
        sd = seq.frames.reshape(-1, seq.frames.shape[2]).std(axis=0)
    noise = rng.normal(size=seq.frames.shape) * (level * np.asarray(sd, dtype=float))
    return MeasurementSequence(seq.frames + noise, seq.dt, seq.id, seq.grid_frames)


@dataclass
class Dataset:
    domain: Domain
    sites: SiteSet
    dt: float
    M: int
    p: int
    sequences: list
    grid_points: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> list:
        return [s.frames for s in self.sequences]

    @property
    def boundary(self) -> BoundarySpec:
        return BoundarySpec(self.meta.get("bc", "zero"))


# --- generation --------------------------------------------------------------

@dataclass
class GenerateConfig:
    pde: str = "heat"
    v: float = 0.1
    nu: float = 0.1
    alpha: float = 1.0
    kappa: float = 0.1
    domain: dict = field(default_factory=lambda: {"kind": "square", "params": [1.0], "dim": 2})
    n_interior: int = 48
    n_boundary: int = 16
    site_seed: int = 0
    n_sequences: int = 30
    K: int = 50
    dt: float = 0.01
    resolution: int = 101
    dt_fine: float | None = None
    bc: str = "zero"
    noise: float = 0.0
    grid_resolution: int = 0
    seed: int = 0
    ic_ranges: dict | None = None
    setting: str = "train"

    @classmethod
    def from_dict(cls, data: dict) -> "GenerateConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown generation option(s): {sorted(unknown)}")
        return cls(**data)

    @property
    def spec(self) -> PdeSpec:
        return PdeSpec(self.pde, self.v, self.nu, self.alpha, self.kappa)


def sequence_rng(seed: int, seq_id: int) -> np.random.Generator:
    """Independent stream per sequence, so generation order does not matter."""
    return np.random.default_rng([seed, seq_id])


def generate_dataset(cfg: GenerateConfig, sites: SiteSet | None = None) -> Dataset:
    spec = cfg.spec
    domain = Domain.from_dict(cfg.domain)
    if sites is None:
        sites = select_sites(domain, cfg.n_interior, cfg.n_boundary, cfg.site_seed)
    else:
        sites.check(domain)
    bc = BoundarySpec(cfg.bc)
    lattice = Lattice(domain, cfg.resolution)
    grid = eval_grid(domain, cfg.grid_resolution).points if cfg.grid_resolution else None

    ics = [sample_ic(spec, domain, sequence_rng(cfg.seed, i), cfg.ic_ranges) for i in range(cfg.n_sequences)]
    u_max = max((float(np.abs(ic(lattice.nodes)).max()) for ic in ics), default=0.0)
    if cfg.dt_fine is None:
        substeps = max(1, ceil(cfg.dt / (0.5 * stable_dt(spec, lattice, u_max))))
    else:
        substeps = int(round(cfg.dt / cfg.dt_fine))
        if substeps < 1 or abs(substeps * cfg.dt_fine - cfg.dt) > 1e-12:
            raise ValidationError("dt must be an integer multiple of dt_fine")
    dt_fine = cfg.dt / substeps

    clean = []
    for i, ic in enumerate(ics):
        traj = solve_reference(spec, domain, ic, bc, cfg.resolution, dt_fine, cfg.K * cfg.dt,
                               save_every=substeps, lattice=lattice)
        seq = sample_at_sites(traj, sites, cfg.dt, grid)
        seq.id = i
        clean.append(seq)
    logger.info("generated %d %s sequences (dt_fine=%.3g)", len(clean), spec.kind, dt_fine)

    sequences = clean
    if cfg.noise > 0:
        stacked = np.concatenate([s.frames.reshape(-1, spec.M) for s in clean])
        sd = stacked.std(axis=0)
        sequences = [add_noise(s, cfg.noise, sequence_rng(cfg.seed, 10**6 + s.id), sd) for s in clean]

    meta = {"pde": spec.kind, "bc": cfg.bc, "setting": cfg.setting, "seed": cfg.seed,
            "site_seed": cfg.site_seed, "noise": cfg.noise, "dt_fine": dt_fine,
            "resolution": cfg.resolution, "grid_resolution": cfg.grid_resolution}
    return Dataset(domain, sites, cfg.dt, spec.M, spec.p, sequences, grid, meta)


# --- JSON I/O ----------------------------------------------------------------

def dataset_to_dict(ds: Dataset) -> dict:
    out = {
        "format": DATASET_FORMAT,
        "domain": ds.domain.to_dict(),
        "sites": ds.sites.points.tolist(),
        "boundary_count": ds.sites.boundary_count,
        "dt": ds.dt,
        "M": ds.M,
        "p": ds.p,
        "meta": ds.meta,
        "sequences": [{"id": s.id, "frames": s.frames.tolist()} for s in ds.sequences],
    }
    if ds.grid_points is not None:
        out["grid_truth"] = {
            "points": ds.grid_points.tolist(),
            "frames": [None if s.grid_frames is None else s.grid_frames.tolist() for s in ds.sequences],
        }
    return out


def _require(data, key, where="dataset"):
    if key not in data:
        raise ValidationError(f"{where}: missing field {key!r}")
    return data[key]


def dataset_from_dict(data: dict) -> Dataset:
    if not isinstance(data, dict):
        raise ValidationError("dataset must be a JSON object")
    domain = Domain.from_dict(_require(data, "domain"))
    pts = np.asarray(_require(data, "sites"), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != domain.dim:
        raise ValidationError(f"field 'sites' must be a list of {domain.dim}-d points")
    sites = SiteSet(pts, int(_require(data, "boundary_count")))
    dt = float(_require(data, "dt"))
    if not dt > 0:
        raise ValidationError("field 'dt' must be positive")
    M = int(_require(data, "M"))
    p = int(_require(data, "p"))
    grid = data.get("grid_truth")
    grid_points = None if grid is None else np.asarray(_require(grid, "points", "grid_truth"), dtype=float)
    grid_frames = None if grid is None else _require(grid, "frames", "grid_truth")

    sequences = []
    for n, entry in enumerate(_require(data, "sequences")):
        where = f"sequences[{n}]"
        try:
            frames = np.asarray(_require(entry, "frames", where), dtype=float)
        except ValueError as exc:
            raise ValidationError(f"{where}.frames: ragged or non-numeric array") from exc
        if frames.ndim != 3 or frames.shape[1:] != (sites.n, M):
            raise ValidationError(
                f"{where}.frames: expected shape (K+1, {sites.n}, {M}), got {frames.shape}")
        gf = None
        if grid_frames is not None and grid_frames[n] is not None:
            gf = np.asarray(grid_frames[n], dtype=float)
            if gf.shape != (frames.shape[0], len(grid_points), M):
                raise ValidationError(f"grid_truth.frames[{n}]: shape {gf.shape} does not match")
        sequences.append(MeasurementSequence(frames, dt, int(entry.get("id", n)), gf))
    return Dataset(domain, sites, dt, M, p, sequences, grid_points, dict(data.get("meta", {})))


def write_dataset(path, ds: Dataset) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds)))


def read_dataset(path) -> Dataset:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_dict(data)
