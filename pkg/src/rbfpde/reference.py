"""Finite-difference reference solutions on a masked regular lattice.

Lattice nodes at least half a spacing inside the domain are unknowns and
use second-order central stencils.  Nodes closer to the boundary hold the
Dirichlet value of their nearest boundary point.  Where a stencil arm
leaves the domain, the arm is shortened to the boundary crossing and the
boundary value is used there (a first-order irregular stencil).

Time stepping is explicit: leapfrog for the wave equation, forward Euler
for heat and Burgers-Fisher.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .boundary import BoundarySpec
from .errors import NumericalError, ValidationError
from .geometry import BOUNDARY_TOL, Domain, _signed_gap, project_to_boundary

logger = logging.getLogger(__name__)

PDE_KINDS = ("wave", "burgers_fisher", "heat")
NEAR_BOUNDARY = 0.5


@dataclass(frozen=True)
class PdeSpec:
    kind: str
    v: float = 0.1
    nu: float = 0.1
    alpha: float = 1.0
    kappa: float = 0.1

    def __post_init__(self):
        if self.kind not in PDE_KINDS:
            raise ValidationError(f"unknown PDE kind {self.kind!r}; expected one of {PDE_KINDS}")
        for name in ("v", "nu", "alpha", "kappa"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"PDE parameter {name} must be positive")

    @property
    def p(self) -> int:
        return 2 if self.kind == "wave" else 1

    @property
    def M(self) -> int:
        return 2 if self.kind == "burgers_fisher" else 1


class Lattice:
    """Regular ``resolution x resolution`` lattice over the domain's bounding box."""

    def __init__(self, domain: Domain, resolution: int):
        if domain.dim != 2:
            raise ValidationError("reference solutions are 2-d only")
        if resolution < 3:
            raise ValidationError("lattice resolution must be at least 3")
        self.domain = domain
        self.resolution = res = int(resolution)
        self.axis = np.linspace(-domain.extent, domain.extent, res)
        self.dx = self.axis[1] - self.axis[0]
        gx, gy = np.meshgrid(self.axis, self.axis, indexing="ij")
        self.nodes = np.column_stack([gx.ravel(), gy.ravel()])
        gap = _signed_gap(domain, self.nodes)

        self.unknown = np.flatnonzero(gap >= NEAR_BOUNDARY * self.dx - BOUNDARY_TOL)
        self.dirichlet = np.flatnonzero((gap >= -BOUNDARY_TOL) & (gap < NEAR_BOUNDARY * self.dx - BOUNDARY_TOL))
        self.outside = np.flatnonzero(gap < -BOUNDARY_TOL)
        self.inside_mask = gap >= -BOUNDARY_TOL
        col = -np.ones(len(self.nodes), dtype=int)
        col[self.unknown] = np.arange(len(self.unknown))

        # boundary points: projections of Dirichlet nodes, of outside nodes, then stencil crossings
        bpoints = [project_to_boundary(domain, self.nodes[self.dirichlet]),
                   project_to_boundary(domain, self.nodes[self.outside])]
        bref = -np.ones(len(self.nodes), dtype=int)
        bref[self.dirichlet] = np.arange(len(self.dirichlet))
        bref[self.outside] = len(self.dirichlet) + np.arange(len(self.outside))
        n_b = len(self.dirichlet) + len(self.outside)

        n_u = len(self.unknown)
        xu = self.nodes[self.unknown]
        ii, jj = np.divmod(self.unknown, res)
        arms = {}
        for axis_k in range(2):
            for sign in (1, -1):
                ni = ii + sign * (axis_k == 0)
                nj = jj + sign * (axis_k == 1)
                nb = ni * res + nj
                dist = np.full(n_u, self.dx)
                ucol = col[nb]
                bcol = np.where(ucol < 0, bref[nb], -1)
                out = gap[nb] < -BOUNDARY_TOL
                if np.any(out):
                    step = np.zeros(2)
                    step[axis_k] = sign
                    s = _crossing(domain, xu[out], step, self.dx)
                    dist[out] = s
                    crossing = xu[out] + s[:, None] * step
                    bpoints.append(project_to_boundary(domain, crossing))
                    bcol[out] = n_b + np.arange(out.sum())
                    n_b += int(out.sum())
                arms[axis_k, sign] = (dist, ucol, bcol)
        self.bpoints = np.concatenate(bpoints)
        self.n_unknown, self.n_bpoints = n_u, n_b

        rows = np.arange(n_u)

        def build(entries):
            # entries: list of (row weights, unknown col or -1, boundary col or -1)
            ur, uc, uv, br, bc, bv = [], [], [], [], [], []
            for w, ucol, bcol in entries:
                m = ucol >= 0
                ur.append(rows[m]); uc.append(ucol[m]); uv.append(w[m])
                m = bcol >= 0
                br.append(rows[m]); bc.append(bcol[m]); bv.append(w[m])
            A = sp.csr_matrix((np.concatenate(uv), (np.concatenate(ur), np.concatenate(uc))), shape=(n_u, n_u))
            B = sp.csr_matrix((np.concatenate(bv), (np.concatenate(br), np.concatenate(bc))), shape=(n_u, n_b))
            return A, B

        self_col = rows.copy()
        none = -np.ones(n_u, dtype=int)
        lap, diag = [], np.zeros(n_u)
        self.grad_fwd, self.grad_bwd = [], []
        for axis_k in range(2):
            hp, up, bp = arms[axis_k, 1]
            hm, um, bm = arms[axis_k, -1]
            scale = 2.0 / (hp + hm)
            lap += [(scale / hp, up, bp), (scale / hm, um, bm)]
            diag -= scale * (1.0 / hp + 1.0 / hm)
            self.grad_fwd.append(build([(1.0 / hp, up, bp), (-1.0 / hp, self_col, none)]))
            self.grad_bwd.append(build([(1.0 / hm, self_col, none), (-1.0 / hm, um, bm)]))
        lap.append((diag, self_col, none))
        self.laplacian = build(lap)
        self.max_diag = float(np.max(-diag)) if n_u else 0.0
        self.min_arm = float(min(a[0].min() for a in arms.values())) if n_u else self.dx

    def boundary_values(self, bc: BoundarySpec, t, n_vars):
        return bc.values(t, self.bpoints, n_vars)

    def full_field(self, u_unknown, g):
        """Assemble lattice-wide values from unknowns and boundary values ``g``."""
        out = np.empty((len(self.nodes),) + u_unknown.shape[1:])
        out[self.unknown] = u_unknown
        out[self.dirichlet] = g[: len(self.dirichlet)]
        out[self.outside] = g[len(self.dirichlet): len(self.dirichlet) + len(self.outside)]
        return out


def _crossing(domain, x, step, dx, iters=60):
    """Distance along ``step`` from inside points ``x`` to the boundary, within ``dx``."""
    lo = np.zeros(len(x))
    hi = np.full(len(x), dx)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = _signed_gap(domain, x + mid[:, None] * step) >= 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


@dataclass
class FineTrajectory:
    lattice: Lattice
    times: np.ndarray
    fields: np.ndarray  # (n_frames, n_nodes, M)
    bc: BoundarySpec


def stable_dt(spec: PdeSpec, lattice: Lattice, u_max: float = 0.0) -> float:
    """Largest stable explicit step for the given lattice."""
    if spec.kind == "wave":
        return 2.0 / (spec.v * np.sqrt(2.0 * lattice.max_diag))
    coeff = spec.kappa if spec.kind == "heat" else spec.nu
    bound = 1.0 / (coeff * lattice.max_diag)
    if spec.kind == "burgers_fisher":
        # monotone upwinding also needs the advective CFL and the reaction rate
        rate = coeff * lattice.max_diag + 2.0 * u_max / lattice.min_arm + spec.alpha * (1.0 + 2.0 * u_max)
        bound = 1.0 / rate
    return bound


def solve_reference(spec: PdeSpec, domain: Domain, ic, bc: BoundarySpec, resolution: int,
                    dt_fine: float, horizon: float, save_every: int = 1,
                    lattice: Lattice | None = None) -> FineTrajectory:
    """Integrate the PDE on the lattice and keep every ``save_every``-th step.

    ``ic`` is a callable mapping ``(n, 2)`` points to ``(n, M)`` values.
    """
    lattice = lattice or Lattice(domain, resolution)
    M = spec.M
    u0 = np.asarray(ic(lattice.nodes[lattice.unknown]), dtype=float).reshape(lattice.n_unknown, M)
    u_max = float(np.max(np.abs(u0), initial=0.0))
    bound = stable_dt(spec, lattice, u_max)
    if dt_fine <= 0 or dt_fine > bound * (1 + 1e-12):
        raise ValidationError(f"fine time step {dt_fine:.4g} violates the stability bound {bound:.4g}")
    n_steps = int(round(horizon / dt_fine))
    if abs(n_steps * dt_fine - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValidationError("horizon must be an integer multiple of the fine time step")

    A, B = lattice.laplacian
    g = lattice.boundary_values(bc, 0.0, M)
    saved_t = [0.0]
    saved = [lattice.full_field(u0, g)]

    def lap(u, g):
        return A @ u + B @ g

    u = u0.copy()
    if spec.kind == "wave":
        c2 = (spec.v * dt_fine) ** 2
        u_prev = u + 0.5 * c2 * lap(u, g)
    for n in range(1, n_steps + 1):
        t = n * dt_fine
        g_now = g
        g = lattice.boundary_values(bc, t, M)
        if spec.kind == "wave":
            u, u_prev = 2.0 * u - u_prev + c2 * lap(u, g_now), u
        elif spec.kind == "heat":
            u = u + dt_fine * spec.kappa * lap(u, g_now)
        else:
            adv = np.zeros_like(u)
            for k in range(2):
                a = u[:, k: k + 1]
                Af, Bf = lattice.grad_fwd[k]
                Ab, Bb = lattice.grad_bwd[k]
                fwd = Af @ u + Bf @ g_now
                bwd = Ab @ u + Bb @ g_now
                adv += np.maximum(a, 0.0) * bwd + np.minimum(a, 0.0) * fwd
            u = u + dt_fine * (spec.nu * lap(u, g_now) - adv + spec.alpha * u * (1.0 - u))
        if not np.all(np.isfinite(u)):
            raise NumericalError("reference solution became non-finite", step=n)
        if n % save_every == 0:
            saved_t.append(t)
            saved.append(lattice.full_field(u, g))
    return FineTrajectory(lattice, np.array(saved_t), np.stack(saved), bc)


def bilinear_matrix(axis, points) -> sp.csr_matrix:
    """Sparse map from lattice values (``ij`` node order) to bilinear values at ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    res = len(axis)
    lo, hi = axis[0], axis[-1]
    tol = 1e-12 * max(1.0, abs(hi))
    if np.any(points < lo - tol) or np.any(points > hi + tol):
        raise ValidationError("points outside the lattice hull cannot be interpolated")
    dx = axis[1] - axis[0]
    f = (np.clip(points, lo, hi) - lo) / dx
    i0 = np.clip(np.floor(f).astype(int), 0, res - 2)
    w = f - i0
    rows, cols, vals = [], [], []
    n = len(points)
    for di in (0, 1):
        for dj in (0, 1):
            wx = w[:, 0] if di else 1.0 - w[:, 0]
            wy = w[:, 1] if dj else 1.0 - w[:, 1]
            rows.append(np.arange(n))
            cols.append((i0[:, 0] + di) * res + i0[:, 1] + dj)
            vals.append(wx * wy)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, res * res))
