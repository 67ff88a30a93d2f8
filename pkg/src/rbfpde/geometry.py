"""Domains, measurement-site selection and evaluation grids.

Three closed domains are supported, all centred at the origin:

* ``square``  -- the hypercube ``[-a, a]^d``
* ``disk``    -- the ball of radius ``R``
* ``annulus`` -- the shell ``r <= |x| <= R``

Measurement sites are chosen with K-means on a dense uniform sample of the
domain interior; boundary sites are placed equispaced along the boundary
and always occupy the last ``b`` rows of a :class:`SiteSet`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-9
MIN_SAMPLE = 20_000
KINDS = ("square", "disk", "annulus")


@dataclass(frozen=True)
class Domain:
    kind: str
    params: tuple
    dim: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        expected = 2 if self.kind == "annulus" else 1
        if len(self.params) != expected:
            raise ValidationError(f"{self.kind} takes {expected} parameter(s), got {len(self.params)}")
        if any(not np.isfinite(p) or p <= 0 for p in self.params):
            raise ValidationError(f"domain parameters must be positive, got {self.params}")
        if self.kind == "annulus" and self.params[0] >= self.params[1]:
            raise ValidationError("annulus inner radius must be smaller than the outer radius")
        if int(self.dim) < 1:
            raise ValidationError("domain dimension must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))

    @classmethod
    def square(cls, half_width=1.0, dim=2):
        return cls("square", (half_width,), dim)

    @classmethod
    def disk(cls, radius=1.0, dim=2):
        return cls("disk", (radius,), dim)

    @classmethod
    def annulus(cls, inner=0.3, outer=1.0, dim=2):
        return cls("annulus", (inner, outer), dim)

    @property
    def extent(self) -> float:
        """Half-width of the axis-aligned bounding box."""
        return self.params[-1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "dim": self.dim}

    @classmethod
    def from_dict(cls, data: dict) -> "Domain":
        for key in ("kind", "params"):
            if key not in data:
                raise ValidationError(f"domain descriptor missing field {key!r}")
        return cls(data["kind"], tuple(data["params"]), int(data.get("dim", 2)))


def _as_points(domain: Domain, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.ndim != 2 or pts.shape[1] != domain.dim:
        raise ValidationError(
            f"point dimension {pts.shape[-1]} does not match domain dimension {domain.dim}")
    return pts, single


def _signed_gap(domain: Domain, pts: np.ndarray) -> np.ndarray:
    # positive inside, negative outside, |.| is the distance to the boundary for inside points
    if domain.kind == "square":
        return domain.params[0] - np.max(np.abs(pts), axis=1)
    norm = np.linalg.norm(pts, axis=1)
    if domain.kind == "disk":
        return domain.params[0] - norm
    inner, outer = domain.params
    return np.minimum(outer - norm, norm - inner)


def contains(domain: Domain, x, tol: float = BOUNDARY_TOL):
    """Membership in the closed domain. Accepts one point or an ``(n, d)`` array."""
    pts, single = _as_points(domain, x)
    inside = _signed_gap(domain, pts) >= -tol
    return bool(inside[0]) if single else inside


def boundary_distance(domain: Domain, x):
    """Euclidean distance from points inside ``domain`` to its boundary."""
    pts, single = _as_points(domain, x)
    gap = _signed_gap(domain, pts)
    if np.any(gap < -BOUNDARY_TOL):
        raise ValidationError("boundary_distance is only defined for points inside the domain")
    dist = np.maximum(gap, 0.0)
    return float(dist[0]) if single else dist


def project_to_boundary(domain: Domain, x) -> np.ndarray:
    """Nearest boundary point for each row of ``x`` (inside or outside)."""
    pts, _ = _as_points(domain, x)
    out = pts.copy()
    if domain.kind == "square":
        a = domain.params[0]
        outside = np.max(np.abs(pts), axis=1) > a
        out[outside] = np.clip(pts[outside], -a, a)
        inside = ~outside
        axis = np.argmax(np.abs(pts[inside]), axis=1)
        rows = np.flatnonzero(inside)
        sign = np.where(pts[rows, axis] >= 0, 1.0, -1.0)
        out[rows, axis] = sign * a
        return out
    norm = np.linalg.norm(pts, axis=1)
    direction = np.zeros_like(pts)
    direction[:, 0] = 1.0
    nz = norm > 0
    direction[nz] = pts[nz] / norm[nz, None]
    if domain.kind == "disk":
        return domain.params[0] * direction
    inner, outer = domain.params
    radius = np.where(norm < 0.5 * (inner + outer), inner, outer)
    return radius[:, None] * direction


@dataclass
class SiteSet:
    """Scattered measurement sites; the last ``boundary_count`` rows lie on the boundary."""

    points: np.ndarray
    boundary_count: int = 0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.boundary_count = int(self.boundary_count)
        if not 0 <= self.boundary_count <= len(self.points):
            raise ValidationError("boundary_count out of range")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_interior(self) -> int:
        return self.n - self.boundary_count

    @property
    def interior(self) -> np.ndarray:
        return self.points[: self.n_interior]

    @property
    def boundary(self) -> np.ndarray:
        return self.points[self.n_interior:]

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.arange(self.n_interior, self.n)

    def check(self, domain: Domain, tol: float = BOUNDARY_TOL) -> None:
        """Raise :class:`ValidationError` unless every SiteSet invariant holds."""
        if self.dim != domain.dim:
            raise ValidationError("site dimension does not match domain")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("site coordinates must be finite")
        if not np.all(contains(domain, self.points, tol)):
            raise ValidationError("some sites lie outside the domain")
        on_boundary = boundary_distance(domain, self.points) <= tol
        expected = np.zeros(self.n, dtype=bool)
        expected[self.n_interior:] = True
        if not np.array_equal(on_boundary, expected):
            raise ValidationError("boundary sites must be exactly the last boundary_count points")
        if len(np.unique(self.points, axis=0)) != self.n:
            raise ValidationError("sites must be pairwise distinct")

    def to_dict(self) -> dict:
        return {"sites": self.points.tolist(), "boundary_count": self.boundary_count}


@dataclass
class EvalGrid:
    points: np.ndarray
    resolution: int


def uniform_sample(domain: Domain, n: int, rng: np.random.Generator, interior_only=True):
    """Rejection-sample ``n`` points uniformly from the domain."""
    out = []
    have = 0
    ext = domain.extent
    while have < n:
        batch = rng.uniform(-ext, ext, size=(max(2 * (n - have), 64), domain.dim))
        gap = _signed_gap(domain, batch)
        keep = batch[gap > BOUNDARY_TOL] if interior_only else batch[gap >= 0]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def kmeans(points, k: int, rng: np.random.Generator, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Returns
    -------
    centers : (k, d) array
    labels : (n,) int array
    history : list of float
        Sum of squared distances to the nearest center after seeding and
        after every Lloyd update.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValidationError("not enough distinct points for the requested number of clusters")
        idx = rng.choice(n, p=d2 / total)
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    def sqdist(cs):
        # (n, k) squared distances without forming (n, k, d)
        return (np.sum(points**2, axis=1)[:, None] - 2.0 * points @ cs.T
                + np.sum(cs**2, axis=1)[None, :]).clip(min=0.0)

    def objective(lab):
        return float(np.sum((points - centers[lab]) ** 2))

    labels = np.argmin(sqdist(centers), axis=1)
    history = [objective(labels)]
    for it in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            own = np.sum((points - centers[labels]) ** 2, axis=1)
            far = int(np.argmax(own))
            centers[c] = points[far]
            labels[far] = c
        new_labels = np.argmin(sqdist(centers), axis=1)
        history.append(objective(new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    else:
        logger.debug("kmeans stopped after %d iterations without converging", max_iter)
    return centers, labels, history


def boundary_points(domain: Domain, n: int) -> np.ndarray:
    """``n`` points equispaced in arc length along the boundary."""
    if n == 0:
        return np.empty((0, domain.dim))
    if domain.dim == 1:
        if domain.kind == "annulus":
            r, big = domain.params
            ends = np.array([-big, -r, r, big])
        else:
            ends = np.array([-domain.extent, domain.extent])
        if n > len(ends):
            raise ValidationError(f"a 1-d {domain.kind} has only {len(ends)} boundary points")
        return ends[np.linspace(0, len(ends) - 1, n).round().astype(int)][:, None]
    if domain.dim != 2:
        raise ValidationError("boundary site placement is implemented for d <= 2 only")

    if domain.kind == "square":
        a = domain.params[0]
        s = np.arange(n) * (8.0 * a / n)
        side = np.minimum((s // (2 * a)).astype(int), 3)
        off = s - 2 * a * side
        corners = np.array([[-a, -a], [a, -a], [a, a], [-a, a]])
        dirs = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        return corners[side] + off[:, None] * dirs[side]

    def circle(radius, m):
        theta = 2.0 * np.pi * np.arange(m) / m
        return radius * np.column_stack([np.cos(theta), np.sin(theta)])

    if domain.kind == "disk":
        return circle(domain.params[0], n)
    inner, outer = domain.params
    n_outer = int(round(n * outer / (inner + outer)))
    if n >= 2:
        n_outer = min(max(n_outer, 1), n - 1)
    return np.concatenate([circle(outer, n_outer), circle(inner, n - n_outer)])


def select_sites(domain: Domain, n_interior: int, n_boundary: int, seed=0,
                 sample_size: int | None = None) -> SiteSet:
    """K-means interior sites plus equispaced boundary sites.

    ``sample_size`` defaults to ``200 * n_interior`` uniform draws, but at
    least ``MIN_SAMPLE`` so that a handful of centroids is not dominated by
    sampling noise.
    """
    if n_interior < 1:
        raise ValidationError("at least one interior site is required")
    if n_boundary < 0:
        raise ValidationError("n_boundary must be nonnegative")
    rng = np.random.default_rng(seed)
    sample = uniform_sample(domain, sample_size or max(200 * n_interior, MIN_SAMPLE), rng)
    centers, labels, _ = kmeans(sample, n_interior, rng)

    # centroids of a non-convex domain can fall outside it (the annulus hole)
    gap = _signed_gap(domain, centers)
    for c in np.flatnonzero(gap <= BOUNDARY_TOL):
        members = sample[labels == c]
        nearest = np.argmin(np.sum((members - centers[c]) ** 2, axis=1))
        centers[c] = members[nearest]

    sites = SiteSet(np.concatenate([centers, boundary_points(domain, n_boundary)]), n_boundary)
    sites.check(domain)
    return sites


def eval_grid(domain: Domain, resolution: int) -> EvalGrid:
    """Regular lattice over the bounding box, masked to the domain."""
    if resolution < 2:
        raise ValidationError("resolution must be at least 2")
    axis = np.linspace(-domain.extent, domain.extent, resolution)
    mesh = np.meshgrid(*([axis] * domain.dim), indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    return EvalGrid(pts[contains(domain, pts)], resolution)
