"""The learned collocation stepper.

A network ``L`` maps a pair of sites and their kernel value to ``h``
derivative features of the kernel.  Stacking those over all site pairs
gives the derivative tensor ``D`` with shape ``(h, n_eval, n_centers)``.
Contracting ``D`` with RBF coefficients of the current state yields
derivative features of the field at every site, which an optional second
network ``F`` turns into the right-hand side of the time update::

    u(t + dt) = sum_q binom(p, q) (-1)**(q + 1) u(t - (q - 1) dt) + dt * F(D C(t))

Boundary sites are overwritten with Dirichlet values after every step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .boundary import BoundarySpec
from .errors import NumericalError, SolverError, ValidationError
from .geometry import SiteSet
from .nn import MlpParams, init_mlp, mlp_backward, mlp_forward
from .rbf import DEFAULT_RIDGE, RbfKernel, RidgeSolver, assemble_phi, distances

logger = logging.getLogger(__name__)

L_HIDDEN = (64, 32)
F_HIDDEN = (128, 64, 32)


@dataclass
class OperatorModel:
    L_net: MlpParams
    F_net: MlpParams | None
    sigma: float
    p: int = 1
    M: int = 1
    h: int = 1
    d: int = 2
    lam: float = DEFAULT_RIDGE

    def __post_init__(self):
        self.sigma = float(self.sigma)
        self.validate()

    def validate(self):
        if min(self.p, self.M, self.h, self.d) < 1:
            raise ValidationError("p, M, h and d must all be positive")
        if self.L_net.layer_sizes[0] != 2 * self.d + 1:
            raise ValidationError(f"L_net input width must be 2d+1 = {2 * self.d + 1}")
        if self.L_net.layer_sizes[-1] != self.h:
            raise ValidationError(f"L_net output width must be h = {self.h}")
        if self.F_net is None:
            if self.h != 1:
                raise ValidationError("the linear variant (no F_net) requires h = 1")
        else:
            if self.F_net.layer_sizes[0] != self.M * self.h:
                raise ValidationError(f"F_net input width must be M*h = {self.M * self.h}")
            if self.F_net.layer_sizes[-1] != self.M:
                raise ValidationError(f"F_net output width must be M = {self.M}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.lam < 0:
            raise ValidationError("ridge parameter must be nonnegative")

    @property
    def kernel(self) -> RbfKernel:
        return RbfKernel(self.sigma)

    @property
    def linear(self) -> bool:
        return self.F_net is None

    @classmethod
    def create(cls, d=2, M=1, h=16, p=1, sigma=0.5, linear=False, seed=0, lam=DEFAULT_RIDGE,
               l_hidden=L_HIDDEN, f_hidden=F_HIDDEN) -> "OperatorModel":
        """Freshly initialized model; ``linear=True`` forces ``h = 1`` and drops ``F``."""
        rng = np.random.default_rng(seed)
        if linear:
            h = 1
        L_net = init_mlp([2 * d + 1, *l_hidden, h], rng)
        F_net = None if linear else init_mlp([M * h, *f_hidden, M], rng)
        return cls(L_net, F_net, sigma, p, M, h, d, lam)

    def parameters(self) -> list:
        """Trainable arrays: ``L`` layers, then ``F`` layers, then ``[sigma]``."""
        arrays = self.L_net.arrays()
        if self.F_net is not None:
            arrays += self.F_net.arrays()
        return arrays + [np.array([self.sigma])]

    def with_parameters(self, arrays) -> "OperatorModel":
        n_l = 2 * len(self.L_net.weights)
        L_net = MlpParams.from_arrays(arrays[:n_l])
        F_net = None if self.F_net is None else MlpParams.from_arrays(arrays[n_l:-1])
        return OperatorModel(L_net, F_net, float(arrays[-1][0]), self.p, self.M, self.h, self.d, self.lam)

    def copy(self) -> "OperatorModel":
        return self.with_parameters([a.copy() for a in self.parameters()])


# --- derivative features ---------------------------------------------------

def pair_inputs(kernel: RbfKernel, eval_sites, centers):
    """Rows ``[x_i, x_j, phi(|x_i - x_j|)]`` for all pairs, ``i`` major."""
    a = np.atleast_2d(np.asarray(eval_sites, dtype=float))
    b = np.atleast_2d(np.asarray(centers, dtype=float))
    r = distances(a, b)
    ne, nc = r.shape
    rows = np.empty((ne, nc, 2 * a.shape[1] + 1))
    rows[:, :, : a.shape[1]] = a[:, None, :]
    rows[:, :, a.shape[1]: -1] = b[None, :, :]
    rows[:, :, -1] = kernel(r)
    return rows.reshape(ne * nc, -1), r


def derivative_features(model: OperatorModel, x_i, x_j) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape != (model.d,) or x_j.shape != (model.d,):
        raise ValidationError(f"coordinates must have dimension {model.d}")
    phi = model.kernel(np.linalg.norm(x_i - x_j))
    out, _ = mlp_forward(model.L_net, np.concatenate([x_i, x_j, [phi]]))
    return out


def d_tensor_forward(model: OperatorModel, eval_sites, centers):
    """Derivative tensor plus what :func:`d_tensor_backward` needs."""
    rows, r = pair_inputs(model.kernel, eval_sites, centers)
    if rows.shape[1] != 2 * model.d + 1:
        raise ValidationError(f"sites must have dimension {model.d}")
    out, cache = mlp_forward(model.L_net, rows)
    ne, nc = r.shape
    # contiguous so later contractions over centers do not copy
    D = np.ascontiguousarray(out.reshape(ne, nc, model.h).transpose(2, 0, 1))
    return D, {"mlp": cache, "r": r}


def d_tensor_backward(model: OperatorModel, cache, grad_D):
    """Gradients of ``sum(grad_D * D)`` w.r.t. ``L`` and the kernel value of each pair.

    Returns ``(weight_grads, bias_grads, grad_phi)`` with ``grad_phi`` shaped
    like the pair distance matrix.
    """
    h, ne, nc = grad_D.shape
    upstream = grad_D.transpose(1, 2, 0).reshape(ne * nc, h)
    dw, db, dx = mlp_backward(model.L_net, cache["mlp"], upstream)
    return dw, db, dx[:, -1].reshape(ne, nc)


def assemble_d_tensor(model: OperatorModel, eval_sites, centers, leave_out=None) -> np.ndarray:
    """``D[r, i, j]`` = feature ``r`` of the pair (eval site ``i``, center ``j``).

    With ``leave_out=l`` the column of center ``l`` is dropped.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if leave_out is not None:
        centers = np.delete(centers, leave_out, axis=0)
    D, _ = d_tensor_forward(model, eval_sites, centers)
    return D


# --- right-hand side ---------------------------------------------------------

def _as_matrix(u):
    u = np.asarray(u, dtype=float)
    return u[:, None] if u.ndim == 1 else u


def features_from_coefficients(D, C):
    """Per-site feature rows, variable-major: column ``m*h + r``."""
    h, n, _ = D.shape
    Z = np.tensordot(D, C, axes=([2], [0]))  # (h, n, M)
    return Z.transpose(1, 2, 0).reshape(n, C.shape[1] * h)


def rhs_from_coefficients(model: OperatorModel, D, C):
    Z = features_from_coefficients(D, C)
    if model.F_net is None:
        return Z, None
    out, cache = mlp_forward(model.F_net, Z)
    return out, cache


def rhs_backward(model: OperatorModel, D, C, f_cache, grad_rhs, pair_grad=True):
    """Returns ``(F weight grads, F bias grads, grad_D, grad_C)``; F grads are None for the linear variant.

    With ``pair_grad=False`` the third item is the feature gradient of shape
    ``(h, n, M)`` instead, so callers can batch the products ``gz @ C.T``.
    """
    h, n, _ = D.shape
    M = C.shape[1]
    if model.F_net is None:
        dwf = dbf = None
        grad_Z = grad_rhs
    else:
        dwf, dbf, grad_Z = mlp_backward(model.F_net, f_cache, grad_rhs)
    gz = grad_Z.reshape(n, M, h).transpose(2, 0, 1)  # (h, n, M)
    grad_C = np.tensordot(D, gz, axes=([0, 1], [0, 1]))
    return dwf, dbf, (gz @ C.T if pair_grad else gz), grad_C


def rhs_features(model: OperatorModel, D, phi, u, lam=None) -> np.ndarray:
    """``F(D Phi^{-1} u)`` at every evaluation site, shape ``(n_eval, M)``."""
    lam = model.lam if lam is None else lam
    u = _as_matrix(u)
    if D.shape[0] != model.h or D.shape[2] != np.shape(phi)[1]:
        raise ValidationError(f"D-tensor {D.shape} does not match Phi {np.shape(phi)} and h={model.h}")
    C = RidgeSolver(phi, lam).solve(u)
    rhs, _ = rhs_from_coefficients(model, D, C)
    return rhs


# --- time stepping -----------------------------------------------------------

def temporal_weights(p: int) -> np.ndarray:
    """``binom(p, q) (-1)**(q + 1)`` for ``q = 1..p``."""
    if p < 1:
        raise ValidationError("temporal order must be positive")
    return np.array([comb(p, q) * (-1) ** (q + 1) for q in range(1, p + 1)], dtype=float)


def temporal_update(history, rhs, p: int, dt: float) -> np.ndarray:
    """Next state from ``p`` frames (newest first) and the right-hand side."""
    history = np.asarray(history, dtype=float)
    if history.shape[0] != p:
        raise ValidationError(f"need exactly {p} history frames, got {history.shape[0]}")
    out = dt * np.asarray(rhs, dtype=float)
    for w, frame in zip(temporal_weights(p), history):
        out = out + w * frame
    return out


@dataclass(frozen=True)
class AnalyticOperator:
    """A known operator ``coefficient * Laplacian`` applied to the Gaussian kernel."""

    kernel: RbfKernel
    coefficient: float = 1.0

    def d_matrix(self, eval_sites, centers) -> np.ndarray:
        a = np.atleast_2d(np.asarray(eval_sites, dtype=float))
        return self.coefficient * self.kernel.laplacian(distances(a, centers), a.shape[1])


@dataclass
class StepMatrices:
    H: np.ndarray
    boundary_indices: np.ndarray
    dt: float


def build_h_matrix(operator, sites: SiteSet, dt: float, lam: float = DEFAULT_RIDGE) -> StepMatrices:
    """One-step transition ``I + dt D Phi^{-1}`` with boundary rows zeroed.

    ``operator`` is a linear first-order :class:`OperatorModel` or an
    :class:`AnalyticOperator`.
    """
    pts = sites.points
    if isinstance(operator, OperatorModel):
        if not operator.linear or operator.p != 1 or operator.M != 1:
            raise ValidationError("H-matrix needs the linear variant with p = 1 and M = 1")
        kernel = operator.kernel
        D = assemble_d_tensor(operator, pts, pts)[0]
    else:
        kernel = operator.kernel
        D = operator.d_matrix(pts, pts)
    S = RidgeSolver(assemble_phi(kernel, pts, pts), lam).solve(np.eye(sites.n))
    H = np.eye(sites.n) + dt * (D @ S)
    H[sites.boundary_indices] = 0.0
    return StepMatrices(H, sites.boundary_indices, dt)


def spectral_radius(H) -> float:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError("spectral radius needs a square matrix")
    if not np.all(np.isfinite(H)):
        raise ValidationError("matrix has non-finite entries")
    if H.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(H))))


def iterate_linear(H, g, u0, steps: int) -> np.ndarray:
    """Trajectory of ``u <- H u + g``; row ``k`` is the state after ``k`` steps."""
    out = np.empty((steps + 1, len(u0)))
    out[0] = u0
    for k in range(steps):
        out[k + 1] = H @ out[k] + g
    return out


# --- forecasting -------------------------------------------------------------

@dataclass
class ForecastResult:
    """Rolled-out predictions; row ``k`` of each trajectory is the state after ``k + 1`` steps."""

    times: np.ndarray
    sites: np.ndarray
    queries: np.ndarray | None = None
    snr_x: np.ndarray | None = None
    snr_omega: np.ndarray | None = None
    baseline_snr_x: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.times)


class Stepper:
    """Precomputed site-dependent matrices for repeated rollouts of one model."""

    def __init__(self, model: OperatorModel, sites: SiteSet, lam=None, queries=None):
        if sites.dim != model.d:
            raise ValidationError(f"sites are {sites.dim}-d, model is {model.d}-d")
        self.model = model
        self.sites = sites
        self.lam = model.lam if lam is None else lam
        pts = sites.points
        self.D, _ = d_tensor_forward(model, pts, pts)
        self.solver = RidgeSolver(assemble_phi(model.kernel, pts, pts), self.lam)
        self.query_phi = None if queries is None else assemble_phi(model.kernel, queries, pts)

    def coefficients(self, u):
        return self.solver.solve(u)

    def rhs(self, C):
        out, _ = rhs_from_coefficients(self.model, self.D, C)
        return out


def forecast(model: OperatorModel, sites: SiteSet, initial_frames, boundary: BoundarySpec,
             steps: int, dt: float, queries=None, lam=None, t0: float = 0.0,
             stepper: Stepper | None = None) -> ForecastResult:
    """Roll the model forward ``steps`` times from ``p`` seed frames.

    ``initial_frames`` has shape ``(p, N, M)`` in chronological order; its
    last frame is the state at time ``t0``.  Query points, if given, are
    evaluated from the RBF expansion of each predicted site state.
    """
    p, M = model.p, model.M
    frames = np.asarray(initial_frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[:, :, None]
    if frames.shape != (p, sites.n, M):
        raise ValidationError(f"initial frames must have shape {(p, sites.n, M)}, got {frames.shape}")
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    if stepper is None:
        stepper = Stepper(model, sites, lam, queries)
    bidx = sites.boundary_indices
    bpts = sites.points[bidx]

    history = [frames[k] for k in range(p - 1, -1, -1)]  # newest first
    site_traj = np.empty((steps, sites.n, M))
    query_traj = None if stepper.query_phi is None else np.empty((steps, stepper.query_phi.shape[0], M))
    times = t0 + dt * np.arange(1, steps + 1)
    try:
        C = stepper.coefficients(history[0])
    except SolverError as exc:
        raise SolverError(str(exc), step=0) from exc
    for k in range(steps):
        u_next = temporal_update(history, stepper.rhs(C), p, dt)
        u_next[bidx] = boundary.values(times[k], bpts, M)
        if not np.all(np.isfinite(u_next)):
            raise NumericalError("forecast produced non-finite values", step=k + 1)
        try:
            C = stepper.coefficients(u_next)
        except SolverError as exc:
            raise SolverError(str(exc), step=k + 1) from exc
        site_traj[k] = u_next
        if query_traj is not None:
            query_traj[k] = stepper.query_phi @ C
        history = [u_next] + history[:-1]
    return ForecastResult(times, site_traj, query_traj)
