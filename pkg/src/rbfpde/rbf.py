"""Gaussian RBF evaluation, interpolation matrices and regularized solves.

The kernel is ``phi(r) = exp(-r**2 / (2 sigma**2))``.  Coefficients are
obtained from the ridge problem ``min |Phi c - u|^2 + lam |c|^2``; with
``lam == 0`` and a square matrix this is the exact interpolation solve.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .errors import SolverError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-4
COND_WARN = 1e12


@dataclass(frozen=True)
class RbfKernel:
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValidationError(f"shape parameter must be positive, got {self.sigma}")

    def __call__(self, r):
        return np.exp(-np.square(r) / (2.0 * self.sigma**2))

    def dsigma(self, r):
        """Derivative of the kernel value with respect to ``sigma``."""
        r2 = np.square(r)
        return np.exp(-r2 / (2.0 * self.sigma**2)) * r2 / self.sigma**3

    def laplacian(self, r, dim: int):
        """Closed-form Laplacian of the kernel in ``dim`` dimensions."""
        s2 = self.sigma**2
        return self(r) * (np.square(r) - dim * s2) / s2**2


def kernel_value(kernel: RbfKernel, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValidationError("radius must be nonnegative")
    out = kernel(r)
    return float(out) if out.ndim == 0 else out


def distances(eval_points, centers) -> np.ndarray:
    a = np.atleast_2d(np.asarray(eval_points, dtype=float))
    b = np.atleast_2d(np.asarray(centers, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b)


def assemble_phi(kernel: RbfKernel, eval_points, centers) -> np.ndarray:
    """Interpolation matrix with entry ``(i, j) = phi(|eval_i - center_j|)``."""
    return kernel(distances(eval_points, centers))


def default_sigma(points) -> float:
    """Twice the mean nearest-neighbour distance between ``points``."""
    d = distances(points, points)
    np.fill_diagonal(d, np.inf)
    return 2.0 * float(np.mean(d.min(axis=1)))


class RidgeSolver:
    """Factor ``Phi`` once, then solve and differentiate the ridge problem.

    ``lam > 0`` uses a Cholesky factorization of the normal matrix and
    falls back to a column-pivoted QR of the augmented system.  ``lam == 0``
    uses LU for square matrices (exact interpolation) and pivoted QR
    otherwise.
    """

    def __init__(self, phi, lam: float = DEFAULT_RIDGE):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 2:
            raise ValidationError("interpolation matrix must be 2-d")
        if not np.all(np.isfinite(phi)):
            raise ValidationError("interpolation matrix has non-finite entries")
        if lam < 0 or not np.isfinite(lam):
            raise ValidationError("ridge parameter must be a nonnegative number")
        self.phi = phi
        self.lam = float(lam)
        n_rows, n_cols = phi.shape

        if self.lam == 0.0 and n_rows == n_cols:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(phi)
            rcond, info = sla.lapack.dgecon(self._lu[0], np.linalg.norm(phi, 1), norm="1")
            if info != 0 or rcond < np.finfo(float).eps:
                raise SolverError("interpolation matrix is singular to working precision")
            self.rcond = rcond
            self.mode = "lu"
            return

        if self.lam > 0.0:
            normal = phi.T @ phi
            normal[np.diag_indices(n_cols)] += self.lam
            try:
                self._chol = sla.cho_factor(normal, lower=True, check_finite=False)
                self.mode = "chol"
                return
            except np.linalg.LinAlgError:
                logger.debug("Cholesky failed, using pivoted QR")
            system = np.vstack([phi, np.sqrt(self.lam) * np.eye(n_cols)])
        else:
            if n_rows < n_cols:
                raise SolverError("underdetermined system needs a positive ridge parameter")
            system = phi
        q, r, piv = sla.qr(system, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        if diag.size == 0 or diag.min() <= np.finfo(float).eps * diag.max() * max(system.shape):
            raise SolverError("least-squares system is rank deficient")
        self._q, self._r, self._piv = q, r, piv
        self.mode = "qr"

    def _check_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.phi.shape[0]:
            raise ValidationError(
                f"values have {values.shape[0]} rows, interpolation matrix has {self.phi.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("values must be finite")
        return values

    def solve(self, values) -> np.ndarray:
        values = self._check_values(values)
        if self.mode == "lu":
            return sla.lu_solve(self._lu, values)
        if self.mode == "chol":
            return sla.cho_solve(self._chol, self.phi.T @ values, check_finite=False)
        rhs = values
        if self.lam > 0:
            pad = np.zeros((self.phi.shape[1],) + values.shape[1:])
            rhs = np.concatenate([values, pad])
        z = sla.solve_triangular(self._r, self._q.T @ rhs)
        out = np.empty_like(z)
        out[self._piv] = z
        return out

    def normal_inverse(self, b) -> np.ndarray:
        """Apply ``(Phi^T Phi + lam I)^{-1}``."""
        if self.mode == "lu":
            y = sla.lu_solve(self._lu, b, trans=1)
            return sla.lu_solve(self._lu, y)
        if self.mode == "chol":
            return sla.cho_solve(self._chol, b, check_finite=False)
        y = sla.solve_triangular(self._r, b[self._piv], trans="T")
        z = sla.solve_triangular(self._r, y)
        out = np.empty_like(z)
        out[self._piv] = z
        return out

    def backward(self, grad_c, c, values):
        """Pull a gradient on the solution back to ``Phi`` and ``values``.

        With ``A = Phi^T Phi + lam I`` and ``c = A^{-1} Phi^T u``, a loss
        gradient ``g`` on ``c`` gives ``du = Phi w`` and
        ``dPhi = (u - Phi c) w^T - (Phi w) c^T`` where ``w = A^{-1} g``.
        """
        w = self.normal_inverse(np.asarray(grad_c, dtype=float))
        phi_w = self.phi @ w
        resid = np.asarray(values, dtype=float) - self.phi @ c
        if w.ndim == 1:
            grad_phi = np.outer(resid, w) - np.outer(phi_w, c)
        else:
            grad_phi = resid @ w.T - phi_w @ c.T
        return grad_phi, phi_w


def solve_coefficients(phi, values, lam: float = DEFAULT_RIDGE) -> np.ndarray:
    """Ridge-regularized RBF coefficients; one column per variable for 2-d ``values``."""
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValidationError("interpolation matrix has non-finite entries")
    solver = RidgeSolver(phi, lam)
    if solver.mode == "lu":
        cond = 1.0 / solver.rcond
    else:
        cond = np.linalg.cond(phi)
    if cond > COND_WARN:
        logger.warning("interpolation matrix condition number %.3g exceeds %.0e", cond, COND_WARN)
    return solver.solve(values)


def eval_interpolant(kernel: RbfKernel, centers, c, x):
    """Evaluate ``sum_j c_j phi(|x - x_j|)`` at one point or a batch of points."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    c = np.asarray(c, dtype=float)
    if c.shape[0] != len(centers):
        raise ValidationError("coefficient count does not match the number of centers")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = assemble_phi(kernel, np.atleast_2d(x), centers) @ c
    if single:
        out = out[0]
        return float(out) if np.ndim(out) == 0 else out
    return out
