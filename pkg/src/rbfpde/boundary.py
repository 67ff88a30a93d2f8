"""Dirichlet boundary presets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PRESETS = ("zero", "angular")
ANGULAR_AMPLITUDE = 0.2


@dataclass(frozen=True)
class BoundarySpec:
    """A named Dirichlet boundary-value function ``g(t, x)``.

    ``zero``: ``g = 0``.  ``angular``: ``g = 0.2 sin(atan2(x2, x1))``,
    constant in time and applied to every variable.
    """

    preset: str = "zero"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValidationError(f"unknown boundary preset {self.preset!r}; expected one of {PRESETS}")

    def values(self, t, points, n_vars: int = 1) -> np.ndarray:
        """Boundary values at ``points`` (shape ``(b, d)``) as a ``(b, n_vars)`` array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.preset == "zero" or pts.shape[0] == 0:
            col = np.zeros(pts.shape[0])
        else:
            if pts.shape[1] < 2:
                raise ValidationError("the angular preset needs at least two coordinates")
            col = ANGULAR_AMPLITUDE * np.sin(np.arctan2(pts[:, 1], pts[:, 0]))
        return np.repeat(col[:, None], n_vars, axis=1)


def boundary_value(spec: BoundarySpec, t, x, n_vars: int = 1) -> np.ndarray:
    """Value of each variable at a single boundary point ``x``."""
    return spec.values(t, np.asarray(x, dtype=float)[None, :], n_vars)[0]
