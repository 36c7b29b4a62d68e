"""Bijection between constrained parameters and the real line.

Positive parameters (variances, the variance-likelihood scale) map through
``log``; everything else is identity.  The log-abs-det Jacobian of the
inverse map is the sum of the unconstrained coordinates under the log tag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataError


@dataclass(frozen=True)
class TransformMap:
    """Per-coordinate transform tags for one model's parameter vector."""

    log_mask: np.ndarray  # bool, shape (D,); True where the coordinate is log-transformed

    @property
    def dim(self) -> int:
        return int(self.log_mask.size)

    def unconstrain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vals = x[..., self.log_mask]
        if np.any(vals <= 0):
            raise DataError("log transform requires positive values")
        u = x.copy()
        u[..., self.log_mask] = np.log(vals)
        return u

    def constrain(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        x = u.copy()
        x[..., self.log_mask] = np.exp(u[..., self.log_mask])
        return x

    def log_jacobian(self, u: np.ndarray) -> np.ndarray:
        """log |d constrain(u) / du|, summed over coordinates."""
        u = np.asarray(u, dtype=float)
        return u[..., self.log_mask].sum(axis=-1)
