"""Hyperprior specifications for the top-level model parameters.

Each entry names a distribution family and its parameters.  Regression
coefficients get independent normal priors per coordinate; variance-type
parameters use a half-normal prior on the standard-deviation scale (the
density below is expressed for the variance itself, Jacobian included);
positive scale parameters use a plain half-normal.  A ``flat`` family
(log-density zero) is supported for density evaluation only -- variational
fitting requires proper priors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .data import DataError

_LOG_2PI = float(np.log(2.0 * np.pi))
_FAMILIES = ("normal", "half_normal", "half_normal_sd", "inverse_gamma", "flat")


@dataclass(frozen=True)
class PriorSpec:
    """One prior: a family tag plus its numeric parameters."""

    family: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise DataError(f"unknown prior family '{self.family}'")
        scales = {
            "normal": (1,),
            "half_normal": (0,),
            "half_normal_sd": (0,),
            "inverse_gamma": (0, 1),
        }.get(self.family, ())
        for idx in scales:
            if self.params[idx] <= 0:
                raise DataError(f"{self.family} prior: parameter {idx} must be positive")


def log_density(spec: PriorSpec, value) -> np.ndarray:
    """Elementwise log prior density; caller sums over coordinates."""
    x = np.asarray(value, dtype=float)
    if spec.family == "normal":
        loc, scale = spec.params
        return -0.5 * _LOG_2PI - np.log(scale) - (x - loc) ** 2 / (2.0 * scale**2)
    if spec.family == "half_normal":
        (scale,) = spec.params
        return 0.5 * np.log(2.0 / np.pi) - np.log(scale) - x**2 / (2.0 * scale**2)
    if spec.family == "half_normal_sd":
        # density for a variance whose square root is half-normal(scale)
        (scale,) = spec.params
        return (
            0.5 * np.log(2.0 / np.pi)
            - np.log(scale)
            - x / (2.0 * scale**2)
            - np.log(2.0)
            - 0.5 * np.log(x)
        )
    if spec.family == "inverse_gamma":
        shape, scale = spec.params
        return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    return np.zeros_like(x)  # flat


def grad_log_density(spec: PriorSpec, value) -> np.ndarray:
    """Elementwise derivative of :func:`log_density` with respect to value."""
    x = np.asarray(value, dtype=float)
    if spec.family == "normal":
        loc, scale = spec.params
        return -(x - loc) / scale**2
    if spec.family == "half_normal":
        (scale,) = spec.params
        return -x / scale**2
    if spec.family == "half_normal_sd":
        (scale,) = spec.params
        return -1.0 / (2.0 * scale**2) - 1.0 / (2.0 * x)
    if spec.family == "inverse_gamma":
        shape, scale = spec.params
        return -(shape + 1.0) / x + scale / x**2
    return np.zeros_like(x)


@dataclass(frozen=True)
class HyperPriorSpec:
    """Priors for the global parameters of the area-level models.

    Defaults are weakly informative: coefficients N(0, 10^2), random-effect
    variance half-normal(5) on the sd scale, variance-likelihood scale
    half-normal(5), variance-model coefficients N(0, 1).
    """

    beta: PriorSpec = field(default_factory=lambda: PriorSpec("normal", (0.0, 10.0)))
    tau_u2: PriorSpec = field(default_factory=lambda: PriorSpec("half_normal_sd", (5.0,)))
    a: PriorSpec = field(default_factory=lambda: PriorSpec("half_normal", (5.0,)))
    gamma: PriorSpec = field(default_factory=lambda: PriorSpec("normal", (0.0, 1.0)))


FLAT_HYPERPRIORS = HyperPriorSpec(
    beta=PriorSpec("flat"),
    tau_u2=PriorSpec("flat"),
    a=PriorSpec("flat"),
    gamma=PriorSpec("flat"),
)
