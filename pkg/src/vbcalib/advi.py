"""Mean-field Gaussian variational estimator.

The posterior is approximated by a fully factorized normal on the
unconstrained parameter space.  A Monte Carlo evidence-lower-bound estimate
is maximized by stochastic gradient ascent with reparameterization
gradients and a per-coordinate RMS-style adaptive step.  Posterior
summaries are computed from draws of the fitted approximation mapped back
to the constrained space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataError
from .models import FixedHypers, Model

_LOG_2PI = float(np.log(2.0 * np.pi))

# Robbins-Monro annealing horizon: the base step decays as 1/sqrt(1 + t/T0)
# so late iterations settle instead of bouncing in a stationary band.
_ANNEAL_T0 = 300.0


class FitDivergenceError(RuntimeError):
    """Raised when the objective stays non-finite for a full window."""


class EvaluationError(RuntimeError):
    """Non-finite log joint at a sampled point; carries the offending sample."""

    def __init__(self, message: str, sample: np.ndarray):
        super().__init__(message)
        self.sample = sample


@dataclass(frozen=True)
class AdviConfig:
    """Optimizer settings.

    ``step_size`` is the base step of the RMS rule (squared-gradient
    accumulator with decay 0.9, epsilon 1e-8).  The stop rule evaluates the
    objective every ``elbo_window`` iterations with ``n_elbo_samples``
    common random numbers fixed at the start of the run, and stops when the
    relative change between consecutive evaluations falls below
    ``rel_tol``.
    """

    n_grad_samples: int = 10
    step_size: float = 0.2
    max_iters: int = 20_000
    elbo_window: int = 100
    rel_tol: float = 1e-4
    n_elbo_samples: int = 100
    n_posterior_draws: int = 1000
    init_omega: float = -1.0
    omega_step_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_grad_samples < 1 or self.n_elbo_samples < 1 or self.n_posterior_draws < 2:
            raise DataError("sample counts must be positive (>= 2 posterior draws)")
        if self.step_size <= 0 or self.max_iters < 1 or self.elbo_window < 1:
            raise DataError("step_size, max_iters and elbo_window must be positive")
        if not 0 < self.rel_tol < 1:
            raise DataError("rel_tol must lie in (0, 1)")
        if not np.isfinite(self.init_omega):
            raise DataError("init_omega must be finite")
        # zero freezes the scales at init_omega: a fixed-width variational
        # family whose means are still fitted (crude but consistent
        # uncertainty, the case interval calibration exists to repair)
        if self.omega_step_scale < 0:
            raise DataError("omega_step_scale must be nonnegative")


@dataclass
class VariationalParams:
    """Means and log standard deviations of the factorized Gaussian."""

    mu: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        if self.mu.shape != self.omega.shape:
            raise DataError("mu and omega must have equal length")


@dataclass
class PosteriorFit:
    """Fitted posterior summary shared by the variational and exact estimators.

    ``draws`` live on the constrained space; ``m`` and ``v`` are the sample
    mean and variance of the draw columns (they are defined from the draws,
    not from the variational parameters).
    """

    model_kind: str
    estimator: str
    param_names: list[str]
    n_domains: int
    p_x: int
    p_z: int
    draws: np.ndarray
    m: np.ndarray
    v: np.ndarray
    converged: bool
    theta_slice: slice
    fixed: FixedHypers | None = None
    variational: VariationalParams | None = None
    elbo_trace: np.ndarray | None = None
    n_iters: int = 0
    final_elbo: float = math.nan
    config: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def theta_m(self) -> np.ndarray:
        return self.m[self.theta_slice]

    @property
    def theta_v(self) -> np.ndarray:
        return self.v[self.theta_slice]

    @property
    def theta_draws(self) -> np.ndarray:
        return self.draws[:, self.theta_slice]

    def summaries_from_draws(self) -> tuple[np.ndarray, np.ndarray]:
        return self.draws.mean(axis=0), self.draws.var(axis=0, ddof=1)


def entropy(omega: np.ndarray) -> float:
    """Closed-form entropy of the factorized Gaussian."""
    omega = np.asarray(omega, dtype=float)
    return float(omega.sum() + 0.5 * omega.size * (1.0 + _LOG_2PI))


def elbo_with_noise(model: Model, vp: VariationalParams, eta: np.ndarray) -> float:
    """Objective value at fixed standard-normal noise ``eta`` (rows = samples)."""
    u = vp.mu + np.exp(vp.omega) * eta
    lp = model.logp_u(u)
    return float(lp.mean() + entropy(vp.omega))


def elbo_estimate(model: Model, vp: VariationalParams, n_samples: int, rng: np.random.Generator) -> float:
    """Unbiased Monte Carlo estimate of the evidence lower bound."""
    eta = rng.standard_normal((n_samples, vp.mu.size))
    u = vp.mu + np.exp(vp.omega) * eta
    lp = model.logp_u(u)
    bad = ~np.isfinite(lp)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise EvaluationError("non-finite log joint at a sampled point", u[idx])
    return float(lp.mean() + entropy(vp.omega))


def gradient_with_noise(
    model: Model, vp: VariationalParams, eta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Reparameterization gradient at fixed noise; also returns the objective.

    With u = mu + exp(omega) * eta the chain rule gives
    d/d mu   = mean over samples of the unconstrained-space gradient, and
    d/d omega = mean of (gradient * exp(omega) * eta) plus the entropy
    term +1 per coordinate.
    """
    scaled = np.exp(vp.omega) * eta
    u = vp.mu + scaled
    lp, grad_u = model.logp_grad_u(u)
    inv_n = 1.0 / lp.shape[0]
    g_mu = grad_u.sum(axis=0)
    g_mu *= inv_n
    g_omega = np.einsum("sd,sd->d", grad_u, scaled)
    g_omega *= inv_n
    g_omega += 1.0
    value = float(lp.sum() * inv_n + entropy(vp.omega))
    return g_mu, g_omega, value


def elbo_gradient(
    model: Model, vp: VariationalParams, n_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    eta = rng.standard_normal((n_samples, vp.mu.size))
    g_mu, g_omega, value = gradient_with_noise(model, vp, eta)
    if not np.isfinite(value):
        u = vp.mu + np.exp(vp.omega) * eta
        raise EvaluationError("non-finite log joint at a sampled point", u[0])
    return g_mu, g_omega


def fit(model: Model, config: AdviConfig, seed: int | None = None) -> PosteriorFit:
    """Run stochastic gradient ascent and return the fitted posterior.

    Deterministic given the seed: the noise stream is consumed in a fixed
    order (stop-rule noise first, then one gradient batch per iteration,
    then the posterior draws).
    """
    run_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)
    dim = model.dim

    eta_stop = rng.standard_normal((config.n_elbo_samples, dim))
    mu = np.zeros(dim)
    omega = np.full(dim, config.init_omega)
    acc_mu = np.zeros(dim)
    acc_omega = np.zeros(dim)
    window_mu = np.zeros(dim)
    window_omega = np.zeros(dim)
    window_count = 0

    trace = np.empty(config.max_iters)
    nonfinite_run = 0
    previous_stop = None
    converged = False
    iters_run = 0
    final_elbo = math.nan

    for it in range(config.max_iters):
        eta = rng.standard_normal((config.n_grad_samples, dim))
        vp = VariationalParams(mu, omega)
        # non-finite values are handled by the divergence counter below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            g_mu, g_omega, value = gradient_with_noise(model, vp, eta)
        trace[it] = value
        iters_run = it + 1

        if not (np.isfinite(value) and np.isfinite(g_mu.sum() + g_omega.sum())):
            nonfinite_run += 1
            if nonfinite_run >= config.elbo_window:
                raise FitDivergenceError(
                    f"objective non-finite for {nonfinite_run} consecutive iterations (at iteration {it + 1})"
                )
            continue
        nonfinite_run = 0

        acc_mu = 0.9 * acc_mu + 0.1 * g_mu**2
        acc_omega = 0.9 * acc_omega + 0.1 * g_omega**2
        step = config.step_size / np.sqrt(1.0 + it / _ANNEAL_T0)
        mu = mu + step * g_mu / (np.sqrt(acc_mu) + 1e-8)
        omega = omega + config.omega_step_scale * step * g_omega / (np.sqrt(acc_omega) + 1e-8)
        window_mu += mu
        window_omega += omega
        window_count += 1

        if (it + 1) % config.elbo_window == 0:
            current = elbo_with_noise(model, VariationalParams(mu, omega), eta_stop)
            if np.isfinite(current):
                final_elbo = current
                if previous_stop is not None:
                    rel_change = abs(current - previous_stop) / (abs(previous_stop) + 1e-12)
                    if rel_change < config.rel_tol:
                        converged = True
                        break
                previous_stop = current
            if it + 1 < config.max_iters:
                window_mu[:] = 0.0
                window_omega[:] = 0.0
                window_count = 0

    # iterate average over the final window smooths stochastic-gradient jitter
    if window_count > 0:
        mu = window_mu / window_count
        omega = window_omega / window_count
    vp = VariationalParams(mu, omega)
    draws_u = mu + np.exp(omega) * rng.standard_normal((config.n_posterior_draws, dim))
    draws = model.constrain(draws_u)
    m = draws.mean(axis=0)
    v = draws.var(axis=0, ddof=1)

    return PosteriorFit(
        model_kind=model.kind,
        estimator="vb",
        param_names=list(model.param_names),
        n_domains=model.data.n_domains,
        p_x=model.data.p_x,
        p_z=model.data.p_z,
        draws=draws,
        m=m,
        v=v,
        converged=converged,
        theta_slice=model.theta_slice,
        fixed=model.fixed,
        variational=vp,
        elbo_trace=trace[:iters_run].copy(),
        n_iters=iters_run,
        final_elbo=final_elbo,
        config={"estimator": "vb", "seed": run_seed, **_config_dict(config)},
    )


def _config_dict(config: AdviConfig) -> dict:
    return {
        "n_grad_samples": config.n_grad_samples,
        "step_size": config.step_size,
        "max_iters": config.max_iters,
        "elbo_window": config.elbo_window,
        "rel_tol": config.rel_tol,
        "n_elbo_samples": config.n_elbo_samples,
        "n_posterior_draws": config.n_posterior_draws,
        "init_omega": config.init_omega,
        "omega_step_scale": config.omega_step_scale,
    }
