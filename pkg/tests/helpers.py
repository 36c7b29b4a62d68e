"""Small mock models, estimators and numeric oracles shared by test modules."""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from vbcalib.advi import PosteriorFit, VariationalParams, elbo_with_noise, gradient_with_noise
from vbcalib.models import FixedHypers

_LOG_2PI = float(np.log(2.0 * np.pi))


def finite_difference_gradient(model, vp: VariationalParams, eta: np.ndarray, h: float = 1e-5):
    """Central differences of the fixed-noise objective, coordinate by coordinate."""
    dim = vp.mu.size
    g_mu = np.empty(dim)
    g_omega = np.empty(dim)
    for d in range(dim):
        bump = np.zeros(dim)
        bump[d] = h
        hi = elbo_with_noise(model, VariationalParams(vp.mu + bump, vp.omega), eta)
        lo = elbo_with_noise(model, VariationalParams(vp.mu - bump, vp.omega), eta)
        g_mu[d] = (hi - lo) / (2.0 * h)
        hi = elbo_with_noise(model, VariationalParams(vp.mu, vp.omega + bump), eta)
        lo = elbo_with_noise(model, VariationalParams(vp.mu, vp.omega - bump), eta)
        g_omega[d] = (hi - lo) / (2.0 * h)
    return g_mu, g_omega


def relative_gradient_error(model, vp: VariationalParams, eta: np.ndarray) -> float:
    """Norm-relative disagreement between analytic and numeric gradients."""
    g_mu, g_omega, _ = gradient_with_noise(model, vp, eta)
    fd_mu, fd_omega = finite_difference_gradient(model, vp, eta)
    analytic = np.concatenate([g_mu, g_omega])
    numeric = np.concatenate([fd_mu, fd_omega])
    return float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))


class StdNormalModel:
    """D independent standard-normal coordinates; no data, no transforms."""

    kind = "toy"

    def __init__(self, dim: int = 1):
        self.dim = dim
        self.fixed = None
        self.param_names = [f"u[{d}]" for d in range(dim)]
        self.theta_slice = slice(0, dim)
        self.data = SimpleNamespace(n_domains=dim, p_x=0, p_z=0)

    def logp_u(self, u):
        u = np.atleast_2d(u)
        return -0.5 * (self.dim * _LOG_2PI + (u**2).sum(axis=1))

    def logp_grad_u(self, u):
        u = np.atleast_2d(u)
        return self.logp_u(u), -u

    def constrain(self, u):
        return np.asarray(u, dtype=float)


class ExplodingModel(StdNormalModel):
    """Always returns a non-finite objective."""

    def logp_grad_u(self, u):
        u = np.atleast_2d(u)
        return np.full(u.shape[0], np.nan), np.full_like(u, np.nan)

    def logp_u(self, u):
        u = np.atleast_2d(u)
        return np.full(u.shape[0], np.nan)


@dataclass(frozen=True)
class DirectEstimator:
    """Mock estimator whose posterior is N(y_i, v_i) per domain.

    Exactly translation-equivariant, consistent, and fast; useful for
    pipeline-level invariants that must hold bit-for-bit.
    """

    n_draws: int = 400

    def fit(self, data, seed: int | None = None) -> PosteriorFit:
        rng = np.random.default_rng(0 if seed is None else seed)
        n = data.n_domains
        draws = data.y + np.sqrt(data.v) * rng.standard_normal((self.n_draws, n))
        return PosteriorFit(
            model_kind="fh",
            estimator="mock-direct",
            param_names=[f"theta[{i}]" for i in data.domain_id],
            n_domains=n,
            p_x=data.p_x,
            p_z=data.p_z,
            draws=draws,
            m=draws.mean(axis=0),
            v=draws.var(axis=0, ddof=1),
            converged=True,
            theta_slice=slice(0, n),
            fixed=FixedHypers(beta=np.zeros(max(data.p_x, 1)), tau_u2=1.0),
        )


@dataclass(frozen=True)
class FlakyEstimator:
    """Wraps another estimator and fails on chosen replicate seeds."""

    inner: object
    fail_seeds: frozenset

    def fit(self, data, seed: int | None = None) -> PosteriorFit:
        if seed in self.fail_seeds:
            from vbcalib.advi import FitDivergenceError

            raise FitDivergenceError("injected failure")
        return self.inner.fit(data, seed=seed)
