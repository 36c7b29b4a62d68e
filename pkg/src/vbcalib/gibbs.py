"""Conjugate Gibbs sampler for the known-variance model.

Serves as the exact-inference reference: full conditionals are available
in closed form, so the kept draws characterize the true posterior up to
Monte Carlo error.  Only conjugate hyperpriors are supported -- a normal
prior on the coefficients and an inverse-gamma prior on the random-effect
variance.  When the default half-normal variance prior is requested the
sampler substitutes a weakly informative inverse-gamma and flags the
substitution in the fit notes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .advi import PosteriorFit
from .data import DataError, Dataset
from .models import FixedHypers
from .priors import HyperPriorSpec

DEFAULT_TAU_IG = (1.0, 1.0)  # shape, scale used when substituting the half-normal prior


class UnsupportedPriorError(DataError):
    """Requested hyperprior has no conjugate update."""


@dataclass(frozen=True)
class GibbsConfig:
    n_iters: int = 6000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_iters:
            raise DataError("burn_in must be smaller than n_iters")
        if self.thin < 1:
            raise DataError("thin must be >= 1")


def _resolve_priors(hyper: HyperPriorSpec) -> tuple[tuple[float, float], tuple[float, float], str | None]:
    if hyper.beta.family != "normal":
        raise UnsupportedPriorError(
            f"gibbs sampler requires a normal prior on beta, got '{hyper.beta.family}'"
        )
    beta_prior = hyper.beta.params
    substitution = None
    if hyper.tau_u2.family == "inverse_gamma":
        tau_prior = hyper.tau_u2.params
    elif hyper.tau_u2.family == "half_normal_sd":
        tau_prior = DEFAULT_TAU_IG
        substitution = (
            f"tau_u2 prior half_normal_sd{hyper.tau_u2.params} replaced by "
            f"inverse_gamma{DEFAULT_TAU_IG} for conjugacy"
        )
    else:
        raise UnsupportedPriorError(
            f"gibbs sampler requires an inverse-gamma (or substitutable half-normal) "
            f"prior on tau_u2, got '{hyper.tau_u2.family}'"
        )
    return beta_prior, tau_prior, substitution


def gibbs_fit_fh(
    data: Dataset,
    hyper: HyperPriorSpec,
    config: GibbsConfig,
    fixed: FixedHypers | None = None,
    seed: int | None = None,
) -> PosteriorFit:
    """Sample the known-variance model posterior by cycling full conditionals.

    Returns the same fit container as the variational estimator so the
    calibration pipeline can wrap either interchangeably.
    """
    if np.any(data.v <= 0):
        raise DataError("gibbs sampler requires positive v in every domain")
    run_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)
    n, p = data.n_domains, data.p_x
    y, v, x = data.y, data.v, data.x

    notes = {}
    if fixed is None:
        (beta_loc, beta_scale), (tau_shape, tau_scale), substitution = _resolve_priors(hyper)
        if substitution:
            notes["prior_substitution"] = substitution
        xtx = x.T @ x
        beta = np.linalg.lstsq(x, y, rcond=None)[0] if n >= p else np.zeros(p)
        tau2 = 1.0
    else:
        beta = fixed.beta
        tau2 = fixed.tau_u2

    theta = y.copy()
    n_kept = (config.n_iters - config.burn_in + config.thin - 1) // config.thin
    dim = n if fixed is not None else n + p + 1
    draws = np.empty((n_kept, dim))
    kept = 0

    for it in range(config.n_iters):
        shrink = tau2 / (tau2 + v)
        xb = x @ beta
        mean = shrink * y + (1.0 - shrink) * xb
        theta = mean + np.sqrt(shrink * v) * rng.standard_normal(n)

        if fixed is None:
            precision = xtx / tau2 + np.eye(p) / beta_scale**2
            rhs = x.T @ theta / tau2 + beta_loc / beta_scale**2
            chol = np.linalg.cholesky(precision)
            mean_beta = np.linalg.solve(precision, rhs)
            beta = mean_beta + np.linalg.solve(chol.T, rng.standard_normal(p))

            resid = theta - x @ beta
            shape = tau_shape + 0.5 * n
            scale = tau_scale + 0.5 * float(resid @ resid)
            tau2 = scale / rng.gamma(shape)

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            if fixed is None:
                draws[kept, :n] = theta
                draws[kept, n : n + p] = beta
                draws[kept, n + p] = tau2
            else:
                draws[kept] = theta
            kept += 1

    draws = draws[:kept]
    param_names = [f"theta[{i}]" for i in data.domain_id]
    if fixed is None:
        param_names += [f"beta[{j}]" for j in range(p)] + ["tau_u2"]

    return PosteriorFit(
        model_kind="fh",
        estimator="gibbs",
        param_names=param_names,
        n_domains=n,
        p_x=p,
        p_z=data.p_z,
        draws=draws,
        m=draws.mean(axis=0),
        v=draws.var(axis=0, ddof=1),
        converged=True,
        theta_slice=slice(0, n),
        fixed=fixed,
        n_iters=config.n_iters,
        notes=notes,
        config={
            "estimator": "gibbs",
            "seed": run_seed,
            "n_iters": config.n_iters,
            "burn_in": config.burn_in,
            "thin": config.thin,
        },
    )
