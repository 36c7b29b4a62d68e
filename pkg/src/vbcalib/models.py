"""Area-level generative models: log-joint densities, simulation, and
posterior-predictive replication.

Two models are implemented.  The basic one treats the direct variance
estimates as known:

    y_i | theta_i        ~ N(theta_i, v_i)
    theta_i | beta, tau2 ~ N(x_i' beta, tau2)

The variance co-model ("fhv") treats v_i as a noisy measurement of a
latent true variance sigma2_i and fits both jointly:

    y_i | theta_i, sigma2_i ~ N(theta_i, sigma2_i)
    theta_i | beta, tau2    ~ N(x_i' beta, tau2)
    v_i | a, sigma2_i       ~ Gamma(shape = a n*_i / 2, rate = a n*_i / (2 sigma2_i))
    sigma2_i | gamma        ~ InvGamma(shape = 2, scale = exp(z_i' gamma))

so that E[v_i | sigma2_i] = sigma2_i and E[sigma2_i] = exp(z_i' gamma).
The standardized counts n*_i weight the quality of each v_i.

Every model exposes the same adapter surface used by the estimators:
a parameter layout, the constrained/unconstrained transform, and batched
log-density / gradient evaluation on the unconstrained space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import digamma, gammaln

from .data import DataError, Dataset, standardized_counts
from .priors import HyperPriorSpec, grad_log_density, log_density
from .transforms import TransformMap

_LOG_2PI = float(np.log(2.0 * np.pi))

MODEL_KINDS = ("fh", "fhv")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class FhParams:
    """Latent state of the known-variance model."""

    theta: np.ndarray
    beta: np.ndarray
    tau_u2: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.tau_u2 = float(self.tau_u2)
        if self.tau_u2 < 0:
            raise DataError(f"tau_u2 must be nonnegative, got {self.tau_u2}")


@dataclass
class FhvParams:
    """Latent state of the variance co-model."""

    theta: np.ndarray
    beta: np.ndarray
    tau_u2: float
    sigma2: np.ndarray
    a: float
    gamma: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.tau_u2 = float(self.tau_u2)
        self.a = float(self.a)
        if self.tau_u2 < 0:
            raise DataError(f"tau_u2 must be nonnegative, got {self.tau_u2}")
        if self.a <= 0:
            raise DataError(f"a must be positive, got {self.a}")
        if np.any(self.sigma2 <= 0):
            raise DataError("sigma2 entries must be positive")


ParamVector = Union[FhParams, FhvParams]


@dataclass(frozen=True)
class FixedHypers:
    """Known (beta, tau_u2) for reduced models that infer theta only."""

    beta: np.ndarray
    tau_u2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if self.tau_u2 <= 0:
            raise DataError("fixed tau_u2 must be positive")


# ---------------------------------------------------------------------------
# density helpers
# ---------------------------------------------------------------------------


def norm_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def gamma_logpdf(x, shape, rate):
    """Gamma density with shape/rate parameterization."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def invgamma_logpdf(x, shape, scale):
    """Inverse-gamma density with shape/scale parameterization."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def _check_dims(name: str, got: int, expected: int):
    if got != expected:
        raise DataError(f"{name}: length {got} does not match expected {expected}")


# ---------------------------------------------------------------------------
# model adapters
# ---------------------------------------------------------------------------


class FhModel:
    """Adapter for the known-variance model.

    Free-parameter layout on the unconstrained space:
    ``[theta_1..theta_N, beta_1..beta_P, log tau_u2]``; with fixed
    hyperparameters the layout reduces to ``[theta_1..theta_N]``.
    """

    kind = "fh"

    def __init__(self, data: Dataset, hyper: HyperPriorSpec, fixed: FixedHypers | None = None):
        if np.any(data.v <= 0):
            raise DataError("model densities require positive v in every domain")
        self.data = data
        self.hyper = hyper
        self.fixed = fixed
        n, p = data.n_domains, data.p_x
        if fixed is not None:
            _check_dims("fixed.beta", len(fixed.beta), p)
            self.dim = n
            mask = np.zeros(n, dtype=bool)
            self._xb_fixed = data.x @ fixed.beta
        else:
            self.dim = n + p + 1
            mask = np.zeros(self.dim, dtype=bool)
            mask[-1] = True
        self.transform = TransformMap(log_mask=mask)
        self.param_names = [f"theta[{i}]" for i in data.domain_id]
        if fixed is None:
            self.param_names += [f"beta[{j}]" for j in range(p)] + ["tau_u2"]
        self.theta_slice = slice(0, n)
        self._inv_v = 1.0 / data.v
        self._y_const = -0.5 * float(np.sum(_LOG_2PI + np.log(data.v)))
        self._xT = data.x.T.copy()

    # -- packing ------------------------------------------------------------

    def pack(self, params: FhParams) -> np.ndarray:
        n, p = self.data.n_domains, self.data.p_x
        _check_dims("theta", len(params.theta), n)
        if self.fixed is not None:
            return params.theta.copy()
        _check_dims("beta", len(params.beta), p)
        return np.concatenate([params.theta, params.beta, [params.tau_u2]])

    def unpack(self, x: np.ndarray) -> FhParams:
        n, p = self.data.n_domains, self.data.p_x
        if self.fixed is not None:
            return FhParams(theta=x[:n], beta=self.fixed.beta, tau_u2=self.fixed.tau_u2)
        return FhParams(theta=x[:n], beta=x[n : n + p], tau_u2=float(x[n + p]))

    def unconstrain(self, params: FhParams) -> np.ndarray:
        return self.transform.unconstrain(self.pack(params))

    def constrain(self, u: np.ndarray) -> np.ndarray:
        return self.transform.constrain(u)

    # -- densities ----------------------------------------------------------

    def log_joint(self, params: FhParams) -> float:
        """Log joint density of data and parameters on the constrained space."""
        if params.tau_u2 <= 0:
            raise DataError("tau_u2 must be positive to evaluate the log joint")
        u = self.transform.unconstrain(self.pack(params))
        lp, _ = self._terms(u[None, :], want_grad=False)
        return float(lp[0] - self.transform.log_jacobian(u))

    def logp_u(self, u: np.ndarray) -> np.ndarray:
        """Log joint plus transform Jacobian, batched over rows of ``u``."""
        lp, _ = self._terms(np.atleast_2d(u), want_grad=False)
        return lp

    def logp_grad_u(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._terms(np.atleast_2d(u), want_grad=True)

    def _terms(self, u: np.ndarray, want_grad: bool):
        data = self.data
        n, p = data.n_domains, data.p_x
        theta = u[:, :n]
        if self.fixed is not None:
            xb = self._xb_fixed
            tau2 = self.fixed.tau_u2
            inv_tau2 = 1.0 / tau2
            log_tau2_sum = n * np.log(tau2)
        else:
            beta = u[:, n : n + p]
            t = u[:, n + p]
            tau2 = np.exp(t)
            inv_tau2 = np.exp(-t)[:, None]
            log_tau2_sum = n * t
            xb = beta @ self._xT

        resid_y = data.y - theta
        scaled_ry = resid_y * self._inv_v
        resid_t = theta - xb
        scaled_rt = resid_t * inv_tau2
        lp = self._y_const - 0.5 * n * _LOG_2PI - 0.5 * log_tau2_sum
        lp = lp - 0.5 * (np.einsum("sd,sd->s", resid_y, scaled_ry) + np.einsum("sd,sd->s", resid_t, scaled_rt))
        if self.fixed is None:
            lp += log_density(self.hyper.beta, beta).sum(axis=1)
            lp += log_density(self.hyper.tau_u2, tau2)
            lp += t  # log-Jacobian of tau2 = exp(t)

        if not want_grad:
            return lp, None

        grad = np.empty_like(u)
        grad[:, :n] = scaled_ry - scaled_rt
        if self.fixed is None:
            grad[:, n : n + p] = scaled_rt @ data.x + grad_log_density(self.hyper.beta, beta)
            grad[:, n + p] = (
                -0.5 * n
                + 0.5 * np.einsum("sd,sd->s", resid_t, scaled_rt)
                + grad_log_density(self.hyper.tau_u2, tau2) * tau2
                + 1.0
            )
        return lp, grad


class FhvModel:
    """Adapter for the variance co-model.

    Unconstrained layout:
    ``[theta (N), beta (P_x), log tau_u2, log sigma2 (N), log a, gamma (P_z)]``.
    """

    kind = "fhv"

    def __init__(self, data: Dataset, hyper: HyperPriorSpec):
        if data.p_z == 0:
            raise DataError("the variance co-model requires at least one z covariate")
        if np.any(data.v <= 0):
            raise DataError("model densities require positive v in every domain")
        self.data = data
        self.hyper = hyper
        self.fixed = None
        n, p, q = data.n_domains, data.p_x, data.p_z
        self.dim = 2 * n + p + q + 2
        mask = np.zeros(self.dim, dtype=bool)
        mask[n + p] = True  # log tau_u2
        mask[n + p + 1 : n + p + 1 + n] = True  # log sigma2
        mask[n + p + 1 + n] = True  # log a
        self.transform = TransformMap(log_mask=mask)
        self.param_names = (
            [f"theta[{i}]" for i in data.domain_id]
            + [f"beta[{j}]" for j in range(p)]
            + ["tau_u2"]
            + [f"sigma2[{i}]" for i in data.domain_id]
            + ["a"]
            + [f"gamma[{j}]" for j in range(q)]
        )
        self.theta_slice = slice(0, n)
        self._log_v = np.log(data.v)

    def pack(self, params: FhvParams) -> np.ndarray:
        n, p, q = self.data.n_domains, self.data.p_x, self.data.p_z
        _check_dims("theta", len(params.theta), n)
        _check_dims("beta", len(params.beta), p)
        _check_dims("sigma2", len(params.sigma2), n)
        _check_dims("gamma", len(params.gamma), q)
        return np.concatenate(
            [params.theta, params.beta, [params.tau_u2], params.sigma2, [params.a], params.gamma]
        )

    def unpack(self, x: np.ndarray) -> FhvParams:
        n, p, q = self.data.n_domains, self.data.p_x, self.data.p_z
        return FhvParams(
            theta=x[:n],
            beta=x[n : n + p],
            tau_u2=float(x[n + p]),
            sigma2=x[n + p + 1 : n + p + 1 + n],
            a=float(x[n + p + 1 + n]),
            gamma=x[n + p + 2 + n :],
        )

    def unconstrain(self, params: FhvParams) -> np.ndarray:
        return self.transform.unconstrain(self.pack(params))

    def constrain(self, u: np.ndarray) -> np.ndarray:
        return self.transform.constrain(u)

    def log_joint(self, params: FhvParams) -> float:
        if params.tau_u2 <= 0:
            raise DataError("tau_u2 must be positive to evaluate the log joint")
        u = self.transform.unconstrain(self.pack(params))
        lp, _ = self._terms(u[None, :], want_grad=False)
        return float(lp[0] - self.transform.log_jacobian(u))

    def logp_u(self, u: np.ndarray) -> np.ndarray:
        lp, _ = self._terms(np.atleast_2d(u), want_grad=False)
        return lp

    def logp_grad_u(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._terms(np.atleast_2d(u), want_grad=True)

    def _terms(self, u: np.ndarray, want_grad: bool):
        data = self.data
        n, p, q = data.n_domains, data.p_x, data.p_z
        y, v, nstar = data.y, data.v, data.n_star

        theta = u[:, :n]
        beta = u[:, n : n + p]
        t = u[:, n + p]
        w = u[:, n + p + 1 : n + p + 1 + n]
        log_a = u[:, n + p + 1 + n]
        gam = u[:, n + p + 2 + n :]

        tau2 = np.exp(t)[:, None]
        sig2 = np.exp(w)
        a = np.exp(log_a)[:, None]
        lin = gam @ data.z.T  # log prior mean of sigma2
        s = np.exp(lin)
        xb = beta @ data.x.T

        shape = a * (nstar / 2.0)
        rate = shape / sig2
        resid_y = y - theta
        resid_t = theta - xb

        lp = (-0.5 * (_LOG_2PI + w + resid_y**2 / sig2)).sum(axis=1)
        lp += (-0.5 * (_LOG_2PI + np.log(tau2) + resid_t**2 / tau2)).sum(axis=1)
        lp += (shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * self._log_v - rate * v).sum(axis=1)
        lp += (2.0 * lin - 3.0 * w - s / sig2).sum(axis=1)  # InvGamma(2, s); log Gamma(2) = 0
        lp += log_density(self.hyper.beta, beta).sum(axis=1)
        lp += log_density(self.hyper.tau_u2, tau2[:, 0])
        lp += log_density(self.hyper.a, a[:, 0])
        lp += log_density(self.hyper.gamma, gam).sum(axis=1)
        lp += t + w.sum(axis=1) + log_a  # log-Jacobians of the log transforms

        if not want_grad:
            return lp, None

        grad = np.empty_like(u)
        grad[:, :n] = resid_y / sig2 - resid_t / tau2
        grad[:, n : n + p] = (resid_t / tau2) @ data.x + grad_log_density(self.hyper.beta, beta)
        grad[:, n + p] = (
            -0.5 * n
            + (resid_t**2 / (2.0 * tau2)).sum(axis=1)
            + grad_log_density(self.hyper.tau_u2, tau2[:, 0]) * tau2[:, 0]
            + 1.0
        )
        grad[:, n + p + 1 : n + p + 1 + n] = (
            -0.5
            + resid_y**2 / (2.0 * sig2)
            - shape
            + rate * v
            - 3.0
            + s / sig2
            + 1.0
        )
        grad[:, n + p + 1 + n] = (
            (shape * (np.log(rate) + 1.0 - digamma(shape) + self._log_v - v / sig2)).sum(axis=1)
            + grad_log_density(self.hyper.a, a[:, 0]) * a[:, 0]
            + 1.0
        )
        grad[:, n + p + 2 + n :] = (2.0 - s / sig2) @ data.z + grad_log_density(self.hyper.gamma, gam)
        return lp, grad


Model = Union[FhModel, FhvModel]


def build_model(
    kind: str,
    data: Dataset,
    hyper: HyperPriorSpec | None = None,
    fixed: FixedHypers | None = None,
) -> Model:
    hyper = hyper if hyper is not None else HyperPriorSpec()
    if kind == "fh":
        return FhModel(data, hyper, fixed=fixed)
    if kind == "fhv":
        if fixed is not None:
            raise DataError("fixed hyperparameters are only supported for the fh model")
        return FhvModel(data, hyper)
    raise DataError(f"unknown model kind '{kind}'")


def log_joint_fh(params: FhParams, data: Dataset, hyper: HyperPriorSpec) -> float:
    """Log joint of the known-variance model at ``params``."""
    return FhModel(data, hyper).log_joint(params)


def log_joint_fhv(params: FhvParams, data: Dataset, hyper: HyperPriorSpec) -> float:
    """Log joint of the variance co-model at ``params``."""
    return FhvModel(data, hyper).log_joint(params)


# ---------------------------------------------------------------------------
# synthetic data generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FhSimConfig:
    """Generative truth for the known-variance model.

    Defaults follow the standard benchmark configuration: scalar slope 1,
    unit random-effect variance, unit sampling variance, covariates
    uniform on (0, 2).
    """

    beta: tuple[float, ...] = (1.0,)
    tau_u2: float = 1.0
    sigma2: float = 1.0
    x_low: float = 0.0
    x_high: float = 2.0


@dataclass(frozen=True)
class FhvSimConfig:
    """Generative truth for synthetic variance co-model datasets.

    ``z`` is an intercept column plus uniform extras when ``gamma`` has
    more than one coordinate; respondent counts are uniform integers in
    ``[n_low, n_high]``.
    """

    beta: tuple[float, ...] = (1.0,)
    tau_u2: float = 1.0
    a: float = 6.0
    gamma: tuple[float, ...] = (-0.7,)
    x_low: float = 0.0
    x_high: float = 2.0
    n_low: int = 2
    n_high: int = 200


def simulate_fh(config: FhSimConfig, n_domains: int, rng: np.random.Generator) -> tuple[FhParams, Dataset]:
    """Draw one synthetic dataset and its generating parameters."""
    if n_domains <= 0:
        raise DataError(f"n_domains must be positive, got {n_domains}")
    beta = np.asarray(config.beta, dtype=float)
    x = rng.uniform(config.x_low, config.x_high, size=(n_domains, len(beta)))
    u = rng.normal(0.0, np.sqrt(config.tau_u2), size=n_domains)
    theta = x @ beta + u
    eps = rng.normal(0.0, np.sqrt(config.sigma2), size=n_domains)
    y = theta + eps
    data = Dataset(
        domain_id=np.arange(1, n_domains + 1),
        y=y,
        v=np.full(n_domains, config.sigma2),
        n=np.ones(n_domains, dtype=int),
        x=x,
        z=np.empty((n_domains, 0)),
    )
    params = FhParams(theta=theta, beta=beta, tau_u2=config.tau_u2)
    return params, data


def simulate_fhv(config: FhvSimConfig, n_domains: int, rng: np.random.Generator) -> tuple[FhvParams, Dataset]:
    """Draw one synthetic dataset from the variance co-model."""
    if n_domains <= 0:
        raise DataError(f"n_domains must be positive, got {n_domains}")
    beta = np.asarray(config.beta, dtype=float)
    gamma = np.asarray(config.gamma, dtype=float)
    x = rng.uniform(config.x_low, config.x_high, size=(n_domains, len(beta)))
    z = np.ones((n_domains, len(gamma)))
    if len(gamma) > 1:
        z[:, 1:] = rng.uniform(0.0, 1.0, size=(n_domains, len(gamma) - 1))
    n = rng.integers(config.n_low, config.n_high + 1, size=n_domains)

    sigma2 = 1.0 / rng.gamma(shape=2.0, scale=1.0 / np.exp(z @ gamma), size=n_domains)
    u = rng.normal(0.0, np.sqrt(config.tau_u2), size=n_domains)
    theta = x @ beta + u
    y = theta + rng.normal(0.0, np.sqrt(sigma2), size=n_domains)

    # v requires n_star, which depends on the whole n vector
    nstar = standardized_counts(n)
    shape = config.a * nstar / 2.0
    v = rng.gamma(shape=shape, scale=2.0 * sigma2 / (config.a * nstar))

    data = Dataset(domain_id=np.arange(1, n_domains + 1), y=y, v=v, n=n, x=x, z=z)
    params = FhvParams(theta=theta, beta=beta, tau_u2=config.tau_u2, sigma2=sigma2, a=config.a, gamma=gamma)
    return params, data


def posterior_predictive_draw(
    kind: str,
    params: ParamVector,
    template: Dataset,
    rng: np.random.Generator,
) -> Dataset:
    """Generate one replicate dataset from a single posterior parameter draw.

    The template supplies covariates, respondent counts and domain ids; for
    the known-variance model it also supplies the (fixed) v_i.
    """
    n = template.n_domains
    _check_dims("theta", len(params.theta), n)
    if kind == "fh":
        if not isinstance(params, FhParams):
            raise DataError("fh replicate generation requires FhParams")
        y = params.theta + rng.normal(0.0, 1.0, size=n) * np.sqrt(template.v)
        return template.replace_direct(y=y)
    if kind == "fhv":
        if not isinstance(params, FhvParams):
            raise DataError("fhv replicate generation requires FhvParams (sigma2 and a draws)")
        _check_dims("sigma2", len(params.sigma2), n)
        y = params.theta + rng.normal(0.0, 1.0, size=n) * np.sqrt(params.sigma2)
        shape = params.a * template.n_star / 2.0
        v = rng.gamma(shape=shape, scale=2.0 * params.sigma2 / (params.a * template.n_star))
        # extreme posterior draws of `a` can underflow the gamma sampler to
        # exactly zero; redraw so the replicate dataset stays valid
        for _ in range(100):
            bad = v <= 0.0
            if not np.any(bad):
                break
            v[bad] = rng.gamma(shape=shape[bad], scale=(2.0 * params.sigma2 / (params.a * template.n_star))[bad])
        else:
            v = np.maximum(v, 1e-300)
        return template.replace_direct(y=y, v=v)
    raise DataError(f"unknown model kind '{kind}'")
