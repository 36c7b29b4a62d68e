"""Resampling-based calibration of approximate posterior intervals.

Given an initial fit, replicate datasets are generated from the posterior
predictive distribution, one per stored parameter draw.  The estimator is
re-run on every replicate; standardized estimation errors over the
replicates (pivot statistics) yield a per-domain mean shift and a
multiplicative variance correction, and two interval constructions:
inverting the empirical quantiles of the adjusted pivot, or rescaling the
initial posterior draws to the corrected first two moments.  The pipeline
is agnostic to which estimator produced the fit.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import ceil, nan

import numpy as np

from .advi import FitDivergenceError, PosteriorFit
from .data import DataError, Dataset
from .estimators import Estimator
from .models import ParamVector, posterior_predictive_draw
from .util import spawn_rng, spawn_seed


class InsufficientReplicatesError(RuntimeError):
    """Fewer successful replicate fits than the configured minimum."""

    def __init__(self, n_ok: int, required: int, total: int):
        super().__init__(
            f"only {n_ok} of {total} replicate fits succeeded; at least {required} required"
        )
        self.n_ok = n_ok
        self.required = required


@dataclass(frozen=True)
class CalibrationConfig:
    """Settings for one calibration run.

    ``gamma`` is the tail level: intervals have nominal coverage
    ``1 - 2 * gamma``.  The bias correction is reported always but applied
    to the adjusted mean only when ``bias_correction`` is on.  The
    ``strict_inversion`` flag flips the pivotal bounds to the strict pivot
    inversion (minus signs); both coincide for symmetric pivots.
    """

    n_replicates: int = 200
    gamma: float = 0.25
    bias_correction: bool = False
    strict_inversion: bool = False
    min_ok_fraction: float = 0.9
    scale_floor: float = 1e-3
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_replicates < 2:
            raise DataError("n_replicates must be >= 2")
        if not 0.0 < self.gamma < 0.5:
            raise DataError(f"gamma must lie in (0, 0.5), got {self.gamma}")
        if not 0.0 < self.min_ok_fraction <= 1.0:
            raise DataError("min_ok_fraction must lie in (0, 1]")
        if self.scale_floor <= 0:
            raise DataError("scale_floor must be positive")

    @property
    def min_ok(self) -> int:
        return ceil(self.min_ok_fraction * self.n_replicates)


@dataclass
class ReplicateDraw:
    """One bootstrap-truth draw paired with the dataset it generated."""

    alpha: int
    truth: ParamVector
    data: Dataset


@dataclass
class ReplicateFitSummary:
    alpha: int
    m: np.ndarray | None
    v: np.ndarray | None
    status: str  # "ok" | "failed"
    n_iters: int = 0
    final_elbo: float = nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class PivotMatrix:
    """Standardized estimation errors, one row per successful replicate."""

    values: np.ndarray  # (A_ok, N)
    alphas: np.ndarray  # (A_ok,)

    @property
    def n_ok(self) -> int:
        return self.values.shape[0]


@dataclass
class CalibrationAdjustment:
    """Per-domain mean shift, variance scale, and adjusted-pivot table."""

    bias: np.ndarray  # a_i
    scale: np.ndarray  # c_i
    pivot_table: np.ndarray  # (A_ok, N), each column sorted ascending
    n_ok: int
    floored: np.ndarray  # domains where the scale hit the floor


@dataclass
class CalibratedIntervals:
    gamma: float
    m_tilde: np.ndarray
    v_tilde: np.ndarray
    pivotal: np.ndarray  # (N, 2)
    rescaled: np.ndarray  # (N, 2)

    def __post_init__(self):
        if np.any(self.pivotal[:, 0] > self.pivotal[:, 1]) or np.any(
            self.rescaled[:, 0] > self.rescaled[:, 1]
        ):
            raise DataError("interval bounds out of order")


@dataclass
class CalibrationResult:
    adjustment: CalibrationAdjustment
    intervals: CalibratedIntervals
    summaries: list[ReplicateFitSummary]
    original: np.ndarray  # (N, 2) raw posterior percentile interval
    m: np.ndarray = field(default_factory=lambda: np.empty(0))
    v: np.ndarray = field(default_factory=lambda: np.empty(0))


# ---------------------------------------------------------------------------
# pipeline steps
# ---------------------------------------------------------------------------


def draw_replicates(
    fit: PosteriorFit,
    template: Dataset,
    count: int,
    rng: np.random.Generator,
) -> list[ReplicateDraw]:
    """Pair ``count`` stored posterior draws with posterior-predictive datasets.

    Truth draws are sampled without replacement from the fit's stored draws
    so no two replicates share a pivot numerator.
    """
    available = fit.draws.shape[0]
    if count > available:
        raise DataError(
            f"requested {count} replicates but the fit stores {available} draws; "
            f"refit with n_posterior_draws >= {count}"
        )
    indices = rng.choice(available, size=count, replace=False)
    replicates = []
    for alpha, idx in enumerate(indices, start=1):
        truth = _unpack_draw(fit, fit.draws[idx])
        data = posterior_predictive_draw(fit.model_kind, truth, template, rng)
        replicates.append(ReplicateDraw(alpha=alpha, truth=truth, data=data))
    return replicates


def _unpack_draw(fit: PosteriorFit, row: np.ndarray) -> ParamVector:
    from .models import FhParams, FhvParams

    n, p, q = fit.n_domains, fit.p_x, fit.p_z
    if fit.model_kind == "fh":
        if fit.fixed is not None:
            return FhParams(theta=row[:n], beta=fit.fixed.beta, tau_u2=fit.fixed.tau_u2)
        return FhParams(theta=row[:n], beta=row[n : n + p], tau_u2=float(row[n + p]))
    return FhvParams(
        theta=row[:n],
        beta=row[n : n + p],
        tau_u2=float(row[n + p]),
        sigma2=row[n + p + 1 : n + p + 1 + n],
        a=float(row[n + p + 1 + n]),
        gamma=row[n + p + 2 + n :],
    )


def _refit_one(task) -> ReplicateFitSummary:
    alpha, data, estimator, task_seed = task
    try:
        refit = estimator.fit(data, seed=task_seed)
    except (FitDivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return ReplicateFitSummary(alpha=alpha, m=None, v=None, status="failed", error=str(exc))
    return ReplicateFitSummary(
        alpha=alpha,
        m=refit.theta_m,
        v=refit.theta_v,
        status="ok",
        n_iters=refit.n_iters,
        final_elbo=refit.final_elbo,
    )


def refit_replicates(
    replicates: list[ReplicateDraw],
    estimator: Estimator,
    master_seed: int,
    workers: int = 1,
    min_ok: int | None = None,
) -> list[ReplicateFitSummary]:
    """Re-run the estimator on every replicate dataset.

    Replicates are independent; per-task seeds derive from
    ``(master_seed, alpha)`` so the output is identical for any worker
    count, and results are returned in alpha order.
    """
    tasks = [
        (rep.alpha, rep.data, estimator, spawn_seed(master_seed, rep.alpha))
        for rep in replicates
    ]
    if workers <= 1:
        results = [_refit_one(task) for task in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_refit_one, tasks, chunksize=chunk))
    results.sort(key=lambda summary: summary.alpha)

    n_ok = sum(summary.ok for summary in results)
    required = len(replicates) if min_ok is None else min_ok
    if min_ok is not None and n_ok < min_ok:
        raise InsufficientReplicatesError(n_ok, required, len(replicates))
    return results


def bias_adjustment(
    initial_m: np.ndarray, summaries: list[ReplicateFitSummary]
) -> tuple[np.ndarray, np.ndarray]:
    """First-moment correction: initial mean minus average replicate mean."""
    ok = [summary for summary in summaries if summary.ok]
    if len(ok) < 2:
        raise DataError("bias adjustment requires at least two successful replicates")
    replicate_mean = np.mean([summary.m for summary in ok], axis=0)
    bias = np.asarray(initial_m, dtype=float) - replicate_mean
    return bias, initial_m + bias


def pivot_statistics(
    replicates: list[ReplicateDraw], summaries: list[ReplicateFitSummary]
) -> PivotMatrix:
    """Standardize each replicate's estimation error by its posterior sd."""
    by_alpha = {rep.alpha: rep for rep in replicates}
    rows = []
    alphas = []
    for summary in summaries:
        if not summary.ok:
            continue
        truth = by_alpha[summary.alpha].truth
        bad = summary.v <= 0
        if np.any(bad):
            domain = int(np.argmax(bad))
            raise DataError(
                f"replicate alpha={summary.alpha}: nonpositive posterior variance at domain index {domain}"
            )
        rows.append((summary.m - truth.theta) / np.sqrt(summary.v))
        alphas.append(summary.alpha)
    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("pivot matrix contains non-finite entries")
    return PivotMatrix(values=values, alphas=np.asarray(alphas))


def scale_adjustment(pivots: PivotMatrix, scale_floor: float = 1e-3) -> CalibrationAdjustment:
    """Variance correction: population sd of each pivot column.

    Adjusted pivots are centered and divided by the scale, so each column
    has sample mean 0 and population sd 1 by construction (except columns
    floored at ``scale_floor``).  Bias entries are filled by the caller.
    """
    if pivots.n_ok < 2:
        raise DataError("scale adjustment requires at least two replicates")
    values = pivots.values
    center = values.mean(axis=0)
    sd = np.sqrt(((values - center) ** 2).mean(axis=0))
    floored = sd <= scale_floor
    if np.any(floored):
        warnings.warn(
            f"{int(floored.sum())} pivot column(s) degenerate; scale floored at {scale_floor}",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(floored, scale_floor, sd)
    adjusted = (values - center) / scale
    adjusted.sort(axis=0)
    return CalibrationAdjustment(
        bias=np.zeros(values.shape[1]),
        scale=scale,
        pivot_table=adjusted,
        n_ok=pivots.n_ok,
        floored=floored,
    )


def pivotal_intervals(
    m_tilde: np.ndarray,
    v_initial: np.ndarray,
    scale: np.ndarray,
    pivot_table: np.ndarray,
    gamma: float,
    strict_inversion: bool = False,
) -> np.ndarray:
    """Invert empirical quantiles of the adjusted pivot.

    Bounds are ``m_tilde + sqrt(v * c) * q`` at the ``gamma`` and
    ``1 - gamma`` quantiles (linear interpolation of order statistics).
    ``strict_inversion`` uses the sign-flipped bounds instead; the two
    coincide for symmetric pivot distributions.
    """
    if not 0.0 < gamma < 0.5:
        raise DataError(f"gamma must lie in (0, 0.5), got {gamma}")
    q_lo, q_hi = np.quantile(pivot_table, [gamma, 1.0 - gamma], axis=0)
    half = np.sqrt(v_initial * scale)
    if strict_inversion:
        lo = m_tilde - half * q_hi
        hi = m_tilde - half * q_lo
    else:
        lo = m_tilde + half * q_lo
        hi = m_tilde + half * q_hi
    return np.column_stack([lo, hi])


def rescaled_intervals(
    theta_draws: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    m_tilde: np.ndarray,
    scale: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Percentile interval of draws rescaled to the corrected moments."""
    if not 0.0 < gamma < 0.5:
        raise DataError(f"gamma must lie in (0, 0.5), got {gamma}")
    n_draws = theta_draws.shape[0]
    if n_draws < 2:
        raise DataError("rescaled intervals require at least two draws")
    if n_draws < 100:
        warnings.warn(
            f"rescaled intervals from only {n_draws} draws; quantiles will be noisy",
            RuntimeWarning,
            stacklevel=2,
        )
    standardized = (theta_draws - m) / np.sqrt(v)
    adjusted = standardized * np.sqrt(v * scale) + m_tilde
    lo, hi = np.quantile(adjusted, [gamma, 1.0 - gamma], axis=0)
    return np.column_stack([lo, hi])


def original_intervals(theta_draws: np.ndarray, gamma: float) -> np.ndarray:
    """Equal-tailed percentile interval of the raw posterior draws."""
    lo, hi = np.quantile(theta_draws, [gamma, 1.0 - gamma], axis=0)
    return np.column_stack([lo, hi])


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def calibrate(
    fit: PosteriorFit,
    template: Dataset,
    estimator: Estimator,
    config: CalibrationConfig,
    seed: int | None = None,
) -> CalibrationResult:
    """Run the full calibration sequence against an initial fit."""
    master_seed = config.seed if seed is None else seed
    rng = spawn_rng(master_seed, 0)
    replicates = draw_replicates(fit, template, config.n_replicates, rng)
    summaries = refit_replicates(
        replicates, estimator, master_seed=master_seed, workers=config.workers, min_ok=config.min_ok
    )
    return apply_calibration(fit, replicates, summaries, config)


def apply_calibration(
    fit: PosteriorFit,
    replicates: list[ReplicateDraw],
    summaries: list[ReplicateFitSummary],
    config: CalibrationConfig,
) -> CalibrationResult:
    """Adjustment and interval construction given completed replicate fits."""
    m, v = fit.theta_m, fit.theta_v
    bias, m_shifted = bias_adjustment(m, summaries)
    m_tilde = m_shifted if config.bias_correction else m.copy()

    pivots = pivot_statistics(replicates, summaries)
    adjustment = scale_adjustment(pivots, scale_floor=config.scale_floor)
    adjustment.bias = bias

    pivotal = pivotal_intervals(
        m_tilde, v, adjustment.scale, adjustment.pivot_table, config.gamma, config.strict_inversion
    )
    rescaled = rescaled_intervals(fit.theta_draws, m, v, m_tilde, adjustment.scale, config.gamma)
    intervals = CalibratedIntervals(
        gamma=config.gamma,
        m_tilde=m_tilde,
        v_tilde=v * adjustment.scale,
        pivotal=pivotal,
        rescaled=rescaled,
    )
    original = original_intervals(fit.theta_draws, config.gamma)
    return CalibrationResult(
        adjustment=adjustment,
        intervals=intervals,
        summaries=summaries,
        original=original,
        m=m,
        v=v,
    )
