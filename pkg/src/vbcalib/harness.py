"""Monte Carlo coverage experiments and the averaged-adjustment workflow.

``run_fh_study`` repeatedly generates a dataset with known truth, fits,
calibrates, and records whether each interval method covers the true
domain values.  ``run_production_workflow`` mimics a recurring production
setting: adjustments are derived once per "month", averaged, and then
tested on fresh replicate datasets with a single model fit each.
``ppc_export`` writes posterior-predictive check tables.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .advi import AdviConfig, FitDivergenceError, PosteriorFit
from .calibration import (
    CalibrationConfig,
    InsufficientReplicatesError,
    apply_calibration,
    draw_replicates,
    original_intervals,
    pivotal_intervals,
    refit_replicates,
    rescaled_intervals,
)
from .data import DataError, Dataset
from .estimators import make_estimator
from .gibbs import GibbsConfig
from .models import FhSimConfig, FhvSimConfig, simulate_fh, simulate_fhv
from .priors import HyperPriorSpec
from .util import spawn_rng, spawn_seed

METHODS = ("original", "rescaled", "pivotal")


class StudyAbortedError(RuntimeError):
    """Raised when fit failures exceed tolerance; carries partial results."""

    def __init__(self, message: str, partial: "StudyResult | None" = None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of one simulation study.

    ``calibration.n_replicates`` is the per-dataset replicate count A;
    ``n_datasets`` is the Monte Carlo size S.  ``truth_source`` selects
    between fresh generative truths per dataset and truths drawn from the
    posterior of a single initial fit.
    """

    model: str = "fh"
    n_domains: int = 150
    n_datasets: int = 100
    truth_source: str = "generative"
    estimator: str = "vb"
    sim_fh: FhSimConfig = field(default_factory=FhSimConfig)
    sim_fhv: FhvSimConfig = field(default_factory=FhvSimConfig)
    hyper: HyperPriorSpec = field(default_factory=HyperPriorSpec)
    advi: AdviConfig = field(default_factory=AdviConfig)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_datasets < 1:
            raise DataError("n_datasets must be >= 1")
        if self.truth_source not in ("generative", "posterior_of_initial_fit"):
            raise DataError(f"unknown truth_source '{self.truth_source}'")

    def build_estimator(self) -> Estimator:
        return make_estimator(self.estimator, self.model, self.hyper, self.advi, self.gibbs)

    def simulate(self, rng: np.random.Generator):
        if self.model == "fh":
            return simulate_fh(self.sim_fh, self.n_domains, rng)
        return simulate_fhv(self.sim_fhv, self.n_domains, rng)


@dataclass
class CoverageReport:
    """Per-domain and aggregate coverage/length by interval method."""

    domain_id: np.ndarray
    n: np.ndarray
    methods: tuple[str, ...]
    coverage: np.ndarray  # (n_methods, N)
    mean_length: np.ndarray  # (n_methods, N)

    def __post_init__(self):
        if np.any(self.coverage < 0) or np.any(self.coverage > 1):
            raise DataError("coverage entries must lie in [0, 1]")
        if np.any(self.mean_length < 0):
            raise DataError("interval lengths must be nonnegative")

    def method_index(self, method: str) -> int:
        return self.methods.index(method)

    def summary(self) -> dict[str, tuple[float, float]]:
        """Aggregate (coverage, length) per method: the mean over domains."""
        return {
            method: (
                float(self.coverage[k].mean()),
                float(self.mean_length[k].mean()),
            )
            for k, method in enumerate(self.methods)
        }


@dataclass
class StudyResult:
    report: CoverageReport
    mean_bias: np.ndarray
    mean_scale: np.ndarray
    mean_n_ok: float
    n_datasets: int


def _accumulate(
    cover_sum: np.ndarray,
    length_sum: np.ndarray,
    truth_theta: np.ndarray,
    intervals_by_method: dict[str, np.ndarray],
) -> None:
    for k, method in enumerate(METHODS):
        bounds = intervals_by_method[method]
        covered = (bounds[:, 0] <= truth_theta) & (truth_theta <= bounds[:, 1])
        cover_sum[k] += covered
        length_sum[k] += bounds[:, 1] - bounds[:, 0]


def run_fh_study(config: StudyConfig) -> StudyResult:
    """Coverage experiment over ``n_datasets`` simulated datasets."""
    estimator = config.build_estimator()
    n = config.n_domains
    cover_sum = np.zeros((len(METHODS), n))
    length_sum = np.zeros((len(METHODS), n))
    bias_sum = np.zeros(n)
    scale_sum = np.zeros(n)
    n_ok_sum = 0
    first_n = None
    completed = 0

    posterior_truths = None
    if config.truth_source == "posterior_of_initial_fit":
        base_truth, base_data = config.simulate(spawn_rng(config.seed, 5, 0))
        base_fit = estimator.fit(base_data, seed=spawn_seed(config.seed, 5, 1))
        posterior_truths = draw_replicates(
            base_fit, base_data, config.n_datasets, spawn_rng(config.seed, 5, 2)
        )

    for s in range(config.n_datasets):
        if posterior_truths is None:
            truth, data = config.simulate(spawn_rng(config.seed, 1, s))
            truth_theta = truth.theta
        else:
            truth_theta = posterior_truths[s].truth.theta
            data = posterior_truths[s].data
        if first_n is None:
            first_n = data.n.copy()
            domain_id = data.domain_id.copy()
        try:
            fit = estimator.fit(data, seed=spawn_seed(config.seed, 2, s))
            result = _calibrate_for_study(fit, data, estimator, config, s)
        except (FitDivergenceError, InsufficientReplicatesError) as exc:
            raise StudyAbortedError(
                f"dataset {s + 1}/{config.n_datasets} failed: {exc}",
                partial=_study_result(
                    domain_id, first_n, cover_sum, length_sum, bias_sum, scale_sum, n_ok_sum, completed
                )
                if completed
                else None,
            ) from exc

        intervals = {
            "original": result.original,
            "rescaled": result.intervals.rescaled,
            "pivotal": result.intervals.pivotal,
        }
        _accumulate(cover_sum, length_sum, truth_theta, intervals)
        bias_sum += result.adjustment.bias
        scale_sum += result.adjustment.scale
        n_ok_sum += result.adjustment.n_ok
        completed += 1

    return _study_result(
        domain_id, first_n, cover_sum, length_sum, bias_sum, scale_sum, n_ok_sum, completed
    )


def _calibrate_for_study(fit, data, estimator, config: StudyConfig, s: int):
    from .calibration import calibrate

    return calibrate(fit, data, estimator, config.calibration, seed=spawn_seed(config.seed, 3, s))


def _study_result(
    domain_id, n, cover_sum, length_sum, bias_sum, scale_sum, n_ok_sum, completed
) -> StudyResult:
    if completed == 0:
        raise StudyAbortedError("no dataset completed")
    report = CoverageReport(
        domain_id=domain_id,
        n=n,
        methods=METHODS,
        coverage=cover_sum / completed,
        mean_length=length_sum / completed,
    )
    return StudyResult(
        report=report,
        mean_bias=bias_sum / completed,
        mean_scale=scale_sum / completed,
        mean_n_ok=n_ok_sum / completed,
        n_datasets=completed,
    )


# ---------------------------------------------------------------------------
# averaged-adjustment production workflow
# ---------------------------------------------------------------------------


@dataclass
class AveragedAdjustment:
    """Adjustments pooled over repeated calibration runs ("months")."""

    bias: np.ndarray
    scale: np.ndarray
    pivot_table: np.ndarray
    n_months: int


@dataclass
class WorkflowResult:
    monthly_reports: list[CoverageReport]
    averaged_report: CoverageReport
    averaged: AveragedAdjustment


def average_adjustments(
    biases: list[np.ndarray], scales: list[np.ndarray], tables: list[np.ndarray]
) -> AveragedAdjustment:
    """Average per-month adjustments elementwise.

    Sorted pivot tables are averaged rank by rank; months with unequal
    replicate counts are first interpolated onto the smallest month's
    order-statistic grid (so averaging identical months is exact).
    """
    sizes = {t.shape[0] for t in tables}
    if len(sizes) > 1:
        k = min(sizes)
        grid = np.arange(k) / (k - 1)
        tables = [np.quantile(t, grid, axis=0) for t in tables]
    return AveragedAdjustment(
        bias=np.mean(biases, axis=0),
        scale=np.mean(scales, axis=0),
        pivot_table=np.mean(tables, axis=0),
        n_months=len(biases),
    )


def _workflow_test_one(task):
    (b, data, estimator, seed, truth_theta, bias, scale, table, gamma, bias_on, strict) = task
    try:
        refit = estimator.fit(data, seed=seed)
    except FitDivergenceError as exc:
        return b, None, str(exc)
    m, v = refit.theta_m, refit.theta_v
    m_tilde = m + bias if bias_on else m
    intervals = {
        "original": original_intervals(refit.theta_draws, gamma),
        "rescaled": rescaled_intervals(refit.theta_draws, m, v, m_tilde, scale, gamma),
        "pivotal": pivotal_intervals(m_tilde, v, scale, table, gamma, strict),
    }
    cover = np.stack(
        [
            (intervals[meth][:, 0] <= truth_theta) & (truth_theta <= intervals[meth][:, 1])
            for meth in METHODS
        ]
    )
    length = np.stack([intervals[meth][:, 1] - intervals[meth][:, 0] for meth in METHODS])
    return b, (cover, length), ""


def run_production_workflow(config: StudyConfig, n_months: int, n_tests: int) -> WorkflowResult:
    """Derive adjustments per month, average them, and test on fresh data.

    Per month: an initial fit, A replicate refits for the adjustments, and
    ``n_tests`` further replicate datasets refit once each.  Test intervals
    use the adjustments averaged over all months.
    """
    if n_months < 1 or n_tests < 1:
        raise DataError("n_months and n_tests must be >= 1")
    cal = config.calibration
    estimator = config.build_estimator()
    need = cal.n_replicates + n_tests
    if config.estimator == "vb" and config.advi.n_posterior_draws < need:
        raise DataError(
            f"workflow needs {need} stored draws (A + B); raise n_posterior_draws"
        )

    months = []
    for month in range(n_months):
        truth, data = config.simulate(spawn_rng(config.seed, 10, month))
        fit = estimator.fit(data, seed=spawn_seed(config.seed, 11, month))
        replicates = draw_replicates(fit, data, need, spawn_rng(config.seed, 12, month))
        adj_reps, test_reps = replicates[: cal.n_replicates], replicates[cal.n_replicates :]
        summaries = refit_replicates(
            adj_reps,
            estimator,
            master_seed=spawn_seed(config.seed, 13, month),
            workers=cal.workers,
            min_ok=cal.min_ok,
        )
        result = apply_calibration(fit, adj_reps, summaries, cal)
        months.append((data, result, test_reps))

    averaged = average_adjustments(
        [res.adjustment.bias for _, res, _ in months],
        [res.adjustment.scale for _, res, _ in months],
        [res.adjustment.pivot_table for _, res, _ in months],
    )

    monthly_reports = []
    for month, (data, _, test_reps) in enumerate(months):
        tasks = [
            (
                rep.alpha,
                rep.data,
                estimator,
                spawn_seed(config.seed, 14, month, rep.alpha),
                rep.truth.theta,
                averaged.bias,
                averaged.scale,
                averaged.pivot_table,
                cal.gamma,
                cal.bias_correction,
                cal.strict_inversion,
            )
            for rep in test_reps
        ]
        if cal.workers <= 1:
            outcomes = [_workflow_test_one(task) for task in tasks]
        else:
            with ProcessPoolExecutor(max_workers=cal.workers) as pool:
                outcomes = list(pool.map(_workflow_test_one, tasks, chunksize=1))
        outcomes.sort(key=lambda item: item[0])
        n = config.n_domains
        cover_sum = np.zeros((len(METHODS), n))
        length_sum = np.zeros((len(METHODS), n))
        n_done = 0
        for _, payload, err in outcomes:
            if payload is None:
                continue
            cover, length = payload
            cover_sum += cover
            length_sum += length
            n_done += 1
        if n_done < max(1, int(cal.min_ok_fraction * n_tests)):
            raise StudyAbortedError(
                f"month {month + 1}: only {n_done}/{n_tests} test fits succeeded"
            )
        monthly_reports.append(
            CoverageReport(
                domain_id=data.domain_id.copy(),
                n=data.n.copy(),
                methods=METHODS,
                coverage=cover_sum / n_done,
                mean_length=length_sum / n_done,
            )
        )

    averaged_report = CoverageReport(
        domain_id=monthly_reports[0].domain_id,
        n=monthly_reports[0].n,
        methods=METHODS,
        coverage=np.mean([r.coverage for r in monthly_reports], axis=0),
        mean_length=np.mean([r.mean_length for r in monthly_reports], axis=0),
    )
    return WorkflowResult(
        monthly_reports=monthly_reports, averaged_report=averaged_report, averaged=averaged
    )


# ---------------------------------------------------------------------------
# posterior predictive checks
# ---------------------------------------------------------------------------

PPC_LEVELS = (0.05, 0.25, 0.50, 0.75, 0.95)


def ppc_export(
    fit: PosteriorFit,
    data: Dataset,
    n_draws: int,
    out_dir: str | Path,
    seed: int = 0,
):
    """Write posterior-predictive check tables.

    Emits the observed (y, v) table, ``n_draws`` replicate tables, and a
    quantile comparison (observed vs replicate quantiles over domains at
    the 5/25/50/75/95 percent levels).  Returns the replicate draws and
    the comparison rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = spawn_rng(seed, 4)
    replicates = draw_replicates(fit, data, n_draws, rng)

    with (out_dir / "ppc_observed.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "y", "v"])
        for i in range(data.n_domains):
            writer.writerow([int(data.domain_id[i]), f"{data.y[i]:.17g}", f"{data.v[i]:.17g}"])

    for d, rep in enumerate(replicates, start=1):
        with (out_dir / f"ppc_replicate_{d:02d}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["domain_id", "y", "v"])
            for i in range(rep.data.n_domains):
                writer.writerow(
                    [int(rep.data.domain_id[i]), f"{rep.data.y[i]:.17g}", f"{rep.data.v[i]:.17g}"]
                )

    rows = []
    for variable, observed in (("y", data.y), ("v", data.v)):
        rep_values = np.array([getattr(rep.data, variable) for rep in replicates])
        rep_quantiles = np.quantile(rep_values, PPC_LEVELS, axis=1)  # (levels, n_draws)
        obs_quantiles = np.quantile(observed, PPC_LEVELS)
        for j, level in enumerate(PPC_LEVELS):
            rows.append(
                {
                    "variable": variable,
                    "level": level,
                    "observed": float(obs_quantiles[j]),
                    "replicate_mean": float(rep_quantiles[j].mean()),
                    "replicate_lo": float(np.quantile(rep_quantiles[j], 0.05)),
                    "replicate_hi": float(np.quantile(rep_quantiles[j], 0.95)),
                }
            )
    with (out_dir / "ppc_quantiles.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["variable", "level", "observed", "replicate_mean", "replicate_lo", "replicate_hi"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()}
            )
    return replicates, rows


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def write_coverage_csvs(report: CoverageReport, out_dir: str | Path, prefix: str = "") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    # aggregate must equal the mean of per-domain values
    for k, method in enumerate(report.methods):
        assert abs(summary[method][0] - report.coverage[k].mean()) < 1e-12

    with (out_dir / f"{prefix}coverage_by_domain.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "n", "method", "coverage", "mean_length"])
        for k, method in enumerate(report.methods):
            for i in range(len(report.domain_id)):
                writer.writerow(
                    [
                        int(report.domain_id[i]),
                        int(report.n[i]),
                        method,
                        f"{report.coverage[k, i]:.17g}",
                        f"{report.mean_length[k, i]:.17g}",
                    ]
                )
    with (out_dir / f"{prefix}coverage_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "coverage", "length"])
        for method in report.methods:
            cov, length = summary[method]
            writer.writerow([method, f"{cov:.17g}", f"{length:.17g}"])


def write_study_adjustments(result: StudyResult, out_dir: str | Path) -> None:
    """Mean per-domain adjustments over the study's calibration runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "adjustments.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "a_i", "c_i", "A_ok"])
        for i, domain in enumerate(result.report.domain_id):
            writer.writerow(
                [
                    int(domain),
                    f"{result.mean_bias[i]:.17g}",
                    f"{result.mean_scale[i]:.17g}",
                    f"{result.mean_n_ok:.17g}",
                ]
            )
