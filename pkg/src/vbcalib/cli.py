"""Command-line orchestration.

Subcommands: ``simulate``, ``fit``, ``calibrate``, ``study``, ``workflow``,
``ppc``.  Options may come from a JSON config file (``--config``) with
sections named after the option groups; explicit command-line flags win
over the config file, which wins over built-in defaults.  Every command
writes a fully resolved config echo next to its artifacts and is
deterministic given the seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 insufficient successful replicates.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .advi import AdviConfig, FitDivergenceError
from .artifacts import load_fit, save_adjustments, save_config_echo, save_fit, save_intervals
from .calibration import CalibrationConfig, InsufficientReplicatesError, calibrate
from .data import DataError, read_dataset, write_dataset
from .estimators import make_estimator
from .gibbs import GibbsConfig
from .harness import (
    StudyAbortedError,
    StudyConfig,
    ppc_export,
    run_fh_study,
    run_production_workflow,
    write_coverage_csvs,
    write_study_adjustments,
)
from .models import FhSimConfig, FhvSimConfig, simulate_fh, simulate_fhv
from .priors import HyperPriorSpec, PriorSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_REPLICATES = 4


def _echo(message: str) -> None:
    click.echo(message, err=True)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return doc


def _resolve(ctx: click.Context, file_config: dict, section: str, mapping: dict) -> dict:
    """Merge click values with the config file; explicit flags win."""
    block = dict(file_config.get(section, {}))
    resolved = {}
    for config_key, param_name in mapping.items():
        value = ctx.params.get(param_name)
        source = ctx.get_parameter_source(param_name)
        if source is not None and source.name == "COMMANDLINE":
            resolved[config_key] = value
        elif config_key in block:
            resolved[config_key] = block[config_key]
        else:
            resolved[config_key] = value
    return resolved


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in str(text).split(",") if part != "")
    except ValueError as exc:
        raise DataError(f"expected a comma-separated list of numbers, got {text!r}") from exc


_ADVI_MAP = {
    "n_grad_samples": "grad_samples",
    "step_size": "step_size",
    "max_iters": "max_iters",
    "elbo_window": "elbo_window",
    "rel_tol": "rel_tol",
    "n_elbo_samples": "elbo_samples",
    "n_posterior_draws": "posterior_draws",
    "init_omega": "init_omega",
}
_GIBBS_MAP = {"n_iters": "gibbs_iters", "burn_in": "gibbs_burn_in", "thin": "gibbs_thin"}
_CAL_MAP = {
    "n_replicates": "replicates",
    "gamma": "gamma",
    "bias_correction": "bias_correction",
    "strict_inversion": "strict_inversion",
    "min_ok_fraction": "min_ok_fraction",
    "scale_floor": "c_floor",
    "workers": "workers",
}


def estimator_options(fn):
    for opt in reversed(
        [
            click.option("--estimator", type=click.Choice(["vb", "gibbs"]), default="vb", show_default=True),
            click.option("--grad-samples", type=int, default=10, show_default=True, help="MC samples per gradient."),
            click.option("--step-size", type=float, default=0.2, show_default=True),
            click.option("--max-iters", type=int, default=20000, show_default=True),
            click.option("--elbo-window", type=int, default=100, show_default=True),
            click.option("--rel-tol", type=float, default=1e-4, show_default=True),
            click.option("--elbo-samples", type=int, default=100, show_default=True),
            click.option("--posterior-draws", type=int, default=1000, show_default=True),
            click.option("--init-omega", type=float, default=-1.0, show_default=True, help="Initial log-sd of the variational factors."),
            click.option("--gibbs-iters", type=int, default=6000, show_default=True),
            click.option("--gibbs-burn-in", type=int, default=1000, show_default=True),
            click.option("--gibbs-thin", type=int, default=1, show_default=True),
        ]
    ):
        fn = opt(fn)
    return fn


def calibration_options(fn):
    for opt in reversed(
        [
            click.option("--replicates", "-A", type=int, default=200, show_default=True, help="Replicate datasets per calibration."),
            click.option("--gamma", type=float, default=0.25, show_default=True, help="Tail level; nominal coverage is 1 - 2*gamma."),
            click.option("--bias-correction/--no-bias-correction", default=False, show_default=True),
            click.option("--strict-inversion", is_flag=True, default=False),
            click.option("--min-ok-fraction", type=float, default=0.9, show_default=True),
            click.option("--c-floor", type=float, default=1e-3, show_default=True),
        ]
    ):
        fn = opt(fn)
    return fn


def common_options(fn):
    for opt in reversed(
        [
            click.option("--config", "config_path", type=str, default=None, help="JSON config file."),
            click.option("--seed", type=int, default=0, show_default=True),
            click.option("--workers", type=int, default=1, show_default=True, help="Parallel replicate fits; never changes results."),
        ]
    ):
        fn = opt(fn)
    return fn


def _build_estimator_configs(ctx, file_config):
    advi_kwargs = _resolve(ctx, file_config, "advi", _ADVI_MAP)
    gibbs_kwargs = _resolve(ctx, file_config, "gibbs", _GIBBS_MAP)
    seed = ctx.params.get("seed", 0)
    advi = AdviConfig(seed=seed, **advi_kwargs)
    gibbs = GibbsConfig(seed=seed, **gibbs_kwargs)
    return advi, gibbs


def _build_calibration(ctx, file_config):
    kwargs = _resolve(ctx, file_config, "calibration", _CAL_MAP)
    return CalibrationConfig(seed=ctx.params.get("seed", 0), **kwargs)


def _build_hyper(file_config) -> HyperPriorSpec:
    """Hyperpriors from the config file's ``hyper`` section, if present.

    Each entry is ``{"family": name, "params": [..]}``; missing entries
    keep the package defaults.
    """
    block = file_config.get("hyper", {})
    kwargs = {}
    for name in ("beta", "tau_u2", "a", "gamma"):
        if name in block:
            entry = block[name]
            kwargs[name] = PriorSpec(entry["family"], tuple(entry.get("params", ())))
    return HyperPriorSpec(**kwargs)


def _build_sim_configs(file_config) -> tuple[FhSimConfig, FhvSimConfig]:
    """Truth-generation settings from the ``sim_fh``/``sim_fhv`` sections."""
    fh_block = dict(file_config.get("sim_fh", {}))
    fhv_block = dict(file_config.get("sim_fhv", {}))
    for block in (fh_block, fhv_block):
        for key in ("beta", "gamma"):
            if key in block:
                block[key] = tuple(block[key])
    return FhSimConfig(**fh_block), FhvSimConfig(**fhv_block)


@click.group()
def cli():
    """Area-level model fitting with resampling-calibrated intervals."""


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fh", show_default=True)
@click.option("--domains", "-N", type=int, default=150, show_default=True)
@click.option("--beta", type=str, default="1.0", show_default=True, help="Comma-separated coefficients.")
@click.option("--tau-u2", type=float, default=1.0, show_default=True)
@click.option("--sigma2", type=float, default=1.0, show_default=True, help="Sampling variance (fh only).")
@click.option("--scale-a", type=float, default=6.0, show_default=True, help="Variance-likelihood scale (fhv).")
@click.option("--gamma-coef", type=str, default="-0.7", show_default=True, help="Variance-model coefficients (fhv).")
@click.option("--n-low", type=int, default=2, show_default=True)
@click.option("--n-high", type=int, default=200, show_default=True)
@click.option("--out", type=str, required=True, help="Output dataset path.")
@click.pass_context
def simulate(ctx, config_path, seed, workers, model, domains, beta, tau_u2, sigma2, scale_a, gamma_coef, n_low, n_high, out):
    """Emit a synthetic dataset with known truth (truth echoed as JSON)."""
    _load_config_file(config_path)
    rng = np.random.default_rng(seed)
    if model == "fh":
        sim = FhSimConfig(beta=_parse_floats(beta), tau_u2=tau_u2, sigma2=sigma2)
        truth, data = simulate_fh(sim, domains, rng)
        truth_doc = {"beta": list(truth.beta), "tau_u2": truth.tau_u2, "theta": list(truth.theta)}
    else:
        sim = FhvSimConfig(
            beta=_parse_floats(beta), tau_u2=tau_u2, a=scale_a, gamma=_parse_floats(gamma_coef),
            n_low=n_low, n_high=n_high,
        )
        truth, data = simulate_fhv(sim, domains, rng)
        truth_doc = {
            "beta": list(truth.beta), "tau_u2": truth.tau_u2, "a": truth.a,
            "gamma": list(truth.gamma), "theta": list(truth.theta), "sigma2": list(truth.sigma2),
        }
    write_dataset(data, out)
    truth_path = Path(out).with_suffix(".truth.json")
    truth_path.write_text(json.dumps(truth_doc, sort_keys=True) + "\n")
    _echo(f"wrote {out} ({domains} domains) and {truth_path}")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@estimator_options
@click.option("--data", "data_path", type=str, required=True)
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fh", show_default=True)
@click.option("--out", type=str, required=True, help="Fit artifact path (JSON).")
@click.option("--emit-draws/--no-emit-draws", default=True, show_default=True)
@click.pass_context
def fit(ctx, config_path, seed, workers, estimator, data_path, model, out, emit_draws, **_):
    """Fit the model once and persist the fit artifact."""
    file_config = _load_config_file(config_path)
    data = _read_data(data_path)
    advi, gibbs = _build_estimator_configs(ctx, file_config)
    est = make_estimator(estimator, model, _build_hyper(file_config), advi, gibbs)
    result = est.fit(data, seed=seed)
    save_fit(result, out, include_draws=emit_draws)
    echo_path = Path(out).with_suffix(".config.json")
    save_config_echo(
        {"command": "fit", "data": str(data_path), "model": model, "estimator": estimator,
         "seed": seed, "emit_draws": emit_draws, "advi": result.config if estimator == "vb" else dataclasses.asdict(advi),
         "gibbs": dataclasses.asdict(gibbs)},
        echo_path.parent, name=echo_path.name,
    )
    _echo(f"fit written to {out} (converged={result.converged}, iters={result.n_iters})")


def _read_data(path: str):
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file not found: {p}")
    return read_dataset(p)


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@estimator_options
@calibration_options
@click.option("--data", "data_path", type=str, required=True)
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fh", show_default=True)
@click.option("--fit", "fit_path", type=str, default=None, help="Existing fit artifact; omit with --refit.")
@click.option("--refit", is_flag=True, default=False, help="Fit from scratch instead of loading an artifact.")
@click.option("--out-dir", type=str, required=True)
@click.pass_context
def calibrate_cmd(ctx, config_path, seed, workers, estimator, data_path, model, fit_path, refit, out_dir, **_):
    """Run the replicate-refit calibration and write adjustments/intervals."""
    file_config = _load_config_file(config_path)
    data = _read_data(data_path)
    advi, gibbs = _build_estimator_configs(ctx, file_config)
    cal = _build_calibration(ctx, file_config)
    est = make_estimator(estimator, model, _build_hyper(file_config), advi, gibbs)

    if fit_path is None and not refit:
        raise DataError("provide --fit ARTIFACT or pass --refit")
    if refit:
        initial = est.fit(data, seed=seed)
    else:
        initial = load_fit(fit_path)
        if initial.model_kind != model:
            raise DataError(f"fit artifact is for model '{initial.model_kind}', requested '{model}'")

    result = calibrate(initial, data, est, cal, seed=seed)
    out = Path(out_dir)
    save_adjustments(result.adjustment, data.domain_id, out)
    save_intervals(result, data.domain_id, out)
    save_config_echo(
        {"command": "calibrate", "data": str(data_path), "model": model, "estimator": estimator,
         "seed": seed, "workers": workers, "calibration": dataclasses.asdict(cal),
         "advi": dataclasses.asdict(advi), "gibbs": dataclasses.asdict(gibbs)},
        out,
    )
    for summary in result.summaries:
        _echo(
            f"replicate alpha={summary.alpha} status={summary.status} "
            f"iters={summary.n_iters} elbo={summary.final_elbo}"
        )
    n_ok = result.adjustment.n_ok
    _echo(f"calibration done: A_ok={n_ok}/{cal.n_replicates}, artifacts in {out}")


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@estimator_options
@calibration_options
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fh", show_default=True)
@click.option("--domains", "-N", type=int, default=150, show_default=True)
@click.option("--datasets", "-S", type=int, default=100, show_default=True)
@click.option("--truth-source", type=click.Choice(["generative", "posterior_of_initial_fit"]), default="generative", show_default=True)
@click.option("--full", is_flag=True, default=False, help="Full-scale profile: S=200 datasets, A=500 replicates.")
@click.option("--out-dir", type=str, required=True)
@click.pass_context
def study(ctx, config_path, seed, workers, estimator, model, domains, datasets, truth_source, full, out_dir, **_):
    """Monte Carlo coverage study over simulated datasets."""
    file_config = _load_config_file(config_path)
    advi, gibbs = _build_estimator_configs(ctx, file_config)
    cal = _build_calibration(ctx, file_config)
    cal = dataclasses.replace(cal, workers=workers)
    if full:
        datasets = 200
        cal = dataclasses.replace(cal, n_replicates=500)
    sim_fh, sim_fhv = _build_sim_configs(file_config)
    config = StudyConfig(
        model=model, n_domains=domains, n_datasets=datasets, truth_source=truth_source,
        estimator=estimator, hyper=_build_hyper(file_config), sim_fh=sim_fh, sim_fhv=sim_fhv,
        advi=advi, gibbs=gibbs, calibration=cal, seed=seed,
    )
    out = Path(out_dir)
    try:
        result = run_fh_study(config)
    except StudyAbortedError as exc:
        if exc.partial is not None:
            write_coverage_csvs(exc.partial.report, out, prefix="partial_")
            _echo(f"study aborted; partial results ({exc.partial.n_datasets} datasets) saved")
        raise
    write_coverage_csvs(result.report, out)
    write_study_adjustments(result, out)
    save_config_echo(
        {"command": "study", "model": model, "estimator": estimator, "domains": domains,
         "datasets": datasets, "truth_source": truth_source, "seed": seed, "workers": workers,
         "calibration": dataclasses.asdict(cal), "advi": dataclasses.asdict(advi),
         "gibbs": dataclasses.asdict(gibbs)},
        out,
    )
    for method, (cov, length) in result.report.summary().items():
        _echo(f"{method}: coverage={cov:.4f} length={length:.4f}")


# ---------------------------------------------------------------------------
# workflow
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@estimator_options
@calibration_options
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fhv", show_default=True)
@click.option("--domains", "-N", type=int, default=100, show_default=True)
@click.option("--months", "-M", type=int, default=3, show_default=True)
@click.option("--tests", "-B", type=int, default=100, show_default=True)
@click.option("--out-dir", type=str, required=True)
@click.pass_context
def workflow(ctx, config_path, seed, workers, estimator, model, domains, months, tests, out_dir, **_):
    """Averaged-adjustment production workflow on synthetic data."""
    file_config = _load_config_file(config_path)
    advi, gibbs = _build_estimator_configs(ctx, file_config)
    cal = _build_calibration(ctx, file_config)
    cal = dataclasses.replace(cal, workers=workers)
    need = cal.n_replicates + tests
    if advi.n_posterior_draws < need:
        advi = dataclasses.replace(advi, n_posterior_draws=need)
    sim_fh, sim_fhv = _build_sim_configs(file_config)
    config = StudyConfig(
        model=model, n_domains=domains, n_datasets=1, estimator=estimator,
        hyper=_build_hyper(file_config), sim_fh=sim_fh, sim_fhv=sim_fhv,
        advi=advi, gibbs=gibbs, calibration=cal, seed=seed,
    )
    result = run_production_workflow(config, n_months=months, n_tests=tests)
    out = Path(out_dir)
    for month, report in enumerate(result.monthly_reports, start=1):
        write_coverage_csvs(report, out, prefix=f"month_{month:02d}_")
    write_coverage_csvs(result.averaged_report, out, prefix="averaged_")
    with (out / "adjustments.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "a_i", "c_i", "A_ok"])
        for i, domain in enumerate(result.monthly_reports[0].domain_id):
            writer.writerow(
                [int(domain), f"{result.averaged.bias[i]:.17g}", f"{result.averaged.scale[i]:.17g}",
                 result.averaged.pivot_table.shape[0]]
            )
    save_config_echo(
        {"command": "workflow", "model": model, "estimator": estimator, "domains": domains,
         "months": months, "tests": tests, "seed": seed, "workers": workers,
         "calibration": dataclasses.asdict(cal), "advi": dataclasses.asdict(advi),
         "gibbs": dataclasses.asdict(gibbs)},
        out,
    )
    for method, (cov, length) in result.averaged_report.summary().items():
        _echo(f"averaged {method}: coverage={cov:.4f} length={length:.4f}")


# ---------------------------------------------------------------------------
# ppc
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@estimator_options
@click.option("--data", "data_path", type=str, required=True)
@click.option("--model", type=click.Choice(["fh", "fhv"]), default="fh", show_default=True)
@click.option("--fit", "fit_path", type=str, default=None)
@click.option("--refit", is_flag=True, default=False)
@click.option("--draws", type=int, default=16, show_default=True, help="Replicate tables to emit.")
@click.option("--out-dir", type=str, required=True)
@click.pass_context
def ppc(ctx, config_path, seed, workers, estimator, data_path, model, fit_path, refit, draws, out_dir, **_):
    """Posterior predictive check tables (observed vs replicate data)."""
    file_config = _load_config_file(config_path)
    data = _read_data(data_path)
    advi, gibbs = _build_estimator_configs(ctx, file_config)
    if fit_path is None and not refit:
        raise DataError("provide --fit ARTIFACT or pass --refit")
    if refit:
        est = make_estimator(estimator, model, _build_hyper(file_config), advi, gibbs)
        initial = est.fit(data, seed=seed)
    else:
        initial = load_fit(fit_path)
    ppc_export(initial, data, draws, out_dir, seed=seed)
    save_config_echo(
        {"command": "ppc", "data": str(data_path), "model": model, "estimator": estimator,
         "seed": seed, "draws": draws},
        Path(out_dir),
    )
    _echo(f"ppc tables written to {out_dir}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with stable exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        _echo(f"error: {exc.format_message()}")
        return EXIT_CONFIG
    except DataError as exc:
        _echo(f"error: {exc}")
        return EXIT_CONFIG
    except InsufficientReplicatesError as exc:
        _echo(f"error: {exc}")
        return EXIT_REPLICATES
    except StudyAbortedError as exc:
        cause = exc.__cause__
        if isinstance(cause, InsufficientReplicatesError):
            _echo(f"error: {exc}")
            return EXIT_REPLICATES
        _echo(f"error: {exc}")
        return EXIT_NUMERICAL
    except FitDivergenceError as exc:
        _echo(f"error: {exc}")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
