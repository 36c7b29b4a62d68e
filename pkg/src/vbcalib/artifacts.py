"""Persisted artifacts: fit files, adjustment tables, interval tables.

The fit artifact is a single JSON document holding the estimator config
echo, per-parameter summaries, the variational parameters when present,
and (optionally but by default) the stored posterior draws -- enough for
the calibration pipeline to resume without refitting.  Floats are written
with full round-trip precision so identical runs produce identical bytes.

Adjustments are two CSV files: ``adjustments.csv`` with per-domain rows
``domain_id,a_i,c_i,A_ok`` and ``t_quantiles.csv`` holding each domain's
sorted adjusted-pivot values in long form (``domain_id,rank,t_value``).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .advi import PosteriorFit, VariationalParams
from .calibration import CalibrationAdjustment, CalibrationResult
from .data import DataError
from .models import FixedHypers

FIT_SCHEMA = "vbcalib-fit-v1"


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def save_fit(fit: PosteriorFit, path: str | Path, include_draws: bool = True) -> None:
    doc = {
        "schema": FIT_SCHEMA,
        "model": fit.model_kind,
        "estimator": fit.estimator,
        "n_domains": fit.n_domains,
        "p_x": fit.p_x,
        "p_z": fit.p_z,
        "theta_start": fit.theta_slice.start or 0,
        "theta_stop": fit.theta_slice.stop,
        "converged": bool(fit.converged),
        "n_iters": int(fit.n_iters),
        "final_elbo": None if not np.isfinite(fit.final_elbo) else float(fit.final_elbo),
        "config": fit.config,
        "notes": fit.notes,
        "fixed": None
        if fit.fixed is None
        else {"beta": fit.fixed.beta.tolist(), "tau_u2": fit.fixed.tau_u2},
        "param_names": fit.param_names,
        "m": fit.m.tolist(),
        "v": fit.v.tolist(),
        "variational": None
        if fit.variational is None
        else {"mu": fit.variational.mu.tolist(), "omega": fit.variational.omega.tolist()},
        "elbo_trace": None if fit.elbo_trace is None else fit.elbo_trace.tolist(),
        "draws": fit.draws.tolist() if include_draws else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_fit(path: str | Path) -> PosteriorFit:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read fit artifact ({exc})") from exc
    if doc.get("schema") != FIT_SCHEMA:
        raise DataError(f"{path}: unexpected fit schema {doc.get('schema')!r}")
    draws = doc.get("draws")
    if draws is None:
        raise DataError(
            f"{path}: fit artifact was saved without draws; refit with draws enabled to calibrate"
        )
    variational = doc.get("variational")
    fixed = doc.get("fixed")
    trace = doc.get("elbo_trace")
    return PosteriorFit(
        model_kind=doc["model"],
        estimator=doc["estimator"],
        param_names=list(doc["param_names"]),
        n_domains=int(doc["n_domains"]),
        p_x=int(doc["p_x"]),
        p_z=int(doc["p_z"]),
        draws=np.asarray(draws, dtype=float),
        m=np.asarray(doc["m"], dtype=float),
        v=np.asarray(doc["v"], dtype=float),
        converged=bool(doc["converged"]),
        theta_slice=slice(int(doc["theta_start"]), int(doc["theta_stop"])),
        fixed=None
        if fixed is None
        else FixedHypers(beta=np.asarray(fixed["beta"]), tau_u2=float(fixed["tau_u2"])),
        variational=None
        if variational is None
        else VariationalParams(mu=np.asarray(variational["mu"]), omega=np.asarray(variational["omega"])),
        elbo_trace=None if trace is None else np.asarray(trace, dtype=float),
        n_iters=int(doc["n_iters"]),
        final_elbo=float("nan") if doc["final_elbo"] is None else float(doc["final_elbo"]),
        config=dict(doc.get("config") or {}),
        notes=dict(doc.get("notes") or {}),
    )


def save_adjustments(
    adjustment: CalibrationAdjustment,
    domain_id: np.ndarray,
    out_dir: str | Path,
) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adj_path = out_dir / "adjustments.csv"
    with adj_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "a_i", "c_i", "A_ok"])
        for i, domain in enumerate(domain_id):
            writer.writerow(
                [int(domain), _fmt(adjustment.bias[i]), _fmt(adjustment.scale[i]), adjustment.n_ok]
            )
    quant_path = out_dir / "t_quantiles.csv"
    with quant_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "rank", "t_value"])
        for i, domain in enumerate(domain_id):
            for rank, value in enumerate(adjustment.pivot_table[:, i], start=1):
                writer.writerow([int(domain), rank, _fmt(value)])
    return adj_path, quant_path


def load_adjustments(out_dir: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Read back (domain_id, bias, scale, pivot_table, n_ok)."""
    out_dir = Path(out_dir)
    with (out_dir / "adjustments.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    domain_id = np.array([int(r["domain_id"]) for r in rows])
    bias = np.array([float(r["a_i"]) for r in rows])
    scale = np.array([float(r["c_i"]) for r in rows])
    n_ok = int(rows[0]["A_ok"]) if rows else 0
    table = np.full((n_ok, len(rows)), np.nan)
    index = {int(domain): i for i, domain in enumerate(domain_id)}
    with (out_dir / "t_quantiles.csv").open(newline="") as fh:
        for r in csv.DictReader(fh):
            table[int(r["rank"]) - 1, index[int(r["domain_id"])]] = float(r["t_value"])
    return domain_id, bias, scale, table, n_ok


def save_intervals(
    result: CalibrationResult,
    domain_id: np.ndarray,
    out_dir: str | Path,
) -> Path:
    """Wide per-domain table with summaries and all three interval methods."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "intervals.csv"
    iv = result.intervals
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "domain_id",
                "m",
                "v",
                "m_tilde",
                "v_tilde",
                "original_lo",
                "original_hi",
                "rescaled_lo",
                "rescaled_hi",
                "pivotal_lo",
                "pivotal_hi",
            ]
        )
        for i, domain in enumerate(domain_id):
            writer.writerow(
                [
                    int(domain),
                    _fmt(result.m[i]),
                    _fmt(result.v[i]),
                    _fmt(iv.m_tilde[i]),
                    _fmt(iv.v_tilde[i]),
                    _fmt(result.original[i, 0]),
                    _fmt(result.original[i, 1]),
                    _fmt(iv.rescaled[i, 0]),
                    _fmt(iv.rescaled[i, 1]),
                    _fmt(iv.pivotal[i, 0]),
                    _fmt(iv.pivotal[i, 1]),
                ]
            )
    return path


def save_config_echo(config: dict, out_dir: str | Path, name: str = "config_echo.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    return path
