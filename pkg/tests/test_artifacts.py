from __future__ import annotations

import numpy as np
import pytest

from conftest import random_fh_dataset
from helpers import DirectEstimator
from vbcalib.advi import AdviConfig, fit
from vbcalib.artifacts import load_adjustments, load_fit, save_adjustments, save_fit
from vbcalib.calibration import CalibrationConfig, calibrate
from vbcalib.data import DataError
from vbcalib.models import build_model


class TestFitArtifact:
    def test_round_trip_preserves_everything(self, rng, tmp_path):
        data = random_fh_dataset(rng, n=4)
        result = fit(build_model("fh", data), AdviConfig(max_iters=300, seed=1))
        path = tmp_path / "fit.json"
        save_fit(result, path)
        back = load_fit(path)
        assert back.model_kind == result.model_kind
        assert back.param_names == result.param_names
        assert np.array_equal(back.draws, result.draws)
        assert np.array_equal(back.m, result.m)
        assert np.array_equal(back.v, result.v)
        assert np.array_equal(back.variational.mu, result.variational.mu)
        assert back.theta_slice == result.theta_slice
        assert back.config == result.config

    def test_artifact_without_draws_refuses_calibration_load(self, rng, tmp_path):
        data = random_fh_dataset(rng, n=3)
        result = fit(build_model("fh", data), AdviConfig(max_iters=200, seed=1))
        path = tmp_path / "fit.json"
        save_fit(result, path, include_draws=False)
        with pytest.raises(DataError, match="without draws"):
            load_fit(path)

    def test_bad_schema_rejected(self, tmp_path):
        path = tmp_path / "fit.json"
        path.write_text('{"schema": "something-else"}')
        with pytest.raises(DataError, match="schema"):
            load_fit(path)


class TestAdjustmentArtifact:
    def test_round_trip(self, rng, tmp_path):
        data = random_fh_dataset(rng, n=5)
        est = DirectEstimator(n_draws=200)
        initial = est.fit(data, seed=1)
        result = calibrate(initial, data, est, CalibrationConfig(n_replicates=20, seed=2))
        save_adjustments(result.adjustment, data.domain_id, tmp_path)
        domain_id, bias, scale, table, n_ok = load_adjustments(tmp_path)
        assert np.array_equal(domain_id, data.domain_id)
        assert np.array_equal(bias, result.adjustment.bias)
        assert np.array_equal(scale, result.adjustment.scale)
        assert np.array_equal(table, result.adjustment.pivot_table)
        assert n_ok == result.adjustment.n_ok
