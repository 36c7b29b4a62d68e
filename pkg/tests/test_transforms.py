from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_fh_dataset, random_fhv_dataset
from vbcalib.data import DataError
from vbcalib.models import FhParams, FhvParams, build_model
from vbcalib.transforms import TransformMap


class TestTransformMap:
    def test_unit_variance_maps_to_zero(self, rng):
        data = random_fh_dataset(rng, n=2)
        model = build_model("fh", data)
        params = FhParams(theta=np.zeros(2), beta=np.zeros(2), tau_u2=1.0)
        u = model.unconstrain(params)
        assert u[-1] == 0.0  # log 1

    def test_theta_is_identity(self, rng):
        data = random_fh_dataset(rng, n=3)
        model = build_model("fh", data)
        params = FhParams(theta=[1.5, -2.0, 0.3], beta=np.zeros(2), tau_u2=2.0)
        u = model.unconstrain(params)
        assert np.array_equal(u[:3], params.theta)

    def test_nonpositive_under_log_rejected(self):
        tmap = TransformMap(log_mask=np.array([False, True]))
        with pytest.raises(DataError, match="positive"):
            tmap.unconstrain(np.array([0.0, -1.0]))

    def test_log_jacobian_is_sum_of_log_coordinates(self):
        tmap = TransformMap(log_mask=np.array([False, True, True]))
        u = np.array([5.0, 0.3, -2.0])
        assert tmap.log_jacobian(u) == pytest.approx(0.3 - 2.0)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_fhv(self, seed):
        rng = np.random.default_rng(seed)
        data = random_fhv_dataset(rng, n=3)
        model = build_model("fhv", data)
        params = FhvParams(
            theta=rng.normal(size=3),
            beta=rng.normal(size=2),
            tau_u2=rng.uniform(0.1, 5.0),
            sigma2=rng.uniform(0.1, 5.0, size=3),
            a=rng.uniform(0.1, 10.0),
            gamma=rng.normal(size=2),
        )
        x = model.pack(params)
        back = model.constrain(model.unconstrain(params))
        assert np.allclose(back, x, rtol=0, atol=1e-12)

    def test_batch_round_trip(self, rng):
        tmap = TransformMap(log_mask=np.array([False, True, False, True]))
        x = np.abs(rng.normal(size=(10, 4))) + 0.1
        assert np.allclose(tmap.constrain(tmap.unconstrain(x)), x, atol=1e-12)
