from __future__ import annotations

import numpy as np
import pytest

from conftest import random_fh_dataset
from vbcalib.data import Dataset
from vbcalib.gibbs import GibbsConfig, UnsupportedPriorError, gibbs_fit_fh
from vbcalib.models import FhSimConfig, FixedHypers, simulate_fh
from vbcalib.priors import HyperPriorSpec, PriorSpec


def single_domain(y=2.0, v=1.0) -> Dataset:
    return Dataset(domain_id=[1], y=[y], v=[v], n=[1], x=[[0.0]], z=np.empty((1, 0)))


class TestGibbsFh:
    def test_conjugate_single_domain(self):
        config = GibbsConfig(n_iters=11_000, burn_in=1000, seed=1)
        result = gibbs_fit_fh(single_domain(), HyperPriorSpec(), config, fixed=FixedHypers(beta=[0.0], tau_u2=1.0))
        assert result.draws.shape[0] == 10_000
        assert result.m[0] == pytest.approx(1.0, abs=0.02)
        assert result.v[0] == pytest.approx(0.5, abs=0.03)

    def test_degenerate_likelihood_limit(self, rng):
        data = random_fh_dataset(rng, n=4)
        tiny = data.replace_direct(y=data.y, v=np.full(4, 1e-8))
        result = gibbs_fit_fh(tiny, HyperPriorSpec(), GibbsConfig(n_iters=2000, burn_in=500, seed=0))
        assert np.allclose(result.theta_m, tiny.y, atol=1e-3)

    def test_deterministic_given_seed(self, rng):
        data = random_fh_dataset(rng, n=5)
        config = GibbsConfig(n_iters=1500, burn_in=200, seed=9)
        a = gibbs_fit_fh(data, HyperPriorSpec(), config)
        b = gibbs_fit_fh(data, HyperPriorSpec(), config)
        assert np.array_equal(a.draws, b.draws)

    def test_thinning_counts(self, rng):
        data = random_fh_dataset(rng, n=3)
        result = gibbs_fit_fh(data, HyperPriorSpec(), GibbsConfig(n_iters=1100, burn_in=100, thin=10, seed=0))
        assert result.draws.shape[0] == 100

    def test_half_normal_prior_substitution_is_flagged(self, rng):
        data = random_fh_dataset(rng, n=3)
        result = gibbs_fit_fh(data, HyperPriorSpec(), GibbsConfig(n_iters=200, burn_in=50, seed=0))
        assert "prior_substitution" in result.notes

    def test_inverse_gamma_prior_used_directly(self, rng):
        data = random_fh_dataset(rng, n=3)
        hyper = HyperPriorSpec(tau_u2=PriorSpec("inverse_gamma", (2.0, 1.5)))
        result = gibbs_fit_fh(data, hyper, GibbsConfig(n_iters=200, burn_in=50, seed=0))
        assert "prior_substitution" not in result.notes

    def test_nonconjugate_prior_rejected(self, rng):
        data = random_fh_dataset(rng, n=3)
        hyper = HyperPriorSpec(beta=PriorSpec("flat"))
        with pytest.raises(UnsupportedPriorError, match="normal prior on beta"):
            gibbs_fit_fh(data, hyper, GibbsConfig(n_iters=200, burn_in=50, seed=0))
        hyper2 = HyperPriorSpec(tau_u2=PriorSpec("flat"))
        with pytest.raises(UnsupportedPriorError, match="tau_u2"):
            gibbs_fit_fh(data, hyper2, GibbsConfig(n_iters=200, burn_in=50, seed=0))

    def test_geweke_style_mean_agreement(self):
        truth, data = simulate_fh(FhSimConfig(), 60, np.random.default_rng(21))
        result = gibbs_fit_fh(data, HyperPriorSpec(), GibbsConfig(n_iters=8000, burn_in=2000, seed=3))
        draws = result.theta_draws
        k = draws.shape[0]
        head = draws[: k // 10]
        tail = draws[k // 2 :]
        se = np.sqrt(head.var(axis=0, ddof=1) / head.shape[0] + tail.var(axis=0, ddof=1) / tail.shape[0])
        # chains autocorrelate, so allow a mixing inflation factor in the SE
        frac = np.mean(np.abs(head.mean(axis=0) - tail.mean(axis=0)) < 3.0 * 2.0 * se)
        assert frac >= 0.95

    def test_known_hyper_shrinkage_closed_form(self):
        rng = np.random.default_rng(17)
        truth, data = simulate_fh(FhSimConfig(tau_u2=2.0, sigma2=0.5), 40, rng)
        fixed = FixedHypers(beta=truth.beta, tau_u2=2.0)
        result = gibbs_fit_fh(data, HyperPriorSpec(), GibbsConfig(n_iters=21_000, burn_in=1000, seed=2), fixed=fixed)
        shrink = 2.0 / (2.0 + data.v)
        expect_m = shrink * data.y + (1.0 - shrink) * (data.x @ truth.beta)
        expect_v = shrink * data.v
        mc = 3.0 * np.sqrt(expect_v / result.draws.shape[0])
        assert np.all(np.abs(result.theta_m - expect_m) < mc + 1e-9)
        assert np.allclose(result.theta_v, expect_v, rtol=0.12)
