"""Uniform fitting interface over the variational and Gibbs estimators.

An estimator bundles a model choice with its settings and exposes
``fit(data, seed)``; the calibration pipeline and the study harness treat
both implementations interchangeably through this surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from .advi import AdviConfig, PosteriorFit
from .advi import fit as advi_fit
from .data import DataError, Dataset
from .gibbs import GibbsConfig, gibbs_fit_fh
from .models import FixedHypers, build_model
from .priors import HyperPriorSpec


class Estimator(Protocol):
    def fit(self, data: Dataset, seed: int | None = None) -> PosteriorFit: ...


@dataclass(frozen=True)
class AdviEstimator:
    model_kind: str = "fh"
    hyper: HyperPriorSpec = field(default_factory=HyperPriorSpec)
    config: AdviConfig = field(default_factory=AdviConfig)
    fixed: FixedHypers | None = None

    def fit(self, data: Dataset, seed: int | None = None) -> PosteriorFit:
        model = build_model(self.model_kind, data, self.hyper, fixed=self.fixed)
        return advi_fit(model, self.config, seed=seed)


@dataclass(frozen=True)
class GibbsEstimator:
    hyper: HyperPriorSpec = field(default_factory=HyperPriorSpec)
    config: GibbsConfig = field(default_factory=GibbsConfig)
    fixed: FixedHypers | None = None
    model_kind: str = "fh"

    def __post_init__(self):
        if self.model_kind != "fh":
            raise DataError("the gibbs estimator supports the fh model only")

    def fit(self, data: Dataset, seed: int | None = None) -> PosteriorFit:
        return gibbs_fit_fh(data, self.hyper, self.config, fixed=self.fixed, seed=seed)


def make_estimator(
    name: str,
    model_kind: str,
    hyper: HyperPriorSpec,
    advi_config: AdviConfig,
    gibbs_config: GibbsConfig,
    fixed: FixedHypers | None = None,
) -> Estimator:
    if name == "vb":
        return AdviEstimator(model_kind=model_kind, hyper=hyper, config=advi_config, fixed=fixed)
    if name == "gibbs":
        return GibbsEstimator(hyper=hyper, config=gibbs_config, fixed=fixed, model_kind=model_kind)
    raise DataError(f"unknown estimator '{name}' (expected 'vb' or 'gibbs')")
