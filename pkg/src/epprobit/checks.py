"""Built-in low-dimensional fixtures comparing EP with the exact posterior.

Every fixture has ``p <= 2`` so the exact predictive probability is
available by quadrature. Three checks run per test point:

* ``ep``     |EP - quadrature| <= 0.02
* ``gibbs``  |Gibbs - quadrature| <= 3 batch-means standard errors
* ``hmc``    |HMC - quadrature| <= 3 batch-means standard errors

plus a quadrature self-check (halving the grid spacing moves the value by
less than 1e-8). Fixture data is fixed; ``seed`` only drives the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .ep_engine import Dataset, EpConfig, fit
from .oracles import (
    GibbsSpec,
    HmcSpec,
    QuadratureSpec,
    exact_predictive_quadrature,
    gibbs_predictive,
    hmc_predictive,
)
from .predictive import predict_batch

__all__ = ["Fixture", "CheckResult", "builtin_fixtures", "run_oracle_checks"]

EP_ABS_TOL = 0.02
SAMPLER_SE_MULT = 3.0
QUAD_SELF_TOL = 1e-8


@dataclass(frozen=True)
class Fixture:
    name: str
    data: Dataset
    X_new: np.ndarray
    quad: QuadratureSpec


@dataclass
class CheckResult:
    fixture: str
    point: int
    check: str
    value: float
    reference: float
    delta: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.delta) and self.delta <= self.bound)


def _probit_data(rng, n, beta, nu2):
    X = rng.standard_normal((n, len(beta)))
    y = (rng.standard_normal(n) < X @ np.asarray(beta)).astype(np.int8)
    return Dataset(X, y, nu2)


def builtin_fixtures() -> List[Fixture]:
    rng = np.random.default_rng(20231)
    q1 = QuadratureSpec(10.0, 2001)
    q2 = QuadratureSpec(10.0, 401)
    q2_diffuse = QuadratureSpec(10.0, 801)
    fixtures = [
        Fixture("p1-n1", Dataset(np.ones((1, 1)), np.array([1]), 1.0), np.array([[1.0], [-2.0], [0.5]]), q1),
        Fixture(
            "p1-n3",
            Dataset(np.array([[1.0], [-0.5], [2.0]]), np.array([1, 0, 0]), 1.0),
            np.array([[1.0], [-1.0], [3.0]]),
            q1,
        ),
        Fixture("p1-n20", _probit_data(rng, 20, [0.8], 4.0), rng.standard_normal((3, 1)), q1),
        Fixture("p2-n5", _probit_data(rng, 5, [1.0, -1.0], 1.0), rng.standard_normal((3, 2)), q2),
        Fixture("p2-n20", _probit_data(rng, 20, [1.0, -0.5], 1.0), rng.standard_normal((3, 2)), q2),
        Fixture("p2-n20-diffuse", _probit_data(rng, 20, [0.5, 1.5], 25.0), rng.standard_normal((3, 2)), q2_diffuse),
    ]
    return fixtures


def run_oracle_checks(
    seed: int = 0,
    ep_config: EpConfig = EpConfig(tol=1e-10),
    gibbs: GibbsSpec = GibbsSpec(2000, 10000),
    hmc: HmcSpec = HmcSpec(200, 3000),
    fixtures: List[Fixture] | None = None,
) -> List[CheckResult]:
    results = []
    for fx_index, fx in enumerate(fixtures or builtin_fixtures()):
        exact = exact_predictive_quadrature(fx.data, fx.X_new, fx.quad)
        fine = exact_predictive_quadrature(fx.data, fx.X_new, fx.quad.refined())
        post, _ = fit(fx.data, ep_config)
        ep = predict_batch(post, fx.X_new).probability
        sub = np.random.SeedSequence(seed, spawn_key=(fx_index,)).generate_state(2, np.uint64)
        g_mean, g_se = gibbs_predictive(fx.data, fx.X_new, GibbsSpec(gibbs.burn_in, gibbs.draws, int(sub[0])))
        h_mean, h_se = hmc_predictive(
            fx.data, fx.X_new, HmcSpec(hmc.burn_in, hmc.draws, int(sub[1]), hmc.travel_time)
        )
        for j in range(len(exact)):
            ref = float(exact[j])
            results.append(CheckResult(fx.name, j, "quad-refine", float(fine[j]), ref, abs(fine[j] - ref), QUAD_SELF_TOL))
            results.append(CheckResult(fx.name, j, "ep", float(ep[j]), ref, abs(ep[j] - ref), EP_ABS_TOL))
            results.append(
                CheckResult(fx.name, j, "gibbs", float(g_mean[j]), ref, abs(g_mean[j] - ref), SAMPLER_SE_MULT * g_se[j])
            )
            results.append(
                CheckResult(fx.name, j, "hmc", float(h_mean[j]), ref, abs(h_mean[j] - ref), SAMPLER_SE_MULT * h_se[j])
            )
    return results
