"""Closed-form predictive probabilities under a Gaussian approximation.

For ``beta ~ N(xi, Omega)`` the expectation ``E[Phi(x' beta)]`` equals
``Phi(x' xi / sqrt(1 + x' Omega x))``. The only work is the quadratic form
``u = x' Omega x``; with the low-rank covariance factors it costs O(pn)
instead of O(p^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .special_fn import std_normal_cdf

__all__ = [
    "NumericalBreakdown",
    "DenseCovariance",
    "FactoredCovariance",
    "GaussianPosterior",
    "PredictiveResult",
    "BatchPrediction",
    "quadratic_form",
    "predict_one",
    "predict_batch",
]

PSD_RTOL = 1e-10


class NumericalBreakdown(ArithmeticError):
    """The covariance quadratic form came out clearly negative."""


@dataclass(frozen=True)
class DenseCovariance:
    """Explicit ``p x p`` covariance matrix."""

    sigma: np.ndarray


@dataclass(frozen=True)
class FactoredCovariance:
    """Covariance ``nu2 * (I - V diag(k) X)`` kept in factored form.

    ``V`` is ``p x n`` with columns ``Sigma @ x_i``; ``X`` is the ``n x p``
    design matrix.
    """

    prior_variance: float
    V: np.ndarray
    k: np.ndarray
    X: np.ndarray


Covariance = Union[DenseCovariance, FactoredCovariance]


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian approximation ``N(xi, Omega)`` returned by an EP fit.

    ``sites`` carries the converged site parameters when the posterior came
    from :func:`epprobit.ep_engine.fit`; it is not needed for prediction.
    """

    xi: np.ndarray
    covariance: Covariance
    prior_variance: float
    sites: Optional[object] = field(default=None, compare=False)

    @property
    def p(self) -> int:
        return self.xi.shape[0]

    @property
    def is_factored(self) -> bool:
        return isinstance(self.covariance, FactoredCovariance)

    def dense_covariance(self) -> np.ndarray:
        """Return ``Omega`` as an explicit matrix (O(p^2 n) for factored)."""
        cov = self.covariance
        if isinstance(cov, DenseCovariance):
            return cov.sigma
        return cov.prior_variance * (
            np.eye(cov.V.shape[0]) - (cov.V * cov.k) @ cov.X
        )


@dataclass(frozen=True)
class PredictiveResult:
    probability: float
    u: float
    linear: float


@dataclass(frozen=True)
class BatchPrediction:
    """Row-aligned predictive results for a batch of covariate vectors."""

    probability: np.ndarray
    u: np.ndarray
    linear: np.ndarray

    def __len__(self):
        return self.probability.shape[0]

    def __getitem__(self, j) -> PredictiveResult:
        return PredictiveResult(
            float(self.probability[j]), float(self.u[j]), float(self.linear[j])
        )


def quadratic_form(post: GaussianPosterior, x_new: np.ndarray) -> float:
    """``x_new' Omega x_new``, clamping tiny negative round-off to zero.

    Raises
    ------
    NumericalBreakdown
        If the value is below ``-1e-10 * nu2 * |x_new|^2``.
    """
    cov = post.covariance
    xx = float(x_new @ x_new)
    if isinstance(cov, DenseCovariance):
        u = float(x_new @ (cov.sigma @ x_new))
    else:
        a = x_new @ cov.V
        b = cov.X @ x_new
        u = cov.prior_variance * (xx - float((a * cov.k) @ b))
    if u < 0.0:
        eps = PSD_RTOL * post.prior_variance * xx
        if u < -eps:
            raise NumericalBreakdown(
                f"quadratic form {u:.3e} is negative beyond tolerance {eps:.3e}"
            )
        u = 0.0
    return u


def _check_dim(post, x):
    if x.shape[-1] != post.p:
        raise ValueError(
            f"covariate dimension {x.shape[-1]} does not match posterior dimension {post.p}"
        )


def predict_one(post: GaussianPosterior, x_new) -> PredictiveResult:
    """EP predictive probability ``Pr[y_new = 1 | y]`` for one covariate vector."""
    x = np.asarray(x_new, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x_new must be a 1-d vector")
    _check_dim(post, x)
    u = quadratic_form(post, x)
    linear = float(x @ post.xi)
    prob = std_normal_cdf(linear / np.sqrt(1.0 + u))
    return PredictiveResult(prob, u, linear)


def predict_batch(post: GaussianPosterior, X_new) -> BatchPrediction:
    """Vectorised :func:`predict_one` over the rows of ``X_new``.

    Rows are evaluated one at a time with the same kernels as
    :func:`predict_one`, so results agree with it bit for bit. A blocked
    matrix product would round differently and memory would scale with
    ``n_new * n``.
    """
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim != 2:
        raise ValueError("X_new must be a 2-d matrix")
    _check_dim(post, X_new)
    m = X_new.shape[0]
    prob = np.empty(m)
    u = np.empty(m)
    linear = np.empty(m)
    for j in range(m):
        res = predict_one(post, X_new[j])
        prob[j], u[j], linear[j] = res.probability, res.u, res.linear
    return BatchPrediction(prob, u, linear)
