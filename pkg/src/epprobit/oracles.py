"""Independent reference computations for checking EP output.

* :func:`exact_predictive_quadrature` integrates the exact posterior on a
  tensor grid (p <= 2 only).
* :func:`gibbs_predictive` is an Albert-Chib data-augmentation Gibbs
  sampler for the exact posterior.
* :func:`hmc_predictive` samples the same posterior through its latent
  truncated Gaussian with exact (reflective) Hamiltonian Monte Carlo. It
  mixes far better than the Gibbs sampler when the prior is diffuse and
  ``p >= n``.
* :func:`mc_gaussian_expectation` checks the closed-form predictive by
  plain Monte Carlo over the Gaussian approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtr, ndtri

from .ep_engine import Dataset
from .predictive import GaussianPosterior

__all__ = [
    "QuadratureSpec",
    "GibbsSpec",
    "HmcSpec",
    "SamplerFault",
    "exact_predictive_quadrature",
    "gibbs_predictive",
    "hmc_predictive",
    "hmc_latent_chain",
    "truncated_normal_draw",
    "mc_gaussian_expectation",
    "batch_means_se",
]

TAIL_SWITCH = 5.0
N_BATCHES = 50


class SamplerFault(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Grid of ``nodes_per_dim`` points per axis spanning ``+-half_width`` prior sds."""

    half_width: float = 10.0
    nodes_per_dim: int = 2001

    def __post_init__(self):
        if self.nodes_per_dim < 101 or self.nodes_per_dim % 2 == 0:
            raise ValueError("nodes_per_dim must be odd and >= 101")
        if self.half_width < 6:
            raise ValueError("half_width must be >= 6")

    def refined(self) -> "QuadratureSpec":
        """Same box with the grid spacing halved."""
        return QuadratureSpec(self.half_width, 2 * self.nodes_per_dim - 1)


@dataclass(frozen=True)
class GibbsSpec:
    burn_in: int = 2000
    draws: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _simpson_weights(m, h):
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def exact_predictive_quadrature(d: Dataset, x_new, spec: QuadratureSpec = QuadratureSpec()):
    """``Pr[y_new = 1 | y]`` under the exact posterior, by Simpson's rule.

    The unnormalised log posterior ``log phi(beta; 0, nu2 I) +
    sum_i log Phi((2y_i - 1) x_i' beta)`` is evaluated on the grid and
    shifted by its maximum before exponentiating. ``x_new`` may be one
    vector (returns a float) or an ``m x p`` matrix (returns an array); the
    posterior grid is shared across rows.
    """
    p = d.p
    if p not in (1, 2):
        raise NotImplementedError(f"quadrature oracle supports p in {{1, 2}}, got p={p}")
    x_arr = np.asarray(x_new, dtype=np.float64)
    single = x_arr.ndim <= 1
    X_new = x_arr.reshape(-1, p)
    sd = np.sqrt(d.prior_variance)
    m = spec.nodes_per_dim
    nodes = np.linspace(-spec.half_width * sd, spec.half_width * sd, m)
    w1 = _simpson_weights(m, nodes[1] - nodes[0])
    if p == 1:
        grid = [nodes]
        weights = w1
    else:
        b1, b2 = np.meshgrid(nodes, nodes, indexing="ij")
        grid = [b1, b2]
        weights = np.outer(w1, w1)

    sq = sum(g * g for g in grid)
    logpost = -0.5 * sq / d.prior_variance
    signs = d.signs
    for i in range(d.n):
        lin = sum(d.X[i, j] * grid[j] for j in range(p))
        logpost += log_ndtr(signs[i] * lin)
    logpost -= logpost.max()
    dens = np.exp(logpost) * weights
    mass = dens.sum()
    if not (np.isfinite(mass) and mass > 0.0):
        raise FloatingPointError("posterior mass underflowed on the quadrature grid")
    out = np.array(
        [(dens * ndtr(sum(x[j] * grid[j] for j in range(p)))).sum() / mass for x in X_new]
    )
    return float(out[0]) if single else out


def truncated_normal_draw(mean, side, rng: np.random.Generator):
    """Unit-variance normal with location ``mean`` truncated to one side of 0.

    ``side`` is ``"right"`` (z > 0) or ``"left"`` (z < 0); it may also be an
    array of +1 / -1 (right / left) matching ``mean``. Uses the inverse cdf
    unless the truncation point lies more than 5 sds into the tail, where
    Robert's exponential rejection sampler takes over.
    """
    scalar = np.ndim(mean) == 0
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    if isinstance(side, str):
        if side not in ("right", "left"):
            raise ValueError(f"side must be 'right' or 'left', got {side!r}")
        sgn = np.full(mean.shape, 1.0 if side == "right" else -1.0)
    else:
        sgn = np.broadcast_to(np.asarray(side, dtype=np.float64), mean.shape)
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean must be finite")

    # Reduce to e = z' - mu' > a with z' = sgn z > 0 and mu' = sgn mean.
    mu = sgn * mean
    a = -mu
    e = np.empty_like(mu)

    easy = a <= TAIL_SWITCH
    if easy.any():
        u = rng.random(np.count_nonzero(easy))
        # -e | e > a  is  Phi^{-1}(U Phi(-a))
        e[easy] = -ndtri(u * ndtr(-a[easy]))

    tail = np.flatnonzero(~easy)
    if tail.size:
        at = a[tail]
        lam = 0.5 * (at + np.sqrt(at * at + 4.0))
        out = np.empty(tail.size)
        todo = np.arange(tail.size)
        while todo.size:
            prop = at[todo] + rng.exponential(1.0, todo.size) / lam[todo]
            acc = rng.random(todo.size) <= np.exp(-0.5 * (prop - lam[todo]) ** 2)
            out[todo[acc]] = prop[acc]
            todo = todo[~acc]
        e[tail] = out

    # a <= 0 can round e to exactly a; keep the draw strictly inside.
    z = np.maximum(mu + e, np.finfo(float).tiny)
    z = sgn * z
    return float(z[0]) if scalar else z


def batch_means_se(samples: np.ndarray, n_batches: int = N_BATCHES) -> np.ndarray:
    """Batch-means standard error of the column means of ``samples`` (T x k)."""
    samples = np.asarray(samples, dtype=np.float64)
    T = samples.shape[0]
    b = min(n_batches, T)
    if b < 2:
        return np.full(samples.shape[1:], np.nan)
    size = T // b
    means = samples[: b * size].reshape(b, size, *samples.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


@dataclass(frozen=True)
class HmcSpec:
    """Exact-HMC baseline settings; ``travel_time`` is the trajectory length."""

    burn_in: int = 200
    draws: int = 2000
    seed: int = 0
    travel_time: float = np.pi / 2

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.travel_time > 0:
            raise ValueError("travel_time must be > 0")


class _BetaSampler:
    """Exact draws from ``beta | z ~ N(A X' z, A)``, ``A = (I/nu2 + X'X)^-1``."""

    def __init__(self, X, nu2):
        n, p = X.shape
        self.X = X
        self.nu2 = nu2
        self.primal = p <= n
        if self.primal:
            prec = np.eye(p) / nu2 + X.T @ X
            self.chol = linalg.cholesky(prec, lower=False)  # prec = R'R
        else:
            # Bhattacharya et al. (2016): O(n^2 + pn) per draw
            self.nchol = linalg.cho_factor(nu2 * (X @ X.T) + np.eye(n))

    def draw(self, z, rng):
        X = self.X
        p = X.shape[1]
        if self.primal:
            R = self.chol
            mean = linalg.cho_solve((R, False), X.T @ z)
            return mean + linalg.solve_triangular(R, rng.standard_normal(p))
        u = np.sqrt(self.nu2) * rng.standard_normal(p)
        delta = rng.standard_normal(X.shape[0])
        w = linalg.cho_solve(self.nchol, z - (X @ u + delta))
        return u + self.nu2 * (X.T @ w)


def gibbs_predictive(d: Dataset, X_new, spec: GibbsSpec = GibbsSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior predictive probabilities by Albert-Chib Gibbs sampling.

    Returns the average of ``Phi(X_new beta_t)`` over retained draws and the
    batch-means standard errors (50 batches).
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=np.float64))
    if X_new.shape[1] != d.p:
        raise ValueError("X_new column count does not match the dataset")
    rng = np.random.default_rng(spec.seed)
    X = d.X
    signs = d.signs
    sampler = _BetaSampler(X, d.prior_variance)
    beta = np.zeros(d.p)
    probs = np.empty((spec.draws, X_new.shape[0]))
    for t in range(spec.burn_in + spec.draws):
        z = truncated_normal_draw(X @ beta, signs, rng)
        beta = sampler.draw(z, rng)
        if not np.all(np.isfinite(beta)):
            raise SamplerFault(f"non-finite beta draw at iteration {t}")
        if t >= spec.burn_in:
            probs[t - spec.burn_in] = ndtr(X_new @ beta)
    return probs.mean(axis=0), batch_means_se(probs)


def hmc_latent_chain(S, signs, n_iter, rng, travel_time=np.pi / 2, z0=None):
    """Exact HMC for ``z ~ N(0, S)`` restricted to ``signs * z > 0``.

    Pakman & Paninski (2014): in whitened coordinates the trajectories are
    ``z(t) = zdot sin t + z cos t``, so wall hits are found in closed form
    and handled by specular reflection. Returns the ``n_iter x n`` chain and
    the total number of wall bounces.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    L = linalg.cholesky(S, lower=True)
    s_diag = np.diag(S).copy()
    z = signs.astype(np.float64).copy() if z0 is None else np.array(z0, dtype=np.float64)
    if np.any(signs * z <= 0):
        raise ValueError("starting point violates the truncation")
    chain = np.empty((n_iter, n))
    bounces = 0
    two_pi = 2.0 * np.pi
    for it in range(n_iter):
        zd = L @ rng.standard_normal(n)
        remaining = travel_time
        while True:
            # s_j z_j(t) = U_j cos(t - phi_j) first decreases through 0 at phi_j + pi/2
            phi = np.arctan2(signs * zd, signs * z)
            hit = np.mod(0.5 * np.pi + phi, two_pi)
            k = int(np.argmin(hit))
            t = hit[k]
            if t >= remaining:
                c, sn = np.cos(remaining), np.sin(remaining)
                z = zd * sn + z * c
                break
            c, sn = np.cos(t), np.sin(t)
            z, zd = zd * sn + z * c, zd * c - z * sn
            z[k] = 0.0
            zd = zd - (2.0 * zd[k] / s_diag[k]) * S[:, k]
            remaining -= t
            bounces += 1
        # round-off can leave a coordinate exactly on its wall
        z = np.where(signs * z > 0, z, signs * np.finfo(float).tiny)
        chain[it] = z
    return chain, bounces


def hmc_predictive(d: Dataset, X_new, spec: HmcSpec = HmcSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior predictive probabilities from exact-HMC latent draws.

    With ``beta`` integrated out the latent utilities follow
    ``z ~ N(0, I + nu2 X X')`` truncated to the orthant picked by ``y``.
    Each HMC draw of ``z`` is completed with an exact draw of ``beta | z``
    and ``Phi(X_new beta)`` is averaged over retained draws. Standard errors
    are batch means.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=np.float64))
    if X_new.shape[1] != d.p:
        raise ValueError("X_new column count does not match the dataset")
    rng = np.random.default_rng(spec.seed)
    X = d.X
    S = np.eye(d.n) + d.prior_variance * (X @ X.T)
    chain, _ = hmc_latent_chain(S, d.signs, spec.burn_in + spec.draws, rng, spec.travel_time)
    sampler = _BetaSampler(X, d.prior_variance)
    probs = np.empty((spec.draws, X_new.shape[0]))
    for t, z in enumerate(chain[spec.burn_in:]):
        beta = sampler.draw(z, rng)
        if not np.all(np.isfinite(beta)):
            raise SamplerFault(f"non-finite beta draw at iteration {spec.burn_in + t}")
        probs[t] = ndtr(X_new @ beta)
    return probs.mean(axis=0), batch_means_se(probs)


def _cov_factor(S):
    """Return F with F F' = S; tolerates PSD (incl. zero) matrices."""
    S = 0.5 * (S + S.T)
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(vals).max()))
    if vals.min() < -1e-10 * scale:
        raise linalg.LinAlgError(
            f"covariance is not positive semi-definite (min eigenvalue {vals.min():.3e})"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def mc_gaussian_expectation(
    post: GaussianPosterior, x_new, samples: int = 1_000_000, seed: int = 0, chunk: int = 100_000
) -> Tuple[float, float]:
    """Monte Carlo estimate of ``E_q[Phi(x_new' beta)]`` and its standard error.

    Draws full ``beta`` vectors from ``q``; factored covariances are
    reconstructed densely first.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    x_new = np.asarray(x_new, dtype=np.float64)
    F = _cov_factor(post.dense_covariance())
    xi = post.xi
    rng = np.random.default_rng(seed)
    shift = float(ndtr(xi @ x_new))  # centring keeps the variance sum well conditioned
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        beta = xi + rng.standard_normal((b, F.shape[1])) @ F.T
        vals = ndtr(beta @ x_new) - shift
        total += vals.sum()
        total_sq += (vals * vals).sum()
        done += b
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    mean += shift
    return float(mean), float(np.sqrt(var / samples))
