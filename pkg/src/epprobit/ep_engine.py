"""Expectation propagation for Bayesian probit regression.

Model: ``y_i | beta ~ Bern(Phi(x_i' beta))`` with ``beta ~ N(0, nu2 I_p)``.

Each likelihood term is approximated by a rank-one Gaussian site with
precision ``k_i x_i x_i'`` and shift ``m_i x_i``. The tilted (hybrid)
distribution of a site is an extended skew-normal, so its first two moments
are available in closed form and the site refresh reduces to the scalar
``site_update``.

Two engines keep the global approximation ``q(beta) = N(Q^-1 r, Q^-1)``:

* ``dense`` stores ``Sigma = Q^-1`` (p x p) and costs O(p^2 n) per sweep;
* ``lowrank`` stores only ``V = [Sigma x_1, ..., Sigma x_n]`` (p x n) and
  costs O(p n^2) per sweep, which wins when ``p > n``.

Both engines run the same sweep schedule and produce the same site
trajectories up to round-off.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .predictive import DenseCovariance, FactoredCovariance, GaussianPosterior
from .special_fn import DomainError, zeta1, zeta2

__all__ = [
    "CavityBreakdown",
    "UpdateRejected",
    "NonProgress",
    "Dataset",
    "SiteState",
    "EpStateDense",
    "EpStateLowRank",
    "HybridSnParams",
    "EpConfig",
    "FitDiagnostics",
    "init_state",
    "cavity",
    "site_update",
    "apply_update_dense",
    "apply_update_lowrank",
    "apply_update",
    "fit",
    "assemble_covariance",
    "hybrid_params",
    "select_engine",
]

logger = logging.getLogger(__name__)

EPS_CAVITY = 1e-12
_K_FLOOR = float(np.nextafter(0.0, 1.0))
ENGINES = ("dense", "lowrank")

_zeta1 = zeta1.scalar
_zeta2 = zeta2.scalar


class CavityBreakdown(ArithmeticError):
    """Removing a site would leave a non positive-definite cavity."""


class UpdateRejected(ArithmeticError):
    """A rank-one refresh would break positive-definiteness of Sigma."""


class NonProgress(RuntimeError):
    """Every updatable site was skipped during a sweep."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x p), labels ``y`` in {0, 1}, prior variance."""

    X: np.ndarray
    y: np.ndarray
    prior_variance: float = 25.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got X of shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        y_raw = np.asarray(self.y)
        if y_raw.shape != (n,):
            raise ValueError(f"y must have shape ({n},), got {y_raw.shape}")
        bad = np.flatnonzero((y_raw != 0) & (y_raw != 1))
        if bad.size:
            raise ValueError(
                f"labels must be 0 or 1; row {bad[0]} has {y_raw[bad[0]]!r}"
            )
        nu2 = float(self.prior_variance)
        if not (np.isfinite(nu2) and nu2 > 0.0):
            raise ValueError(f"prior_variance must be finite and > 0, got {nu2!r}")
        X.flags.writeable = False
        y = y_raw.astype(np.int8)
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "prior_variance", nu2)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def signs(self) -> np.ndarray:
        """``2 y - 1`` as floats."""
        return 2.0 * self.y - 1.0


@dataclass
class SiteState:
    """Site parameters; site ``i`` is ``r_i = m_i x_i``, ``Q_i = k_i x_i x_i'``."""

    k: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def copy(self):
        return SiteState(self.k.copy(), self.m.copy())


@dataclass
class EpStateDense:
    data: Dataset
    Sigma: np.ndarray
    r: np.ndarray
    sites: SiteState

    engine = "dense"

    def v(self, i):
        return self.Sigma @ self.data.X[i]


@dataclass
class EpStateLowRank:
    data: Dataset
    V: np.ndarray
    r: np.ndarray
    sites: SiteState

    engine = "lowrank"

    def v(self, i):
        return self.V[:, i]


EpState = Union[EpStateDense, EpStateLowRank]


@dataclass(frozen=True)
class HybridSnParams:
    """Extended skew-normal parameters of the hybrid for one site."""

    xi: np.ndarray
    Omega: np.ndarray
    alpha: np.ndarray
    tau: float
    omega: np.ndarray


@dataclass(frozen=True)
class EpConfig:
    """Iteration controls.

    ``damping`` interpolates natural parameters: 1 means a full update.
    ``sweep_order`` is ``"ascending"`` (1..n) or ``"descending"``; both
    are deterministic.
    """

    tol: float = 1e-6
    max_sweeps: int = 200
    damping: float = 1.0
    sweep_order: str = "ascending"
    record_trajectory: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.tol) and self.tol > 0):
            raise ValueError(f"tol must be > 0, got {self.tol!r}")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be a positive integer, got {self.max_sweeps!r}")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must be in (0, 1], got {self.damping!r}")
        if self.sweep_order not in ("ascending", "descending"):
            raise ValueError(f"unknown sweep_order {self.sweep_order!r}")


@dataclass
class FitDiagnostics:
    engine: str
    sweeps_run: int = 0
    converged: bool = False
    max_delta_trace: List[float] = field(default_factory=list)
    skipped_updates: int = 0
    degenerate_sites: int = 0
    elapsed_seconds: float = 0.0
    # (k, m) copies after each sweep when EpConfig.record_trajectory is set
    trajectory: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def select_engine(n: int, p: int, engine: str = "auto") -> str:
    """Resolve ``"auto"``: dense when ``p <= n``, low-rank otherwise."""
    if engine == "auto":
        return "dense" if p <= n else "lowrank"
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    return engine


def init_state(d: Dataset, engine: str = "dense") -> EpState:
    """Prior-only state: all sites zero, ``Sigma = nu2 I``, ``r = 0``."""
    engine = select_engine(d.n, d.p, engine)
    nu2 = d.prior_variance
    sites = SiteState.zeros(d.n)
    r = np.zeros(d.p)
    if engine == "dense":
        return EpStateDense(d, nu2 * np.eye(d.p), r, sites)
    return EpStateLowRank(d, nu2 * d.X.T.copy(), r, sites)


def _cavity_from_v(state, i, v):
    x = state.data.X[i]
    k_i = state.sites.k[i]
    denom = 1.0 - k_i * float(x @ v)
    if denom <= EPS_CAVITY:
        raise CavityBreakdown(f"site {i}: cavity denominator {denom:.3e}")
    w = v / denom
    d_i = float(x @ w)
    r_minus = state.r - state.sites.m[i] * x
    c_i = float(w @ r_minus)
    return w, d_i, c_i


def cavity(state: EpState, i: int) -> Tuple[np.ndarray, float, float]:
    """Cavity quantities for site ``i``.

    Returns ``w_i = Q_{-i}^{-1} x_i``, ``d_i = x_i' w_i`` and
    ``c_i = w_i' r_{-i}`` (the cavity mean projected on ``x_i``), via
    Sherman-Morrison on ``Q - k_i x_i x_i'``.
    """
    return _cavity_from_v(state, i, state.v(i))


def site_update(y_i: int, d_i: float, c_i: float) -> Tuple[float, float, float, float]:
    """Moment-matched site parameters from the cavity summaries.

    Parameters
    ----------
    y_i : label in {0, 1}
    d_i : cavity variance along ``x_i``, ``x_i' Omega_i x_i`` (must be > 0)
    c_i : ``x_i' xi_i``, the cavity mean along ``x_i``

    Returns
    -------
    k_new, m_new, tau, s
    """
    if not d_i > 0.0:
        raise DomainError(f"cavity variance d_i must be > 0, got {d_i!r}")
    s = (2.0 * y_i - 1.0) / np.sqrt(1.0 + d_i)
    tau = s * c_i
    z1 = _zeta1(tau)
    z2 = _zeta2(tau)
    k_new = -z2 / (1.0 + d_i + z2 * d_i)
    # far tail: the site is uninformative and k underflows; keep it positive
    k_new = max(k_new, _K_FLOOR)
    m_new = z1 * s + k_new * c_i + k_new * z1 * s * d_i
    return float(k_new), float(m_new), float(tau), float(s)


def _deltas(sites, i, k_new, m_new, damping):
    k_old, m_old = sites.k[i], sites.m[i]
    if damping == 1.0:
        return k_new - k_old, m_new - m_old
    k_d = (1.0 - damping) * k_old + damping * k_new
    m_d = (1.0 - damping) * m_old + damping * m_new
    return k_d - k_old, m_d - m_old


def _refresh_dense(state, i, dk, dm, v):
    x = state.data.X[i]
    if dk != 0.0:
        denom = 1.0 + dk * float(x @ v)
        if denom <= EPS_CAVITY:
            raise UpdateRejected(f"site {i}: update denominator {denom:.3e}")
        state.Sigma -= (dk / denom) * np.outer(v, v)
    if dm != 0.0:
        state.r += dm * x
    state.sites.k[i] += dk
    state.sites.m[i] += dm


def _refresh_lowrank(state, i, dk, dm, v):
    X = state.data.X
    x = X[i]
    if dk != 0.0:
        denom = 1.0 + dk * float(x @ v)
        if denom <= EPS_CAVITY:
            raise UpdateRejected(f"site {i}: update denominator {denom:.3e}")
        g = dk / denom
        v = v.copy()
        state.V -= np.outer(g * v, X @ v)
    if dm != 0.0:
        state.r += dm * x
    state.sites.k[i] += dk
    state.sites.m[i] += dm


def apply_update_dense(state: EpStateDense, i, k_new, m_new, damping=1.0):
    """Rank-one refresh of ``Sigma`` and ``r`` after site ``i`` changes.

    O(p^2). Raises :class:`UpdateRejected` (state untouched) if
    ``1 + dk x_i' Sigma x_i`` is not safely positive.
    """
    dk, dm = _deltas(state.sites, i, k_new, m_new, damping)
    _refresh_dense(state, i, dk, dm, state.v(i))
    return state


def apply_update_lowrank(state: EpStateLowRank, i, k_new, m_new, damping=1.0):
    """Refresh every column ``v_j = Sigma x_j`` after site ``i`` changes; O(pn)."""
    dk, dm = _deltas(state.sites, i, k_new, m_new, damping)
    _refresh_lowrank(state, i, dk, dm, state.v(i))
    return state


def apply_update(state: EpState, i, k_new, m_new, damping=1.0):
    if isinstance(state, EpStateDense):
        return apply_update_dense(state, i, k_new, m_new, damping)
    return apply_update_lowrank(state, i, k_new, m_new, damping)


def posterior_mean(state: EpState) -> np.ndarray:
    """``xi_EP = Q^-1 r``."""
    if isinstance(state, EpStateDense):
        return state.Sigma @ state.r
    d = state.data
    nu2 = d.prior_variance
    return nu2 * state.r - nu2 * (state.V @ (state.sites.k * (d.X @ state.r)))


def to_posterior(state: EpState) -> GaussianPosterior:
    d = state.data
    if isinstance(state, EpStateDense):
        cov = DenseCovariance(state.Sigma.copy())
    else:
        cov = FactoredCovariance(d.prior_variance, state.V.copy(), state.sites.k.copy(), d.X)
    return GaussianPosterior(
        xi=posterior_mean(state),
        covariance=cov,
        prior_variance=d.prior_variance,
        sites=state.sites.copy(),
    )


def _sweep(state, order, active, damping, diag):
    """One pass over the sites; returns (max |delta|, sites updated)."""
    X = state.data.X
    y = state.data.y
    refresh = _refresh_dense if isinstance(state, EpStateDense) else _refresh_lowrank
    max_delta = 0.0
    updated = 0
    for i in order:
        if not active[i]:
            continue
        v = state.v(i)
        try:
            _, d_i, c_i = _cavity_from_v(state, i, v)
            k_new, m_new, _, _ = site_update(int(y[i]), d_i, c_i)
            dk, dm = _deltas(state.sites, i, k_new, m_new, damping)
            refresh(state, i, dk, dm, v)
        except (CavityBreakdown, UpdateRejected, DomainError) as exc:
            logger.debug("skipping site %d: %s", i, exc)
            diag.skipped_updates += 1
            continue
        updated += 1
        max_delta = max(max_delta, abs(dk), abs(dm))
    return max_delta, updated


def fit(
    d: Dataset, cfg: Optional[EpConfig] = None, engine: str = "auto"
) -> Tuple[GaussianPosterior, FitDiagnostics]:
    """Run EP sweeps until site parameters stop moving.

    Sites are visited in a fixed order each sweep; convergence is declared
    when the largest ``|dk_i|`` or ``|dm_i|`` of a sweep is at most
    ``cfg.tol``. Rows with ``x_i = 0`` carry a constant likelihood factor
    and are never updated.

    Raises
    ------
    NonProgress
        If every updatable site was skipped in some sweep.
    """
    cfg = cfg or EpConfig()
    t0 = time.perf_counter()
    state = init_state(d, engine)
    diag = FitDiagnostics(engine=state.engine)
    active = np.any(d.X != 0.0, axis=1)
    diag.degenerate_sites = int(d.n - active.sum())
    order = range(d.n) if cfg.sweep_order == "ascending" else range(d.n - 1, -1, -1)

    if not active.any():
        diag.converged = True
    else:
        for _ in range(cfg.max_sweeps):
            max_delta, updated = _sweep(state, order, active, cfg.damping, diag)
            diag.sweeps_run += 1
            diag.max_delta_trace.append(max_delta)
            if cfg.record_trajectory:
                diag.trajectory.append((state.sites.k.copy(), state.sites.m.copy()))
            if updated == 0:
                diag.elapsed_seconds = time.perf_counter() - t0
                raise NonProgress(
                    f"all {int(active.sum())} updatable sites skipped in sweep {diag.sweeps_run}",
                    diag,
                )
            if max_delta <= cfg.tol:
                diag.converged = True
                break
    post = to_posterior(state)
    diag.elapsed_seconds = time.perf_counter() - t0
    if not diag.converged:
        logger.warning(
            "EP did not converge in %d sweeps (last max delta %.3e)",
            diag.sweeps_run,
            diag.max_delta_trace[-1],
        )
    return post, diag


def assemble_covariance(post: GaussianPosterior) -> np.ndarray:
    """Explicit covariance ``nu2 I - nu2 V K X`` from low-rank factors."""
    cov = post.covariance
    if not isinstance(cov, FactoredCovariance):
        raise TypeError("posterior does not carry low-rank covariance factors")
    nu2 = cov.prior_variance
    return nu2 * np.eye(cov.V.shape[0]) - nu2 * ((cov.V * cov.k) @ cov.X)


def _state_sigma(state):
    if isinstance(state, EpStateDense):
        return state.Sigma
    d = state.data
    nu2 = d.prior_variance
    return nu2 * np.eye(d.p) - nu2 * ((state.V * state.sites.k) @ d.X)


def hybrid_params(state: EpState, i: int) -> HybridSnParams:
    """Skew-normal parameters of the hybrid for site ``i`` (dense, diagnostic)."""
    d = state.data
    x = d.X[i]
    k_i = state.sites.k[i]
    Sigma = _state_sigma(state)
    v = Sigma @ x
    denom = 1.0 - k_i * float(x @ v)
    if denom <= EPS_CAVITY:
        raise CavityBreakdown(f"site {i}: cavity denominator {denom:.3e}")
    Omega = Sigma + (k_i / denom) * np.outer(v, v)
    r_minus = state.r - state.sites.m[i] * x
    xi = Omega @ r_minus
    omega = np.diag(np.sqrt(np.diag(Omega)))
    sign = 2.0 * d.y[i] - 1.0
    alpha = sign * (omega @ x)
    tau = sign * float(x @ xi) / np.sqrt(1.0 + float(x @ Omega @ x))
    return HybridSnParams(xi=xi, Omega=Omega, alpha=alpha, tau=float(tau), omega=omega)
