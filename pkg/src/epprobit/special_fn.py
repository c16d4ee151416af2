"""Standard normal cdf/pdf and the log-cdf derivative ratios.

``zeta1(x) = phi(x) / Phi(x)`` and ``zeta2(x) = -zeta1(x)**2 - x * zeta1(x)``
are the first and second derivatives of ``log Phi``. Every EP site update
goes through them, so they have to stay accurate deep into the left tail
where both ``phi`` and ``Phi`` underflow.

All functions accept a Python/numpy scalar (returning ``float``) or an
array (returning an ``ndarray`` of the same shape).
"""

import math

import numpy as np

__all__ = [
    "DomainError",
    "X_SWITCH",
    "std_normal_pdf",
    "std_normal_cdf",
    "zeta1",
    "zeta2",
]

# Below this point zeta1 is evaluated from the Mills-ratio continued
# fraction instead of the quotient phi/Phi.
X_SWITCH = -8.0

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
# Smallest positive double; zeta1 and |zeta2| are floored here once the true
# value drops below the subnormal range (x > ~38.4).
_TINY = math.ulp(0.0)
_CF_EPS = 1e-16
_CF_MAX_TERMS = 500


class DomainError(ValueError):
    """Raised for arguments outside a function's domain (e.g. non-finite)."""


def _check_finite(x):
    if not math.isfinite(x):
        raise DomainError(f"argument must be finite, got {x!r}")


def _vectorize(scalar_fn):
    ufunc = np.vectorize(scalar_fn, otypes=[np.float64])

    def wrapper(x):
        if np.ndim(x) == 0:
            return scalar_fn(float(x))
        arr = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("argument must be finite")
        return ufunc(arr)

    wrapper.__name__ = scalar_fn.__name__.lstrip("_")
    wrapper.__doc__ = scalar_fn.__doc__
    wrapper.scalar = scalar_fn
    return wrapper


def _mills_tail(t):
    """Return ``zeta1(-t) - t`` for ``t > 0`` (large), i.e.
    ``1 / (t + 2/(t + 3/(t + 4/(t + ...))))``.

    Evaluated with the modified Lentz algorithm. Converges in a handful of
    terms for ``t >= 7``.
    """
    tiny = 1e-300
    f = t
    c = f
    d = 0.0
    for j in range(1, _CF_MAX_TERMS):
        a = j + 1.0
        d = t + a * d
        if d == 0.0:
            d = tiny
        d = 1.0 / d
        c = t + a / c
        if c == 0.0:
            c = tiny
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return 1.0 / f


def _std_normal_pdf(x):
    """Standard normal density ``exp(-x**2/2) / sqrt(2 pi)``."""
    _check_finite(x)
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _std_normal_cdf(x):
    """Standard normal cdf, via ``erfc`` so both tails keep relative accuracy."""
    _check_finite(x)
    return 0.5 * math.erfc(-x * _INV_SQRT2)


def _zeta1_ratio(x):
    return _std_normal_pdf(x) / _std_normal_cdf(x)


def _zeta1_cf(x):
    t = -x
    return t + _mills_tail(t)


def _zeta1(x):
    """``phi(x) / Phi(x)``; strictly positive for every finite ``x``."""
    _check_finite(x)
    if x < X_SWITCH:
        return _zeta1_cf(x)
    val = _zeta1_ratio(x)
    return val if val > 0.0 else _TINY


def _zeta2(x):
    """``-zeta1(x) * (zeta1(x) + x)``; lies in (-1, 0) for every finite ``x``."""
    _check_finite(x)
    if x < X_SWITCH:
        # zeta1 + x = the continued-fraction tail; no cancellation.
        g = _mills_tail(-x)
        val = -(-x + g) * g
    else:
        z = _zeta1(x)
        val = -z * (z + x)
    if val >= 0.0:
        return -_TINY
    return max(val, -1.0 + 2.0**-53)


std_normal_pdf = _vectorize(_std_normal_pdf)
std_normal_cdf = _vectorize(_std_normal_cdf)
zeta1 = _vectorize(_zeta1)
zeta2 = _vectorize(_zeta2)
