"""Soft thresholding, its Gaussian-smoothed version, and the Bayes risk of the
soft threshold under a discrete signal prior.

Risk formulas are closed forms in the standard normal ``Phi``/``phi``.  For a
signal value ``b``, noise level ``sigma`` and threshold ``tau`` write
``a = b / sigma`` and ``g = tau / sigma``; then

    E(eta(b + sigma W; tau) - b)^2 / sigma^2
        = (1 + g^2) [Phi(a - g) + Phi(-a - g)]
          - (g + a) phi(g - a) - (g - a) phi(g + a)
          + a^2 [Phi(g - a) - Phi(-g - a)]

and its ``g``-derivative is ``2 g [Phi(a - g) + Phi(-a - g)] - 2 [phi(g - a) + phi(g + a)]``.

Two independent numerical paths are kept for cross-checking: a fixed 64-node
Gauss-Hermite rule and an adaptive quadrature split at the kinks.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .problem_gen import SignalPrior

__all__ = [
    "soft_threshold",
    "soft_threshold_deriv",
    "smoothed_soft_threshold",
    "smoothed_soft_threshold_deriv",
    "smoothed_soft_threshold_deriv2",
    "scalar_risk",
    "scalar_risk_deriv",
    "exceedance_prob",
    "min_risk",
    "optimal_tau",
    "gh_expectation",
    "quad_expectation",
    "scalar_risk_gh",
    "scalar_risk_quad",
    "count_sign_changes",
    "ZERO_BAND",
]

# |derivative| below this counts as zero when counting sign changes
ZERO_BAND = 1e-12

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


# ------------------------------------------------------------------ kernels


def soft_threshold(x, tau):
    """``(|x| - tau)_+ sign(x)``, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return out if out.ndim else float(out)


def soft_threshold_deriv(x, tau):
    """Weak derivative of the soft threshold; 0 at the kink ``|x| = tau``."""
    x = np.asarray(x, dtype=float)
    out = (np.abs(x) > tau).astype(float)
    return out if out.ndim else float(out)


def smoothed_soft_threshold(x, tau, h=0.0):
    """Soft threshold convolved with a N(0, h^2) kernel (plain soft threshold at h=0)."""
    if h == 0:
        return soft_threshold(x, tau)
    x = np.asarray(x, dtype=float)
    s = (x - tau) / h
    t = (x + tau) / h
    out = (x - tau) * ndtr(s) + h * _phi(s) + (x + tau) * ndtr(-t) - h * _phi(t)
    return out if out.ndim else float(out)


def smoothed_soft_threshold_deriv(x, tau, h=0.0):
    if h == 0:
        return soft_threshold_deriv(x, tau)
    x = np.asarray(x, dtype=float)
    out = ndtr((x - tau) / h) + ndtr(-(x + tau) / h)
    return out if out.ndim else float(out)


def smoothed_soft_threshold_deriv2(x, tau, h):
    if h <= 0:
        raise ValueError("second derivative needs h > 0")
    x = np.asarray(x, dtype=float)
    out = (_phi((x - tau) / h) - _phi((x + tau) / h)) / h
    return out if out.ndim else float(out)


# ------------------------------------------------------------ closed forms


def _check_sigma(sigma):
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def _unit_risk(a, g):
    """E(eta(a + Z; g) - a)^2 for unit noise; broadcasts over ``a`` and ``g``."""
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    tail = ndtr(a - g) + ndtr(-a - g)
    r = (1.0 + g * g) * tail - (g + a) * _phi(g - a) - (g - a) * _phi(g + a)
    r = r + a * a * (ndtr(g - a) - ndtr(-g - a))
    return np.maximum(r, 0.0)


def _unit_risk_dg(a, g):
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    return 2.0 * g * (ndtr(a - g) + ndtr(-a - g)) - 2.0 * (_phi(g - a) + _phi(g + a))


def scalar_risk(prior: SignalPrior, sigma: float, tau):
    """Bayes risk ``E(eta(B + sigma W; tau) - B)^2``; vectorised over ``tau``."""
    _check_sigma(sigma)
    vals, wts = prior.support()
    tau = np.asarray(tau, dtype=float)
    g = tau[..., None] / sigma
    r = sigma * sigma * np.sum(wts * _unit_risk(vals / sigma, g), axis=-1)
    return r if r.ndim else float(r)


def scalar_risk_deriv(prior: SignalPrior, sigma: float, tau):
    """``d/dtau`` of :func:`scalar_risk`."""
    _check_sigma(sigma)
    vals, wts = prior.support()
    tau = np.asarray(tau, dtype=float)
    g = tau[..., None] / sigma
    d = sigma * np.sum(wts * _unit_risk_dg(vals / sigma, g), axis=-1)
    return d if d.ndim else float(d)


def exceedance_prob(prior: SignalPrior, sigma: float, tau):
    """``P(|B + sigma W| > tau)``: the fraction of coordinates left active."""
    _check_sigma(sigma)
    vals, wts = prior.support()
    tau = np.asarray(tau, dtype=float)
    g = tau[..., None] / sigma
    a = vals / sigma
    q = np.sum(wts * (ndtr(a - g) + ndtr(-a - g)), axis=-1)
    return q if q.ndim else float(q)


def optimal_tau(prior: SignalPrior, sigma: float, *, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Minimiser of :func:`scalar_risk` over ``tau >= 0`` by bisection on the derivative.

    The risk is bowl-shaped whenever ``P(B != 0) > 0`` so its derivative has a
    single negative-to-positive crossing.  For the all-zero prior the risk is
    decreasing and there is no finite minimiser; ``inf`` is returned.
    """
    _check_sigma(sigma)
    if prior.nonzero_mass <= 0:
        return float("inf")
    lo, hi = 0.0, sigma
    while scalar_risk_deriv(prior, sigma, hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6 * sigma:
            return float("inf")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if scalar_risk_deriv(prior, sigma, mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def min_risk(prior: SignalPrior, sigma: float) -> float:
    """``inf_tau scalar_risk``; for the zero prior this is the limit 0."""
    tau = optimal_tau(prior, sigma)
    if not np.isfinite(tau):
        return 0.0
    return scalar_risk(prior, sigma, tau)


# ------------------------------------------------------ quadrature oracles


@lru_cache(maxsize=8)
def _gh_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # probabilists' Hermite: integrates against exp(-x^2/2)
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def gh_expectation(f: Callable[[np.ndarray], np.ndarray], n_nodes: int = 64) -> float:
    """``E f(W)``, ``W ~ N(0, 1)``, by an ``n_nodes``-point Gauss-Hermite rule."""
    x, w = _gh_rule(n_nodes)
    return float(np.dot(w, f(x)))


def quad_expectation(f: Callable[[float], float], breaks=()) -> float:
    """``E f(W)`` by adaptive quadrature split at the given breakpoints."""
    pts = sorted(float(b) for b in breaks if np.isfinite(b))
    edges = [-np.inf, *pts, np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        val, _ = integrate.quad(
            lambda z: f(z) * _INV_SQRT_2PI * np.exp(-0.5 * z * z),
            lo,
            hi,
            epsabs=1e-14,
            epsrel=1e-13,
            limit=200,
        )
        total += val
    return total


def scalar_risk_gh(prior: SignalPrior, sigma: float, tau: float, n_nodes: int = 64) -> float:
    _check_sigma(sigma)
    vals, wts = prior.support()
    total = 0.0
    for b, q in zip(vals, wts):
        if q == 0:
            continue
        total += q * gh_expectation(lambda z: (soft_threshold(b + sigma * z, tau) - b) ** 2, n_nodes)
    return total


def scalar_risk_quad(prior: SignalPrior, sigma: float, tau: float) -> float:
    _check_sigma(sigma)
    vals, wts = prior.support()
    total = 0.0
    for b, q in zip(vals, wts):
        if q == 0:
            continue
        breaks = ((tau - b) / sigma, (-tau - b) / sigma)
        total += q * quad_expectation(lambda z: (soft_threshold(b + sigma * z, tau) - b) ** 2, breaks)
    return total


def count_sign_changes(values, zero_band: float = ZERO_BAND) -> int:
    """Number of sign flips in a sequence, ignoring entries with ``|v| < zero_band``."""
    v = np.asarray(values, dtype=float)
    s = np.sign(v[np.abs(v) >= zero_band])
    if s.size < 2:
        return 0
    return int(np.count_nonzero(s[1:] != s[:-1]))
