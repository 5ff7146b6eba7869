"""State evolution for soft-threshold AMP and the LASSO calibration it implies.

The recursion tracks the effective noise of the AMP pseudo-data:

    sigma_{t+1}^2 = sigma_w^2 + scalar_risk(prior, sigma_t, tau_t) / delta.

With the fixed false-alarm policy ``tau_t = chi * sigma_t`` its fixed point
``sigma_hat`` gives the asymptotic LASSO solution at

    lambda = chi * sigma_hat * (1 - P(|B + sigma_hat W| > chi sigma_hat) / delta).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .problem_gen import SignalPrior
from .shrinkage import (
    ZERO_BAND,
    count_sign_changes,
    exceedance_prob,
    min_risk,
    optimal_tau,
    quad_expectation,
    scalar_risk,
)

log = logging.getLogger(__name__)

__all__ = [
    "NonConvergence",
    "FixedChi",
    "OptimalGreedy",
    "ExplicitSequence",
    "SeConfig",
    "SeTrace",
    "LambdaCalibration",
    "LambdaPath",
    "initial_sigma",
    "psi",
    "se_step",
    "se_trace",
    "se_fixed_point",
    "noiseless_fixed_points",
    "lambda_path",
    "optimal_chi",
    "chi_for_lambda",
    "greedy_optimal_taus",
    "greedy_fixed_point",
    "joint_grid_search",
    "phase_transition_rho",
    "se_recovers",
    "maximin_chi",
    "active_fraction_quad",
    "default_chi_grid",
    "admissible_chi_grid",
    "calibrate",
]


class NonConvergence(RuntimeError):
    """The state-evolution fixed point could not be located to tolerance."""


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class FixedChi:
    chi: float

    def __post_init__(self):
        if self.chi < 0:
            raise ValueError("chi must be nonnegative")

    def tau(self, t: int, sigma: float, prior: SignalPrior | None = None) -> float:
        return self.chi * sigma


@dataclass(frozen=True)
class OptimalGreedy:
    # threshold used when the prior has no nonzero atoms (risk decreasing in tau)
    cap_gamma: float = 50.0

    def tau(self, t: int, sigma: float, prior: SignalPrior) -> float:
        tau = optimal_tau(prior, sigma)
        return tau if math.isfinite(tau) else self.cap_gamma * sigma


@dataclass(frozen=True)
class ExplicitSequence:
    taus: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if not self.taus:
            raise ValueError("explicit threshold sequence must be nonempty")
        if any(t < 0 for t in self.taus):
            raise ValueError("thresholds must be nonnegative")

    def tau(self, t: int, sigma: float, prior: SignalPrior | None = None) -> float:
        # the last threshold is held once the sequence runs out
        return self.taus[min(t, len(self.taus) - 1)]


ThresholdPolicy = FixedChi | OptimalGreedy | ExplicitSequence


@dataclass(frozen=True)
class SeConfig:
    prior: SignalPrior
    delta: float
    sigma_w: float = 0.0
    policy: ThresholdPolicy = field(default_factory=OptimalGreedy)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")

    def with_policy(self, policy: ThresholdPolicy) -> "SeConfig":
        return SeConfig(self.prior, self.delta, self.sigma_w, policy)


@dataclass
class SeTrace:
    sigmas: list[float]
    taus: list[float]
    converged: bool = False
    fixed_point_sigma: float = float("nan")

    @property
    def mses(self) -> list[float]:
        """Predicted ``(1/p)||beta^{t+1} - beta_o||^2`` after each threshold step."""
        return [s * s for s in self.sigmas[1:]]


@dataclass(frozen=True)
class LambdaCalibration:
    chi: float
    sigma_hat: float
    lam: float
    mse: float
    active_fraction: float

    def as_row(self) -> dict:
        return {
            "chi": self.chi,
            "lambda": self.lam,
            "sigma_hat": self.sigma_hat,
            "mse": self.mse,
            "active_fraction": self.active_fraction,
        }


# ---------------------------------------------------------------- recursion


def initial_sigma(config: SeConfig, *, include_noise: bool = True) -> float:
    """Noise level of the first pseudo-data ``X^T y`` (AMP started at beta = 0).

    ``include_noise=False`` gives the noiseless convention ``E[B^2] / delta``.
    """
    s2 = config.prior.second_moment() / config.delta
    if include_noise:
        s2 += config.sigma_w**2
    return math.sqrt(s2)


def se_step(sigma: float, tau: float, config: SeConfig) -> float:
    """One state-evolution update ``sigma_t -> sigma_{t+1}``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = scalar_risk(config.prior, sigma, tau)
    return math.sqrt(config.sigma_w**2 + r / config.delta)


def psi(s2: float, chi: float, config: SeConfig) -> float:
    """Fixed-false-alarm map on variances: ``sigma^2 -> sigma_w^2 + risk/delta``."""
    if s2 <= 0:
        return config.sigma_w**2
    s = math.sqrt(s2)
    return config.sigma_w**2 + scalar_risk(config.prior, s, chi * s) / config.delta


def se_trace(config: SeConfig, T: int, *, sigma0: float | None = None, include_noise: bool = True) -> SeTrace:
    """Run ``T`` steps of the recursion under ``config.policy``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    sigma = initial_sigma(config, include_noise=include_noise) if sigma0 is None else float(sigma0)
    sigmas, taus = [sigma], []
    for t in range(T):
        if sigma <= 0:
            sigmas.append(0.0)
            taus.append(0.0)
            continue
        tau = config.policy.tau(t, sigma, config.prior)
        taus.append(tau)
        sigma = se_step(sigma, tau, config)
        sigmas.append(sigma)
    return SeTrace(sigmas=sigmas, taus=taus)


# ------------------------------------------------------------- fixed points


def _slope_at_infinity(chi: float, config: SeConfig) -> float:
    # psi(s2)/s2 as s2 -> inf: the signal becomes negligible against the noise
    return scalar_risk(SignalPrior.zero(), 1.0, chi) / config.delta


def _fixed_point_iterate(chi: float, config: SeConfig, s2: float, tol: float, max_iter: int) -> float:
    alpha = 1.0
    prev_step = None
    for _ in range(max_iter):
        target = psi(s2, chi, config)
        step = target - s2
        if abs(step) < tol:
            return target
        if prev_step is not None and step * prev_step < 0 and alpha == 1.0:
            alpha = 0.5
        s2 = s2 + alpha * step
        prev_step = step
    raise NonConvergence(f"fixed-point iteration for chi={chi} did not reach |d sigma^2| < {tol}")


def noiseless_fixed_points(chi: float, config: SeConfig, grid_size: int = 400) -> list[float]:
    """All nonnegative fixed points of ``psi`` (as ``sigma^2``) when ``sigma_w = 0``.

    ``sigma^2 = 0`` is always one; others are located by scanning the sign of
    ``psi(s) - s`` on a log grid and polishing each bracket.
    """
    s_hi = max(10.0 * initial_sigma(config, include_noise=False) ** 2, 1.0)
    grid = np.geomspace(1e-14, s_hi, grid_size)
    f = np.array([psi(s, chi, config) - s for s in grid])
    roots = [0.0]
    for i in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]:
        roots.append(optimize.brentq(lambda s: psi(s, chi, config) - s, grid[i], grid[i + 1], xtol=1e-300, rtol=1e-15))
    return roots


def se_fixed_point(
    config: SeConfig,
    chi: float | None = None,
    *,
    method: str = "iterate",
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> LambdaCalibration:
    """Fixed point of the fixed-false-alarm recursion and its LASSO calibration.

    ``method="iterate"`` runs fixed-point iteration from the AMP starting noise
    level, halving the step once oscillation is seen.  ``method="bracket"``
    solves ``psi(s) = s`` by Brent's method instead; ``psi`` is concave with a
    unique crossing when ``sigma_w > 0`` so both land on the same root.
    """
    if chi is None:
        if not isinstance(config.policy, FixedChi):
            raise ValueError("se_fixed_point needs a FixedChi policy or an explicit chi")
        chi = config.policy.chi
    chi = float(chi)
    if _slope_at_infinity(chi, config) >= 1.0:
        raise NonConvergence(f"chi={chi}: state evolution diverges for delta={config.delta}")

    if config.sigma_w == 0:
        roots = noiseless_fixed_points(chi, config)
        # iteration from the initial noise level settles on the largest root
        s2 = max(roots)
    elif method == "iterate":
        s2 = _fixed_point_iterate(chi, config, initial_sigma(config) ** 2, tol, max_iter)
    elif method == "bracket":
        lo = config.sigma_w**2
        hi = max(initial_sigma(config) ** 2, lo) * 2.0
        while psi(hi, chi, config) - hi > 0:
            hi *= 2.0
            if hi > 1e300:
                raise NonConvergence(f"chi={chi}: no upper bracket for the fixed point")
        s2 = optimize.brentq(lambda s: psi(s, chi, config) - s, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=max_iter)
        if abs(psi(s2, chi, config) - s2) > tol:
            raise NonConvergence(f"chi={chi}: residual {abs(psi(s2, chi, config) - s2):.3g} above {tol}")
    else:
        raise ValueError(f"unknown method {method!r}")
    return calibrate(config, chi, math.sqrt(s2))


def calibrate(config: SeConfig, chi: float, sigma_hat: float) -> LambdaCalibration:
    if sigma_hat <= 0:
        active = 0.0 if config.prior.nonzero_mass == 0 else config.prior.nonzero_mass
        return LambdaCalibration(chi=chi, sigma_hat=0.0, lam=0.0, mse=0.0, active_fraction=active)
    tau = chi * sigma_hat
    active = exceedance_prob(config.prior, sigma_hat, tau)
    lam = tau * (1.0 - active / config.delta)
    mse = scalar_risk(config.prior, sigma_hat, tau)
    return LambdaCalibration(chi=chi, sigma_hat=sigma_hat, lam=lam, mse=mse, active_fraction=active)


def active_fraction_quad(config: SeConfig, cal: LambdaCalibration) -> float:
    """``P(|B + sigma_hat W| > chi sigma_hat)`` by quadrature (oracle for the closed form)."""
    vals, wts = config.prior.support()
    s, tau = cal.sigma_hat, cal.chi * cal.sigma_hat
    total = 0.0
    for b, q in zip(vals, wts):
        if q == 0:
            continue
        breaks = ((tau - b) / s, (-tau - b) / s)
        total += q * quad_expectation(lambda z: float(abs(b + s * z) > tau), breaks)
    return total


# ------------------------------------------------------------ lambda path


def default_chi_grid(num: int = 200, lo: float = 1e-2, hi: float = 10.0) -> np.ndarray:
    return np.geomspace(lo, hi, num)


def _admissible(config: SeConfig, chi: float) -> bool:
    try:
        return se_fixed_point(config, chi, method="bracket").lam > 0
    except NonConvergence:
        return False


def admissible_chi_grid(config: SeConfig, num: int = 200, hi: float = 10.0) -> np.ndarray:
    """``num`` log-spaced ``chi`` values covering only the region where ``lambda > 0``.

    Admissibility is monotone in ``chi`` (lambda(chi) is increasing), so its
    lower edge is found by bisection.
    """
    if not _admissible(config, hi):
        raise NonConvergence(f"no admissible chi below {hi}")
    lo = 1e-6
    if not _admissible(config, lo):
        a, b = lo, hi
        for _ in range(80):
            mid = math.sqrt(a * b)
            if _admissible(config, mid):
                b = mid
            else:
                a = mid
        lo = b * (1 + 1e-9)
    return np.geomspace(lo, hi, num)


@dataclass
class LambdaPath:
    calibrations: list[LambdaCalibration]
    excluded: list[tuple[float, str]]

    @property
    def chi(self) -> np.ndarray:
        return np.array([c.chi for c in self.calibrations])

    @property
    def lam(self) -> np.ndarray:
        return np.array([c.lam for c in self.calibrations])

    @property
    def mse(self) -> np.ndarray:
        return np.array([c.mse for c in self.calibrations])

    @property
    def active_fraction(self) -> np.ndarray:
        return np.array([c.active_fraction for c in self.calibrations])

    @property
    def sigma_hat(self) -> np.ndarray:
        return np.array([c.sigma_hat for c in self.calibrations])

    def rows(self) -> list[dict]:
        return [c.as_row() for c in self.calibrations]

    def lambda_increasing(self) -> bool:
        """``lambda(chi)`` strictly increasing along the (chi-sorted) path."""
        order = np.argsort(self.chi)
        return bool(np.all(np.diff(self.lam[order]) > 0))

    def active_strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.active_fraction) < 0))

    def mse_sign_changes(self, zero_band: float = ZERO_BAND) -> int:
        """Sign changes of the finite-difference slope of MSE against lambda."""
        slope = np.diff(self.mse) / np.diff(self.lam)
        return count_sign_changes(slope, zero_band)


def lambda_path(config: SeConfig, chi_grid: Sequence[float] | None = None) -> LambdaPath:
    """Calibrate every ``chi`` in the grid; keep points with ``lambda > 0``, sorted by lambda.

    Grid points where the recursion diverges or where the calibrated lambda is
    not positive are reported in ``excluded`` rather than silently dropped.
    """
    grid = default_chi_grid() if chi_grid is None else np.asarray(chi_grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("chi grid must be positive and strictly increasing")
    kept, excluded = [], []
    for chi in grid:
        try:
            cal = se_fixed_point(config, float(chi))
        except NonConvergence as exc:
            excluded.append((float(chi), f"nonconvergence: {exc}"))
            continue
        if cal.lam <= 0:
            excluded.append((float(chi), "lambda <= 0"))
            continue
        kept.append(cal)
    kept.sort(key=lambda c: c.lam)
    if excluded:
        log.debug("lambda_path excluded %d grid points", len(excluded))
    return LambdaPath(kept, excluded)


def optimal_chi(config: SeConfig, chi_grid: Sequence[float] | None = None) -> LambdaCalibration:
    """MSE-minimising ``chi``: grid argmin polished by a bounded scalar search.

    The bowl shape in lambda (and monotone lambda(chi)) makes the neighbouring
    grid points a valid bracket for the refinement.
    """
    path = lambda_path(config, chi_grid)
    if not path.calibrations:
        raise NonConvergence("no admissible chi on the grid")
    chis = np.sort(path.chi)
    by_chi = sorted(path.calibrations, key=lambda c: c.chi)
    i = int(np.argmin([c.mse for c in by_chi]))
    lo = chis[max(i - 1, 0)]
    hi = chis[min(i + 1, len(chis) - 1)]
    if hi <= lo:
        return by_chi[i]
    res = optimize.minimize_scalar(
        lambda c: se_fixed_point(config, c).mse,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    best = se_fixed_point(config, float(res.x))
    return best if best.mse <= by_chi[i].mse else by_chi[i]


def chi_for_lambda(config: SeConfig, lam: float, chi_lo: float, chi_hi: float) -> LambdaCalibration:
    """Invert the increasing calibration map on ``[chi_lo, chi_hi]``."""
    f = lambda c: se_fixed_point(config, c).lam - lam  # noqa: E731
    chi = optimize.brentq(f, chi_lo, chi_hi, xtol=1e-14, rtol=1e-15)
    return se_fixed_point(config, chi)


# ------------------------------------------------------- greedy optimality


def greedy_optimal_taus(config: SeConfig, T: int, *, include_noise: bool = True) -> SeTrace:
    """Thresholds chosen one step at a time to minimise the next noise level."""
    return se_trace(config.with_policy(OptimalGreedy()), T, include_noise=include_noise)


def greedy_fixed_point(config: SeConfig, *, tol: float = 1e-15, max_iter: int = 100_000) -> SeTrace:
    """Iterate the greedy recursion to its limit ``sigma_inf``.

    The limit is cross-checked by a root solve of
    ``s = sigma_w^2 + min_tau risk(sqrt(s), tau) / delta`` on the last bracket.
    """
    sigma = initial_sigma(config)
    sigmas, taus = [sigma], []
    converged = False
    for _ in range(max_iter):
        if sigma <= 0:
            converged = True
            break
        tau = optimal_tau(config.prior, sigma)
        if not math.isfinite(tau):
            tau = OptimalGreedy().cap_gamma * sigma
        new = math.sqrt(config.sigma_w**2 + scalar_risk(config.prior, sigma, tau) / config.delta)
        sigmas.append(new)
        taus.append(tau)
        if abs(new * new - sigma * sigma) < tol:
            converged = True
            sigma = new
            break
        sigma = new
    fp = sigma
    if config.sigma_w > 0 and converged:
        g = lambda s2: config.sigma_w**2 + min_risk(config.prior, math.sqrt(s2)) / config.delta - s2  # noqa: E731
        lo, hi = config.sigma_w**2, sigma * sigma * (1 + 1e-6) + 1e-300
        if g(lo) > 0 > g(hi):
            fp = math.sqrt(optimize.brentq(g, lo, hi, xtol=1e-300, rtol=1e-15))
    return SeTrace(sigmas=sigmas, taus=taus, converged=converged, fixed_point_sigma=fp)


def joint_grid_search(config: SeConfig, tau_grids: Sequence[Sequence[float]]) -> tuple[float, tuple[float, ...]]:
    """Exhaustive search over threshold sequences; returns (best final sigma, argmin)."""
    sigma0 = initial_sigma(config)
    best = (float("inf"), ())
    frontier = [(sigma0, ())]
    for grid in tau_grids:
        nxt = []
        for sigma, taus in frontier:
            for tau in grid:
                nxt.append((se_step(sigma, tau, config) if sigma > 0 else 0.0, taus + (float(tau),)))
        frontier = nxt
    for sigma, taus in frontier:
        if sigma < best[0]:
            best = (sigma, taus)
    return best


# ------------------------------------------------- noiseless phase transition


def _zero_risk_unit(chi: float) -> float:
    return scalar_risk(SignalPrior.zero(), 1.0, chi)


def phase_transition_rho(chi: float, delta: float) -> float:
    """Largest ``rho = k/n`` for which noiseless SE with ``tau = chi sigma`` reaches 0.

    Near ``sigma = 0`` the map is linear with slope
    ``[eps (1 + chi^2) + (1 - eps) M(chi)] / delta``, ``eps = rho delta`` and
    ``M(chi)`` the pure-noise risk; by concavity the origin attracts from every
    start exactly when this slope is below one.
    """
    m = _zero_risk_unit(chi)
    if m >= delta:
        return 0.0
    eps = (delta - m) / (1.0 + chi * chi - m)
    return min(eps / delta, 1.0)


def se_recovers(chi: float, delta: float, rho: float, *, T: int = 4000, value: float = 1.0) -> bool:
    """Brute-force check: does noiseless SE from the standard start drive sigma to ~0?"""
    prior = SignalPrior.point_mass(value, rho * delta)
    config = SeConfig(prior, delta, 0.0, FixedChi(chi))
    sigma = initial_sigma(config)
    start = sigma
    for _ in range(T):
        if sigma < 1e-9 * start:
            return True
        sigma = se_step(sigma, chi * sigma, config)
    return sigma < 1e-6 * start


def maximin_chi(delta: float, *, grid_size: int = 400) -> float:
    """``chi`` with the highest noiseless phase transition, grid search then Brent polish."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    grid = np.linspace(1e-3, 6.0, grid_size)
    vals = np.array([phase_transition_rho(c, delta) for c in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    res = optimize.minimize_scalar(
        lambda c: -phase_transition_rho(c, delta), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}
    )
    return float(res.x)
