"""SURE-based threshold tuning for AMP.

For pseudo-data ``x`` with effective noise level ``sigma`` the risk of soft
thresholding at ``tau`` is estimated without knowing the signal:

    R(tau) = (1/p) ||eta(x; tau) - x||^2 + sigma^2 + (2 sigma^2 / p) sum_i (eta'(x_i; tau) - 1)

which for the plain soft threshold reduces to
``(1/p) sum min(x_i^2, tau^2) + sigma^2 - (2 sigma^2 / p) #{|x_i| <= tau}``.

The threshold is found in ``gamma = tau / sigma`` units by a bisection that
reads the sign of a forward difference of step ``Delta`` instead of a
derivative.  ``Delta`` is chosen once, at the first AMP iteration, from a
fixed grid, and reused afterwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._accel import kernels
from .shrinkage import smoothed_soft_threshold, smoothed_soft_threshold_deriv

__all__ = [
    "DEFAULT_DELTA_GRID",
    "TunerConfig",
    "RiskCurve",
    "OpCounter",
    "TuneDiagnostics",
    "sure_risk",
    "sure_curve",
    "sure_terms",
    "modified_bisection",
    "delta_scan",
    "select_delta_star",
    "tune_and_step",
    "write_diagnostics_csv",
]


def _default_delta_grid() -> tuple[float, ...]:
    # 0.01, 0.05, 0.1, 0.5, 1, 5, 10: steps below 1e-2 chase sampling
    # wiggles in the SURE curve and are never picked reliably
    out = []
    for e in range(-2, 1):
        out += [10.0**e, 5 * 10.0**e]
    return tuple(out + [10.0])


DEFAULT_DELTA_GRID = _default_delta_grid()


@dataclass(frozen=True)
class TunerConfig:
    h: float = 0.0
    bisection_iters: int = 15
    epsilon: float = 0.0
    delta_grid: tuple[float, ...] = DEFAULT_DELTA_GRID
    delta_star: float | None = None
    keep_curve: bool = False  # record every (gamma, R) evaluated in diagnostics

    def __post_init__(self):
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        if self.h < 0:
            raise ValueError("h must be nonnegative")
        if self.bisection_iters < 1:
            raise ValueError("bisection_iters must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        g = self.delta_grid
        if not g or any(d <= 0 for d in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("delta_grid must be nonempty, positive and strictly increasing")
        if self.delta_star is not None and self.delta_star <= 0:
            raise ValueError("delta_star must be positive")

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "bisection_iters": self.bisection_iters,
            "epsilon": self.epsilon,
            "delta_grid": list(self.delta_grid),
            "delta_star": self.delta_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TunerConfig":
        kw = {k: d[k] for k in ("h", "bisection_iters", "epsilon", "delta_star") if k in d}
        if "delta_grid" in d:
            kw["delta_grid"] = tuple(d["delta_grid"])
        return cls(**kw)


@dataclass
class RiskCurve:
    gammas: np.ndarray
    estimates: np.ndarray
    sigma_used: float

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float)
        self.estimates = np.asarray(self.estimates, dtype=float)
        if self.gammas.shape != self.estimates.shape:
            raise ValueError("gammas and estimates must have equal length")

    def argmin(self) -> float:
        return float(self.gammas[int(np.argmin(self.estimates))])


@dataclass
class OpCounter:
    """Scalar work done by the tuner, in pseudo-data element visits."""

    element_ops: int = 0
    risk_evals: int = 0

    def add_eval(self, p: int) -> None:
        self.risk_evals += 1
        self.element_ops += p


@dataclass
class TuneDiagnostics:
    iteration: int
    gamma_hat: float
    tau: float
    delta_star: float
    risk_at_gamma_hat: float
    ops: OpCounter = field(default_factory=OpCounter)
    curve: RiskCurve | None = None

    def as_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "gamma_hat": self.gamma_hat,
            "tau": self.tau,
            "delta_star": self.delta_star,
            "risk_at_gamma_hat": self.risk_at_gamma_hat,
            "element_ops": self.ops.element_ops,
        }


# -------------------------------------------------------------- estimate


def sure_risk(pseudo_data: np.ndarray, sigma: float, tau: float, h: float = 0.0) -> float:
    """Risk estimate for thresholding ``pseudo_data`` at ``tau``; ``O(p)``, no products."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(pseudo_data, dtype=float)
    p = x.size
    s2 = sigma * sigma
    if h == 0:
        sq, inside = kernels.sure_sum(x, float(tau))
        return sq / p + s2 - 2.0 * s2 * inside / p
    eta = smoothed_soft_threshold(x, tau, h)
    d = smoothed_soft_threshold_deriv(x, tau, h)
    return float(np.sum((eta - x) ** 2)) / p + s2 + 2.0 * s2 * float(np.sum(d - 1.0)) / p


def sure_terms(x: np.ndarray, sigma: float, tau: float) -> np.ndarray:
    """Per-coordinate SURE summands (their mean is :func:`sure_risk` at ``h=0``)."""
    x = np.asarray(x, dtype=float)
    s2 = sigma * sigma
    return np.minimum(x * x, tau * tau) + s2 - 2.0 * s2 * (np.abs(x) <= tau)


def sure_curve(pseudo_data: np.ndarray, sigma: float, gammas: Sequence[float], h: float = 0.0) -> RiskCurve:
    gammas = np.asarray(gammas, dtype=float)
    est = [sure_risk(pseudo_data, sigma, g * sigma, h) for g in gammas]
    return RiskCurve(gammas, np.asarray(est), sigma)


# -------------------------------------------------------------- search


def modified_bisection(
    pseudo_data: np.ndarray | None,
    sigma: float,
    delta: float,
    config: TunerConfig,
    *,
    risk: Callable[[float], float] | None = None,
    gamma_hi: float | None = None,
    history: list | None = None,
    ops: OpCounter | None = None,
    record: list | None = None,
) -> float:
    """Bisection on the sign of ``(R(gamma + delta) - R(gamma)) / delta``.

    ``risk`` replaces the SURE estimate by any function of ``gamma`` (used to
    test the search on exact risk curves); ``gamma_hi`` then gives the
    starting upper end, which otherwise is ``max|pseudo_data| / sigma``.
    ``history`` receives ``(gamma_low, gamma_bar, gamma, diff)`` per step.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = 0 if pseudo_data is None else np.asarray(pseudo_data).size
    if risk is None:
        if pseudo_data is None:
            raise ValueError("need pseudo_data or a risk callback")
        x = np.asarray(pseudo_data, dtype=float)
        h = config.h

        def risk(g: float) -> float:
            return sure_risk(x, sigma, g * sigma, h)

    if gamma_hi is None:
        if pseudo_data is None:
            raise ValueError("gamma_hi is required without pseudo_data")
        gamma_hi = float(np.max(np.abs(pseudo_data))) / sigma if p else 0.0
        if ops is not None:
            ops.element_ops += p

    cache: dict[float, float] = {}

    def R(g: float) -> float:
        if g not in cache:
            cache[g] = risk(g)
            if ops is not None:
                ops.add_eval(p)
            if record is not None:
                record.append((g, cache[g]))
        return cache[g]

    lo, hi = 0.0, float(gamma_hi)
    gamma = 0.5 * (lo + hi)
    for _ in range(config.bisection_iters):
        gamma = 0.5 * (lo + hi)
        diff = (R(gamma + delta) - R(gamma)) / delta
        if history is not None:
            history.append((lo, hi, gamma, diff))
        if diff > config.epsilon:
            hi = gamma
        elif diff < -config.epsilon:
            lo = gamma
        else:
            break
    return gamma


def delta_scan(
    pseudo_data: np.ndarray, sigma: float, config: TunerConfig, ops: OpCounter | None = None
) -> list[tuple[float, float, float]]:
    """``(Delta, gamma_hat, R(gamma_hat))`` for every ``Delta`` in the grid."""
    out = []
    p = np.asarray(pseudo_data).size
    for d in config.delta_grid:
        g = modified_bisection(pseudo_data, sigma, d, config, ops=ops)
        r = sure_risk(pseudo_data, sigma, g * sigma, config.h)
        if ops is not None:
            ops.add_eval(p)
        out.append((d, g, r))
    return out


def select_delta_star(
    pseudo_data: np.ndarray, sigma: float, config: TunerConfig, ops: OpCounter | None = None
) -> float:
    """Grid ``Delta`` whose bisection output has the smallest estimated risk; ties go to the smaller ``Delta``."""
    best_d, best_r = None, math.inf
    for d, _, r in delta_scan(pseudo_data, sigma, config, ops):
        if r < best_r:
            best_d, best_r = d, r
    return best_d if best_d is not None else config.delta_grid[0]


def tune_and_step(state, instance, config: TunerConfig, *, track_mse: bool = True):
    """Pick ``tau`` for the current pseudo-data and take one AMP step with it.

    Locks ``Delta`` on the first call when ``config.delta_star`` is unset; the
    chosen value is reported in the diagnostics for the caller to reuse.
    """
    from .amp import amp_step

    ops = OpCounter()
    sigma = state.sigma_hat
    x = state.pseudo_data
    delta_star = config.delta_star
    if delta_star is None:
        delta_star = select_delta_star(x, sigma, config, ops)
    record = [] if config.keep_curve else None
    gamma = modified_bisection(x, sigma, delta_star, config, ops=ops, record=record)
    tau = gamma * sigma
    risk_hat = sure_risk(x, sigma, tau, config.h)
    ops.add_eval(x.size)
    new = amp_step(state, instance, tau, track_mse=track_mse)
    new.gamma_hat = gamma
    curve = None
    if record:
        record.sort()
        curve = RiskCurve([g for g, _ in record], [r for _, r in record], sigma)
    diag = TuneDiagnostics(
        iteration=state.t + 1,
        gamma_hat=gamma,
        tau=tau,
        delta_star=delta_star,
        risk_at_gamma_hat=risk_hat,
        ops=ops,
        curve=curve,
    )
    return new, diag


def write_diagnostics_csv(diags: Sequence[TuneDiagnostics], path: str | Path) -> None:
    rows = [d.as_row() for d in diags]
    fields = list(rows[0]) if rows else ["iteration", "gamma_hat", "tau", "delta_star", "risk_at_gamma_hat"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
