"""Approximate message passing with soft thresholding.

Each step costs two matrix-vector products:

    beta^{t+1} = eta(beta^t + X^T z^t; tau^t)
    z^{t+1}    = y - X beta^{t+1} + (|I^{t+1}| / n) z^t

where ``I^{t+1}`` is the support of ``beta^{t+1}``.  The effective noise level
of the pseudo-data ``beta^t + X^T z^t`` is estimated by ``||z^t|| / sqrt(n)``;
it is never taken from the generating parameters.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np

from ._accel import kernels
from .problem_gen import ProblemInstance
from .state_evolution import ExplicitSequence, FixedChi, OptimalGreedy

if TYPE_CHECKING:
    from .sure import TunerConfig

log = logging.getLogger(__name__)

__all__ = [
    "AmpState",
    "PolicyFromSe",
    "SureTuned",
    "AmpRunConfig",
    "amp_init",
    "amp_step",
    "amp_run",
    "trajectory_rows",
    "write_trajectory_csv",
]


@dataclass
class AmpState:
    t: int
    beta: np.ndarray
    z: np.ndarray
    pseudo_data: np.ndarray
    sigma_hat: float
    active_count: int
    tau_used: float = float("nan")  # threshold that produced beta (nan at t=0)
    matvecs: int = 0  # cumulative matrix-vector products
    mse: float = float("nan")
    terminal: bool = False
    gamma_hat: float = float("nan")  # set by the SURE tuner


@dataclass(frozen=True)
class PolicyFromSe:
    """Thresholds from a state-evolution policy evaluated at the estimated noise level.

    ``OptimalGreedy`` needs the signal prior; the run supplies the instance's
    empirical prior unless one is given here.
    """

    policy: Union[FixedChi, OptimalGreedy, ExplicitSequence]
    prior: object = None


@dataclass(frozen=True)
class SureTuned:
    tuner: "TunerConfig"


@dataclass(frozen=True)
class AmpRunConfig:
    max_iters: int = 200
    threshold_source: Union[PolicyFromSe, SureTuned, None] = None
    mse_tolerance: float | None = None
    # relative change in sigma_hat below which the run stops; None disables
    stop_rel_change: float | None = None
    track_mse: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.threshold_source is None:
            from .sure import TunerConfig

            object.__setattr__(self, "threshold_source", SureTuned(TunerConfig()))


def _mse(beta: np.ndarray, instance: ProblemInstance) -> float:
    d = beta - instance.beta_o
    return float(d @ d) / beta.size


def amp_init(instance: ProblemInstance, *, track_mse: bool = True) -> AmpState:
    """``beta = 0``, ``z = y``; one product to form the first pseudo-data ``X^T y``."""
    n, p = instance.n, instance.p
    beta = np.zeros(p)
    z = instance.y.copy()
    sigma_hat = float(np.linalg.norm(z)) / math.sqrt(n)
    pseudo = instance.X.T @ z
    return AmpState(
        t=0,
        beta=beta,
        z=z,
        pseudo_data=pseudo,
        sigma_hat=sigma_hat,
        active_count=0,
        matvecs=1,
        mse=_mse(beta, instance) if track_mse else float("nan"),
        terminal=sigma_hat == 0.0,
    )


def amp_step(state: AmpState, instance: ProblemInstance, tau: float, *, track_mse: bool = True) -> AmpState:
    """Threshold the pseudo-data at ``tau`` and update the residual with the Onsager term."""
    if tau < 0 or not math.isfinite(tau):
        raise ValueError(f"tau must be finite and nonnegative, got {tau}")
    n = instance.n
    beta = np.empty_like(state.pseudo_data)
    active = kernels.soft_threshold_count(state.pseudo_data, float(tau), beta)
    z = instance.y - instance.X @ beta
    z += (active / n) * state.z
    sigma_hat = float(np.linalg.norm(z)) / math.sqrt(n)
    pseudo = instance.X.T @ z
    pseudo += beta
    return AmpState(
        t=state.t + 1,
        beta=beta,
        z=z,
        pseudo_data=pseudo,
        sigma_hat=sigma_hat,
        active_count=int(active),
        tau_used=float(tau),
        matvecs=state.matvecs + 2,
        mse=_mse(beta, instance) if track_mse else float("nan"),
        terminal=sigma_hat == 0.0,
    )


def _policy_tau(source: PolicyFromSe, state: AmpState, instance: ProblemInstance) -> float:
    prior = source.prior if source.prior is not None else instance.config.empirical_prior()
    return source.policy.tau(state.t, state.sigma_hat, prior)


def amp_run(
    instance: ProblemInstance,
    config: AmpRunConfig | None = None,
    *,
    diagnostics: list | None = None,
) -> list[AmpState]:
    """Run AMP from ``beta = 0``; returns the trajectory ``[state_0, ..., state_T]``.

    With a SURE-tuned source the per-iteration tuner diagnostics are appended
    to ``diagnostics`` when a list is given.
    """
    from .sure import tune_and_step

    config = config or AmpRunConfig()
    source = config.threshold_source
    tuner = source.tuner if isinstance(source, SureTuned) else None
    state = amp_init(instance, track_mse=config.track_mse)
    traj = [state]
    for _ in range(config.max_iters):
        if state.terminal:
            break
        if tuner is not None:
            new, diag = tune_and_step(state, instance, tuner, track_mse=config.track_mse)
            if tuner.delta_star is None:
                tuner = replace(tuner, delta_star=diag.delta_star)
            if diagnostics is not None:
                diagnostics.append(diag)
        else:
            new = amp_step(state, instance, _policy_tau(source, state, instance), track_mse=config.track_mse)
        traj.append(new)
        if config.mse_tolerance is not None and new.mse < config.mse_tolerance:
            break
        if config.stop_rel_change is not None and state.sigma_hat > 0:
            if abs(new.sigma_hat - state.sigma_hat) < config.stop_rel_change * state.sigma_hat:
                state = new
                break
        state = new
    return traj


def trajectory_rows(traj: list[AmpState]) -> list[dict]:
    return [
        {
            "t": s.t,
            "tau": s.tau_used,
            "sigma_hat": s.sigma_hat,
            "active_count": s.active_count,
            "mse": s.mse,
        }
        for s in traj
    ]


def write_trajectory_csv(traj: list[AmpState], path: str | Path) -> None:
    rows = trajectory_rows(traj)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
