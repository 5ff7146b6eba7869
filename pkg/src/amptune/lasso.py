"""LASSO reference solver: cyclic coordinate descent with a KKT certificate.

Solves ``min_beta 1/2 ||y - X beta||^2 + lam ||beta||_1``.  Sweeps alternate
between all coordinates and the current support (the usual active-set
speed-up); a solution is accepted only once the largest coordinate update is
below ``tol * (1 + ||beta||_inf)`` *and* the KKT conditions hold to
``kkt_tol``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._accel import kernels
from .problem_gen import ProblemInstance

log = logging.getLogger(__name__)

__all__ = [
    "LassoSolution",
    "MaxIterations",
    "lasso_objective",
    "kkt_gap",
    "solve_lasso",
    "solve_lasso_xy",
    "lasso_path",
    "path_rows",
    "write_path_csv",
    "proximal_gradient",
]


@dataclass
class LassoSolution:
    beta_hat: np.ndarray
    lam: float
    kkt_gap: float
    iterations: int  # coordinate-descent sweeps (full and active-set)
    converged: bool = True
    objective: float = float("nan")

    @property
    def l0(self) -> int:
        return int(np.count_nonzero(self.beta_hat))


class MaxIterations(RuntimeError):
    """Sweep budget exhausted; ``solution`` holds the best iterate and its KKT gap."""

    def __init__(self, message: str, solution: LassoSolution):
        super().__init__(message)
        self.solution = solution


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return 0.5 * float(r @ r) + lam * float(np.abs(beta).sum())


def _kkt_gap_from_grad(g: np.ndarray, beta: np.ndarray, lam: float) -> float:
    active = beta != 0
    gap_active = np.abs(g[active] - lam * np.sign(beta[active]))
    gap_inactive = np.maximum(np.abs(g[~active]) - lam, 0.0)
    m1 = float(gap_active.max()) if gap_active.size else 0.0
    m2 = float(gap_inactive.max()) if gap_inactive.size else 0.0
    return max(m1, m2)


def kkt_gap(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Largest violation of the LASSO optimality conditions at ``beta``."""
    return _kkt_gap_from_grad(X.T @ (y - X @ beta), beta, lam)


class _CdProblem:
    """Column-major copy of ``X`` and its column norms, reused across a path."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.asfortranarray(X, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.col_sq = np.einsum("ij,ij->j", self.X, self.X)
        self.all_idx = np.arange(self.X.shape[1], dtype=np.int64)


def _solve(
    prob: _CdProblem,
    lam: float,
    tol: float,
    kkt_tol: float,
    max_sweeps: int,
    warm_start: np.ndarray | None,
    check_objective: bool,
) -> LassoSolution:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    X, y = prob.X, prob.y
    p = X.shape[1]
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if beta.shape != (p,):
        raise ValueError("warm start has the wrong length")
    r = y - X @ beta
    obj = 0.5 * float(r @ r) + lam * float(np.abs(beta).sum())
    sweeps = 0
    gap = float("inf")
    full = True

    def check(obj_prev: float) -> float:
        new = 0.5 * float(r @ r) + lam * float(np.abs(beta).sum())
        if check_objective and new > obj_prev + 1e-12 * max(1.0, abs(obj_prev)):
            raise RuntimeError(f"objective increased during coordinate descent ({obj_prev!r} -> {new!r})")
        return new

    while sweeps < max_sweeps:
        idx = prob.all_idx if full else np.flatnonzero(beta).astype(np.int64)
        if idx.size == 0:
            idx = prob.all_idx
            full = True
        step = kernels.cd_sweep(X, r, beta, lam, prob.col_sq, idx)
        sweeps += 1
        obj = check(obj)
        small = step < tol * (1.0 + float(np.max(np.abs(beta), initial=0.0)))
        if not full:
            # converge on the support first, then confirm with a full pass
            if small:
                full = True
            continue
        if small:
            # refresh the residual to shed accumulated rounding before certifying
            r[:] = y - X @ beta
            gap = _kkt_gap_from_grad(X.T @ r, beta, lam)
            if gap <= kkt_tol:
                return LassoSolution(beta, float(lam), gap, sweeps, True, obj)
        full = False
    gap = kkt_gap(X, y, beta, lam)
    sol = LassoSolution(beta, float(lam), gap, sweeps, False, lasso_objective(X, y, beta, lam))
    raise MaxIterations(f"lambda={lam}: no certificate after {sweeps} sweeps (kkt gap {gap:.3g})", sol)


def solve_lasso_xy(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    *,
    tol: float = 1e-8,
    kkt_tol: float = 1e-6,
    max_sweeps: int = 100_000,
    warm_start: np.ndarray | None = None,
    check_objective: bool = True,
) -> LassoSolution:
    return _solve(_CdProblem(X, y), lam, tol, kkt_tol, max_sweeps, warm_start, check_objective)


def solve_lasso(
    instance: ProblemInstance,
    lam: float,
    *,
    tol: float = 1e-8,
    kkt_tol: float = 1e-6,
    max_sweeps: int = 100_000,
    warm_start: np.ndarray | None = None,
    check_objective: bool = True,
) -> LassoSolution:
    return solve_lasso_xy(
        instance.X,
        instance.y,
        lam,
        tol=tol,
        kkt_tol=kkt_tol,
        max_sweeps=max_sweeps,
        warm_start=warm_start,
        check_objective=check_objective,
    )


def lasso_path(
    instance: ProblemInstance,
    lambda_grid: Sequence[float],
    *,
    tol: float = 1e-8,
    kkt_tol: float = 1e-6,
    max_sweeps: int = 100_000,
) -> list[LassoSolution]:
    """Warm-started solves from the largest ``lambda`` down; returned in decreasing ``lambda``.

    A point that exhausts its sweep budget is kept (``converged=False``) and
    the path continues from it.
    """
    grid = sorted((float(l) for l in lambda_grid), reverse=True)
    if not grid or grid[-1] <= 0:
        raise ValueError("lambda grid must be nonempty and positive")
    prob = _CdProblem(instance.X, instance.y)
    out = []
    beta = None
    for lam in grid:
        try:
            sol = _solve(prob, lam, tol, kkt_tol, max_sweeps, beta, True)
        except MaxIterations as exc:
            log.warning("%s", exc)
            sol = exc.solution
        out.append(sol)
        beta = sol.beta_hat
    return out


def path_rows(path: Sequence[LassoSolution], beta_o: np.ndarray | None = None) -> list[dict]:
    rows = []
    for s in path:
        p = s.beta_hat.size
        mse = float(np.sum((s.beta_hat - beta_o) ** 2)) / p if beta_o is not None else float("nan")
        rows.append(
            {
                "lambda": s.lam,
                "l0_fraction": s.l0 / p,
                "mse": mse,
                "kkt_gap": s.kkt_gap,
                "iterations": s.iterations,
            }
        )
    return rows


def write_path_csv(path: Sequence[LassoSolution], out: str | Path, beta_o: np.ndarray | None = None) -> None:
    rows = path_rows(path, beta_o)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["lambda", "l0_fraction", "mse", "kkt_gap", "iterations"])
        w.writeheader()
        w.writerows(rows)


def proximal_gradient(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    *,
    tol: float = 1e-14,
    max_iter: int = 2_000_000,
) -> np.ndarray:
    """Accelerated proximal gradient (FISTA with adaptive restart); an independent check on :func:`solve_lasso`."""
    L = float(np.linalg.norm(X, 2) ** 2)
    p = X.shape[1]
    beta = np.zeros(p)
    v = beta.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = X.T @ (X @ v - y)
        u = v - grad / L
        new = np.sign(u) * np.maximum(np.abs(u) - lam / L, 0.0)
        if float(np.max(np.abs(new - beta))) < tol:
            return new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if float((v - new) @ (new - beta)) > 0:
            # momentum points uphill: restart
            t_new = 1.0
            v = new.copy()
        else:
            v = new + ((t - 1.0) / t_new) * (new - beta)
        beta, t = new, t_new
    return beta
