"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature.  The active
implementation is chosen once at import time: numba is used unless it is
missing or ``AMPTUNE_DISABLE_NUMBA`` is set to a truthy value.  Both paths
stay importable (``numba_kernels`` / ``numpy_kernels``) so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("AMPTUNE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------- numpy path


def _np_soft_threshold_count(x, tau, out):
    np.abs(x, out=out)
    out -= tau
    np.maximum(out, 0.0, out=out)
    out *= np.sign(x)
    return int(np.count_nonzero(out))


def _np_sure_sum(x, tau):
    # returns (sum_i min(x_i^2, tau^2), #{|x_i| <= tau})
    a = np.abs(x)
    inside = a <= tau
    s = float(np.sum(np.where(inside, x * x, tau * tau)))
    return s, int(np.count_nonzero(inside))


def _np_cd_sweep(X, r, beta, lam, col_sq, idx):
    """One cyclic coordinate-descent sweep over columns ``idx``; ``r = y - X beta`` kept in sync."""
    max_delta = 0.0
    for j in idx:
        cj = col_sq[j]
        if cj == 0.0:
            continue
        xj = X[:, j]
        old = beta[j]
        rho = xj @ r + cj * old
        new = np.sign(rho) * max(abs(rho) - lam, 0.0) / cj
        d = new - old
        if d != 0.0:
            r -= d * xj
            beta[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


numpy_kernels = SimpleNamespace(
    soft_threshold_count=_np_soft_threshold_count,
    sure_sum=_np_sure_sum,
    cd_sweep=_np_cd_sweep,
)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _nb_soft_threshold_count(x, tau, out):
        count = 0
        for i in range(x.shape[0]):
            v = x[i]
            if v > tau:
                out[i] = v - tau
                count += 1
            elif v < -tau:
                out[i] = v + tau
                count += 1
            else:
                out[i] = 0.0
        return count

    @numba.njit(cache=True, nogil=True)
    def _nb_sure_sum(x, tau):
        s = 0.0
        inside = 0
        t2 = tau * tau
        for i in range(x.shape[0]):
            v = x[i]
            if abs(v) <= tau:
                s += v * v
                inside += 1
            else:
                s += t2
        return s, inside

    @numba.njit(cache=True, nogil=True)
    def _nb_cd_sweep(X, r, beta, lam, col_sq, idx):
        n = X.shape[0]
        max_delta = 0.0
        for jj in range(idx.shape[0]):
            j = idx[jj]
            cj = col_sq[j]
            if cj == 0.0:
                continue
            old = beta[j]
            rho = cj * old
            for i in range(n):
                rho += X[i, j] * r[i]
            if rho > lam:
                new = (rho - lam) / cj
            elif rho < -lam:
                new = (rho + lam) / cj
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        return max_delta

    numba_kernels = SimpleNamespace(
        soft_threshold_count=_nb_soft_threshold_count,
        sure_sum=_nb_sure_sum,
        cd_sweep=_nb_cd_sweep,
    )
else:  # pragma: no cover
    numba_kernels = None


kernels = numba_kernels if USE_NUMBA else numpy_kernels
