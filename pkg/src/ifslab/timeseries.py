"""Autocovariances and the truncated long-run variance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import SeriesNotDecayingWarning

CONSECUTIVE = 5
K_MAX = 200


def autocovariance(y, max_lag: int) -> np.ndarray:
    """Biased sample autocovariances ``(1/n) sum (y_j - ybar)(y_{j+k} - ybar)`` for k <= max_lag."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    max_lag = min(max_lag, n - 1)
    yc = y - y.mean()
    size = scipy.fft.next_fast_len(2 * n)
    spec = scipy.fft.rfft(yc, size)
    acov = scipy.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return acov / n


def adaptive_cutoff(gammas: np.ndarray, n: int, consecutive: int = CONSECUTIVE, k_max: int = K_MAX) -> tuple[int, bool]:
    """Last lag kept before the series settles.

    The series settles at the first lag ``k*`` such that ``|gamma_k| < 2 gamma_0 / sqrt(n)``
    for ``consecutive`` lags in a row; the cutoff is ``k* - 1``.  Returns
    ``(cutoff, settled)``; an unsettled series is truncated at ``k_max``.
    """
    g0 = gammas[0]
    if g0 <= 0:
        return 0, True
    tol = 2.0 / np.sqrt(n) * g0
    small = np.abs(gammas[1:]) < tol
    run = 0
    for k in range(1, min(len(gammas) - 1, k_max + consecutive - 1) + 1):
        run = run + 1 if small[k - 1] else 0
        if run == consecutive:
            return min(k - consecutive, k_max), True
    return min(k_max, len(gammas) - 1), False


@dataclass(frozen=True)
class LongRunVariance:
    sigma2: float
    gamma0: float
    cutoff: int
    settled: bool
    n: int

    @property
    def stderr_of_mean(self) -> float:
        return float(np.sqrt(max(self.sigma2, 0.0) / self.n))


def long_run_variance(y, consecutive: int = CONSECUTIVE, k_max: int = K_MAX, cutoff: int | None = None) -> LongRunVariance:
    """``gamma_0 + 2 sum_{k=1}^{K} gamma_k`` with the adaptive (or a fixed) cutoff K."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0 or np.ptp(y) == 0.0:
        return LongRunVariance(0.0, 0.0, 0, True, n)
    gam = autocovariance(y, k_max + consecutive)
    if cutoff is None:
        cutoff, settled = adaptive_cutoff(gam, n, consecutive, k_max)
        if not settled:
            warnings.warn(f"autocovariances did not settle below tolerance by lag {k_max}", SeriesNotDecayingWarning, stacklevel=2)
    else:
        settled = True
    if gam[0] <= 0:
        return LongRunVariance(0.0, 0.0, 0, True, n)
    s2 = gam[0] + 2.0 * gam[1 : cutoff + 1].sum()
    return LongRunVariance(float(s2), float(gam[0]), int(cutoff), settled, n)
