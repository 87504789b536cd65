"""Weighted Lipschitz norms estimated on point samples.

All values are lower bounds on the true suprema (maxima over finite samples);
callers compare them under a common lattice-plus-seed protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NonFinite
from .handles import FunctionHandle
from .rng import stream
from .system import Box, distance, probe_points

DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.4
DEFAULT_R = 1.5
MIN_SEPARATION = 1e-6


@dataclass(frozen=True)
class NormParams:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    base_point: np.ndarray = None
    metric: str = "euclidean"

    def __post_init__(self):
        if not (0.0 < self.alpha < self.beta < 0.5):
            raise ConfigError(f"need 0 < alpha < beta < 1/2, got alpha={self.alpha}, beta={self.beta}")
        x0 = np.zeros(1) if self.base_point is None else np.atleast_1d(np.asarray(self.base_point, dtype=float))
        object.__setattr__(self, "base_point", x0)


def _values(f: FunctionHandle, pts: np.ndarray) -> np.ndarray:
    v = np.asarray(f(pts), dtype=float)
    if np.any(~np.isfinite(v)):
        raise NonFinite("function is not finite on the sample")
    return v


def _n_weighted(f, points, beta, x0, metric) -> float:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("empty sample")
    w = 1.0 + distance(points, x0, metric) ** beta
    return float(np.max(np.abs(_values(f, points)) / w))


def _m_weighted(f, pairs, alpha, beta, x0, metric) -> float:
    pairs = np.asarray(pairs, dtype=float)
    x, y = pairs[:, 0, :], pairs[:, 1, :]
    sep = distance(x, y, metric)
    if np.any(sep < MIN_SEPARATION):
        raise ValueError("pairs must be separated by at least 1e-6")
    diff = np.abs(_values(f, x) - _values(f, y))
    base = sep**alpha
    # the supremum runs over ordered pairs, so weight by either endpoint
    q1 = diff / (base * (1.0 + distance(x, x0, metric) ** beta))
    q2 = diff / (base * (1.0 + distance(y, x0, metric) ** beta))
    return float(max(q1.max(), q2.max()))


def n_beta(f: FunctionHandle, params: NormParams, points) -> float:
    """``max |f(x)| / (1 + d(x, x0)^beta)`` over the sample."""
    return _n_weighted(f, points, params.beta, params.base_point, params.metric)


def m_alpha_beta(f: FunctionHandle, params: NormParams, pairs) -> float:
    """``max |f(x) - f(y)| / (d(x, y)^alpha (1 + d(x, x0)^beta))`` over ordered sample pairs."""
    return _m_weighted(f, pairs, params.alpha, params.beta, params.base_point, params.metric)


def weighted_norm(f: FunctionHandle, params: NormParams, points, pairs) -> float:
    return n_beta(f, params, points) + m_alpha_beta(f, params, pairs)


def lipschitz_norm(f: FunctionHandle, points, pairs, metric: str = "euclidean") -> float:
    """Sampled bounded-Lipschitz norm: ``max |f|`` plus the largest difference quotient.

    The weight ``1 + d^0`` is read as 1 here, so that the norm of the constant 1 is 1.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sup = float(np.max(np.abs(_values(f, points))))
    pairs = np.asarray(pairs, dtype=float)
    x, y = pairs[:, 0, :], pairs[:, 1, :]
    sep = distance(x, y, metric)
    if np.any(sep < MIN_SEPARATION):
        raise ValueError("pairs must be separated by at least 1e-6")
    lip = float(np.max(np.abs(_values(f, x) - _values(f, y)) / sep))
    return sup + lip


def sample_pairs(box: Box, samples: int, seed: int, per_axis: int | None = None, metric: str = "euclidean") -> np.ndarray:
    """Lattice pairs plus seeded random pairs, shape (P, 2, d), all separated by >= 1e-6."""
    lat = probe_points(box, 0, seed, per_axis)
    i, j = np.triu_indices(lat.shape[0], k=1)
    a = np.concatenate([lat[i], box.uniform(stream(seed, "norm-pairs"), samples)])
    b = np.concatenate([lat[j], box.uniform(stream(seed, "norm-pairs-partner"), samples)])
    keep = distance(a, b, metric) >= MIN_SEPARATION
    return np.stack([a[keep], b[keep]], axis=1)


def refined_pairs(box: Box, points_per_axis: int) -> np.ndarray:
    """Adjacent and non-adjacent pairs of a 1-d lattice of the given resolution."""
    lat = box.lattice(points_per_axis)
    i, j = np.triu_indices(lat.shape[0], k=1)
    return np.stack([lat[i], lat[j]], axis=1)


@dataclass
class EmbeddingFit:
    constant: float
    ratios: np.ndarray
    s: float


def fit_embedding_constant(
    handles: Sequence[FunctionHandle],
    support: np.ndarray,
    params: NormParams,
    points,
    pairs,
    r: float = DEFAULT_R,
) -> EmbeddingFit:
    """Single constant C with ``||f||_{L^s(nu)} <= C ||f||_{alpha,beta}`` across the handles, s = r/(r-1)."""
    s = r / (r - 1.0)
    ratios = []
    for f in handles:
        ls = float(np.mean(np.abs(_values(f, support)) ** s) ** (1.0 / s))
        wn = weighted_norm(f, params, points, pairs)
        ratios.append(ls / wn if wn > 0 else 0.0)
    ratios = np.asarray(ratios)
    return EmbeddingFit(float(ratios.max()), ratios, s)
