"""Closed family of test functions with analytic bounds.

Every handle knows an upper bound on ``sup |f|`` and on its Lipschitz
constant.  The Lipschitz bounds hold simultaneously for the euclidean, sup and
manhattan metrics (they are taken with respect to the l1 dual norm, which
dominates the other two).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonFinite


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


class FunctionHandle:
    """Base class; subclasses implement ``_eval`` on arrays of shape (n, d)."""

    sup_bound: float = math.inf
    lipschitz: float = math.inf

    def __call__(self, x):
        pts, single = _as_points(x)
        out = self._eval(pts)
        if np.any(np.isnan(out)):
            raise NonFinite(f"{self!r} evaluated to NaN")
        return float(out[0]) if single else out

    def _eval(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def lip_norm(self) -> float:
        """Declared bounded-Lipschitz norm: sup bound plus Lipschitz bound."""
        return self.sup_bound + self.lipschitz

    @property
    def is_constant(self) -> bool:
        return self.lipschitz == 0.0

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Const(float(other))
        return Sum((self, other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Const(float(other))
        return Sum((self, Scaled(-1.0, other)))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Scaled(float(other), self)
        return Product((self, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return Scaled(-1.0, self)


@dataclass(frozen=True, eq=False)
class Const(FunctionHandle):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "sup_bound", abs(float(self.value)))
        object.__setattr__(self, "lipschitz", 0.0)

    def _eval(self, pts):
        return np.full(pts.shape[0], float(self.value))


@dataclass(frozen=True, eq=False)
class Affine(FunctionHandle):
    """``weights . x + bias``; the sup bound is taken over ``box`` when given."""

    weights: np.ndarray
    bias: float = 0.0
    box: object = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lipschitz", float(np.abs(w).sum()))
        if self.box is None:
            sup = 0.0 if not np.any(w) else math.inf
            sup = max(sup, abs(self.bias))
        else:
            vals = self._eval(self.box.corners())
            sup = float(np.max(np.abs(vals)))
        object.__setattr__(self, "sup_bound", sup)

    def _eval(self, pts):
        return np.sum(self.weights * pts, axis=-1) + self.bias


@dataclass(frozen=True, eq=False)
class Ramp(FunctionHandle):
    """``clip((t - x_c)/eta + 1, 0, 1)``: one below ``t``, zero above ``t + eta``."""

    t: float
    eta: float
    coord: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("ramp width must be positive")
        object.__setattr__(self, "sup_bound", 1.0)
        object.__setattr__(self, "lipschitz", 1.0 / self.eta)

    def _eval(self, pts):
        return np.clip((self.t - pts[:, self.coord]) / self.eta + 1.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Logistic(FunctionHandle):
    """Smooth step ``1 / (1 + exp((x_c - center)/scale))``."""

    center: float
    scale: float
    coord: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "sup_bound", 1.0)
        object.__setattr__(self, "lipschitz", 0.25 / self.scale)

    def _eval(self, pts):
        z = (pts[:, self.coord] - self.center) / self.scale
        return 0.5 * (1.0 - np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class BoxIndicator(FunctionHandle):
    """``1{lo <= x <= hi}`` componentwise; discontinuous, so not Lipschitz."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        object.__setattr__(self, "sup_bound", 1.0)
        object.__setattr__(self, "lipschitz", math.inf)

    def _eval(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1).astype(float)


def orthant(t) -> BoxIndicator:
    """Indicator of the lower orthant ``(-inf, t]``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return BoxIndicator(np.full_like(t, -np.inf), t)


@dataclass(frozen=True, eq=False)
class Scaled(FunctionHandle):
    c: float
    f: FunctionHandle

    def __post_init__(self):
        object.__setattr__(self, "sup_bound", abs(self.c) * self.f.sup_bound if self.c else 0.0)
        object.__setattr__(self, "lipschitz", abs(self.c) * self.f.lipschitz if self.c else 0.0)

    def _eval(self, pts):
        return self.c * self.f._eval(pts)


@dataclass(frozen=True, eq=False)
class Sum(FunctionHandle):
    terms: Sequence[FunctionHandle]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "sup_bound", sum(t.sup_bound for t in self.terms))
        object.__setattr__(self, "lipschitz", sum(t.lipschitz for t in self.terms))

    def _eval(self, pts):
        out = self.terms[0]._eval(pts)
        for t in self.terms[1:]:
            out = out + t._eval(pts)
        return out


@dataclass(frozen=True, eq=False)
class Product(FunctionHandle):
    terms: Sequence[FunctionHandle]

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        sups = [t.sup_bound for t in terms]
        object.__setattr__(self, "sup_bound", math.prod(sups))
        lip = 0.0
        for i, t in enumerate(terms):
            if t.lipschitz == 0.0:
                continue
            lip += t.lipschitz * math.prod(s for j, s in enumerate(sups) if j != i)
        object.__setattr__(self, "lipschitz", lip)

    def _eval(self, pts):
        out = self.terms[0]._eval(pts)
        for t in self.terms[1:]:
            out = out * t._eval(pts)
        return out


def identity(box=None) -> Affine:
    """``f(x) = x`` for one-dimensional systems."""
    return Affine([1.0], 0.0, box)


def product_ramp(t, eta: float) -> FunctionHandle:
    """Product over coordinates of ramps at the thresholds ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ramps = [Ramp(float(tc), eta, c) for c, tc in enumerate(t)]
    return ramps[0] if len(ramps) == 1 else Product(tuple(ramps))
