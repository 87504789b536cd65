"""Lipschitz brackets for lower-orthant indicators.

Thresholds sit at marginal quantiles with mass spacing ``eps^r / (2d)``.  The
bracket for thresholds in a window ``[t_lo, t_hi]`` is

    lower = prod_c r_{t_lo_c - eta, eta},     upper = prod_c r_{t_hi_c, eta},

where ``r_{t, eta}(x) = clip((t - x)/eta + 1, 0, 1)``.  The ramp width eta is
the largest value whose 2 eta smoothing window carries at most ``eps^r / (2d)``
mass per coordinate, bounded through the CDF modulus of continuity.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetInfeasible, FitDegenerate
from .handles import Const, FunctionHandle, Product, Ramp
from .rng import stream
from .system import Box

DEFAULT_LADDER = (0.2, 0.1, 0.05, 0.025)
DEFAULT_GAMMA = 2.0
DEFAULT_C_INTEGRAL = 1.0


# --- CDF sources ---------------------------------------------------------------------


class CdfSource:
    """Distribution function with marginal quantiles and a support box."""

    dim: int
    box: Box

    def cdf(self, t) -> np.ndarray:
        raise NotImplementedError

    def marginal_cdf(self, c: int, t) -> np.ndarray:
        raise NotImplementedError

    def marginal_quantile(self, c: int, levels) -> np.ndarray:
        raise NotImplementedError

    def marginal_modulus(self, c: int, delta: float) -> float:
        """``sup_t F_c(t + delta) - F_c(t)`` for the c-th marginal."""
        lo, hi = self.box.lo[c], self.box.hi[c]
        t = np.linspace(lo - delta, hi, 4001)
        t = np.union1d(t, self._marginal_atoms(c) - delta)
        return float(np.max(self.marginal_cdf(c, t + delta) - self.marginal_cdf(c, t)))

    def _marginal_atoms(self, c: int) -> np.ndarray:
        return np.zeros(0)


@dataclass(frozen=True, eq=False)
class UniformCdf(CdfSource):
    """Product uniform distribution on a box."""

    box: Box

    @property
    def dim(self) -> int:
        return self.box.dim

    def marginal_cdf(self, c, t):
        lo, hi = self.box.lo[c], self.box.hi[c]
        return np.clip((np.asarray(t, dtype=float) - lo) / (hi - lo), 0.0, 1.0)

    def cdf(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return np.prod([self.marginal_cdf(c, t[:, c]) for c in range(self.dim)], axis=0)

    def marginal_quantile(self, c, levels):
        lo, hi = self.box.lo[c], self.box.hi[c]
        return lo + (hi - lo) * np.clip(np.asarray(levels, dtype=float), 0.0, 1.0)

    def marginal_modulus(self, c, delta):
        return float(min(1.0, delta / (self.box.hi[c] - self.box.lo[c])))


@dataclass(frozen=True, eq=False)
class PointMassCdf(CdfSource):
    location: np.ndarray
    box: Box

    def __post_init__(self):
        object.__setattr__(self, "location", np.atleast_1d(np.asarray(self.location, dtype=float)))

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    def marginal_cdf(self, c, t):
        return (np.asarray(t, dtype=float) >= self.location[c]).astype(float)

    def cdf(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return np.all(t >= self.location, axis=1).astype(float)

    def marginal_quantile(self, c, levels):
        return np.full(np.shape(levels), self.location[c])

    def _marginal_atoms(self, c):
        return self.location[c : c + 1]


@dataclass(frozen=True, eq=False)
class EmpiricalCdf(CdfSource):
    """Empirical distribution of a sample (typically an invariant-measure estimate)."""

    sample: np.ndarray
    box: Box = None
    _sorted: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        s = np.asarray(self.sample, dtype=float)
        s = s[:, None] if s.ndim == 1 else s
        object.__setattr__(self, "sample", s)
        if self.box is None:
            object.__setattr__(self, "box", Box(s.min(axis=0), s.max(axis=0)))

    @property
    def dim(self) -> int:
        return self.sample.shape[1]

    @property
    def n(self) -> int:
        return self.sample.shape[0]

    def sorted_marginal(self, c: int) -> np.ndarray:
        if c not in self._sorted:
            self._sorted[c] = np.sort(self.sample[:, c])
        return self._sorted[c]

    def marginal_cdf(self, c, t):
        return np.searchsorted(self.sorted_marginal(c), np.asarray(t, dtype=float), side="right") / self.n

    def cdf(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if self.dim == 1:
            return self.marginal_cdf(0, t[:, 0])
        return np.array([np.mean(np.all(self.sample <= node, axis=1)) for node in t])

    def marginal_quantile(self, c, levels):
        return np.quantile(self.sorted_marginal(c), np.clip(np.asarray(levels, dtype=float), 0.0, 1.0))

    def marginal_modulus(self, c, delta):
        # exact: the supremum is attained with t just below a sample point
        xs = self.sorted_marginal(c)
        counts = np.searchsorted(xs, xs + delta, side="right") - np.arange(xs.size)
        return float(counts.max() / self.n)


def analytic_source(cdf: Callable, box: Box) -> CdfSource:
    """Wrap a product-form analytic CDF given through its joint function."""

    class _Analytic(CdfSource):
        def __init__(self):
            self.box = box
            self.dim = box.dim

        def cdf(self, t):
            return np.asarray(cdf(np.atleast_2d(t)), dtype=float)

        def marginal_cdf(self, c, t):
            t = np.asarray(t, dtype=float)
            pts = np.tile(self.box.hi, (t.size, 1)).astype(float)
            pts[:, c] = t
            return self.cdf(pts)

        def marginal_quantile(self, c, levels):
            grid = np.linspace(self.box.lo[c], self.box.hi[c], 20001)
            F = np.maximum.accumulate(self.marginal_cdf(c, grid))
            return np.interp(levels, F, grid)

    return _Analytic()


# --- modulus of continuity ---------------------------------------------------------------


@dataclass
class ModulusReport:
    deltas: np.ndarray
    w_values: np.ndarray
    gammas: tuple
    fitted_min_C: dict
    bound_holds: dict

    def to_dict(self) -> dict:
        return {
            "deltas": [float(v) for v in self.deltas],
            "w_values": [float(v) for v in self.w_values],
            "fitted_min_C": {str(g): c for g, c in self.fitted_min_C.items()},
            "bound_holds": {str(g): b for g, b in self.bound_holds.items()},
            "method": "max over a threshold lattice (exact sliding window for 1-d empirical CDFs)",
        }


def _joint_modulus(src: CdfSource, delta: float, per_axis: int) -> float:
    if src.dim == 1:
        return src.marginal_modulus(0, delta)
    # the lattice includes hi - delta, where shifts of absolutely continuous CDFs peak
    axes = [np.union1d(np.linspace(lo - delta, hi, per_axis), [hi - delta]) for lo, hi in zip(src.box.lo, src.box.hi)]
    t = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return float(np.max(src.cdf(t + delta) - src.cdf(t)))


def modulus_of_continuity(src: CdfSource, delta_grid: Sequence[float], gammas: Sequence[float] = (DEFAULT_GAMMA,), per_axis: int = 101) -> ModulusReport:
    """``w_F(delta) = sup_t F(t + delta 1) - F(t)`` and the minimal log-power constants.

    ``fitted_min_C[gamma] = max_delta w_F(delta) |log delta|^gamma``.  The bound is
    reported as holding when that supremand is not still growing at the
    smallest delta of the grid, i.e. when it does not point to a blow-up as
    delta -> 0.
    """
    deltas = np.sort(np.asarray(delta_grid, dtype=float))
    if np.any(deltas <= 0) or np.any(deltas >= 0.5):
        raise ValueError("deltas must lie in (0, 1/2)")
    w = np.array([_joint_modulus(src, d, per_axis) for d in deltas])
    w = np.clip(w, 0.0, 1.0)
    fitted, holds = {}, {}
    for g in gammas:
        sup = w * np.abs(np.log(deltas)) ** g
        fitted[float(g)] = float(sup.max())
        holds[float(g)] = bool(np.isfinite(sup.max()) and (deltas.size < 2 or sup[0] <= sup[1]))
    return ModulusReport(deltas, w, tuple(float(g) for g in gammas), fitted, holds)


# --- brackets ------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Bracket:
    lower: FunctionHandle
    upper: FunctionHandle
    eps: float
    lip_norm_bound: float
    threshold_window: tuple  # ((t_lo per coord), (t_hi per coord)); +-inf at the ends


@dataclass(frozen=True)
class _Window:
    t_lo: float
    t_hi: float


def budget_from_modulus(modulus_C: float, gamma: float, r: float, d: int) -> tuple[float, float]:
    """Norm-budget parameters ``(gamma_A, C_A)`` implied by ``w_F(delta) <= C |log delta|^-gamma``.

    The ramp width satisfying the mass constraint is at least
    ``exp(-(2 d C / eps^r)^(1/gamma)) / 2``, so ``1 + d/eta <= exp(C_A eps^(-r/gamma))`` with
    ``C_A = (2 d C)^(1/gamma) + log(2d + 1)``.
    """
    return gamma / r, (2.0 * d * modulus_C) ** (1.0 / gamma) + math.log(2.0 * d + 1.0)


@dataclass
class BracketingCover:
    eps: float
    r: float
    eta: float
    A_budget: float
    thresholds: tuple  # per coordinate
    dim: int
    binding: str = ""
    validity_sample_size: int = 0

    @property
    def windows(self) -> list:
        out = []
        for t in self.thresholds:
            w = [_Window(-math.inf, t[0])]
            w += [_Window(a, b) for a, b in zip(t[:-1], t[1:])]
            w.append(_Window(t[-1], math.inf))
            out.append(w)
        return out

    @property
    def count(self) -> int:
        if self.eps >= 1:
            return 1
        return int(np.prod([len(t) + 1 for t in self.thresholds]))

    @property
    def lip_norm_bound(self) -> float:
        return 1.0 + self.dim / self.eta if self.eps < 1 else 1.0

    def _coord_handles(self, c: int, w: _Window) -> tuple[FunctionHandle, FunctionHandle]:
        lower = Const(0.0) if w.t_lo == -math.inf else Ramp(w.t_lo - self.eta, self.eta, c)
        upper = Const(1.0) if w.t_hi == math.inf else Ramp(w.t_hi, self.eta, c)
        return lower, upper

    def bracket(self, index: Sequence[int]) -> Bracket:
        if self.eps >= 1:
            inf = (math.inf,) * self.dim
            return Bracket(Const(0.0), Const(1.0), self.eps, 1.0, (tuple(-v for v in inf), inf))
        wins = self.windows
        lows, ups, tlo, thi = [], [], [], []
        for c, i in enumerate(index):
            w = wins[c][i]
            lo, up = self._coord_handles(c, w)
            lows.append(lo)
            ups.append(up)
            tlo.append(w.t_lo)
            thi.append(w.t_hi)
        lower = lows[0] if self.dim == 1 else Product(tuple(lows))
        upper = ups[0] if self.dim == 1 else Product(tuple(ups))
        return Bracket(lower, upper, self.eps, self.lip_norm_bound, (tuple(tlo), tuple(thi)))

    def __iter__(self):
        if self.eps >= 1:
            yield self.bracket(())
            return
        for idx in itertools.product(*(range(len(t) + 1) for t in self.thresholds)):
            yield self.bracket(idx)

    def window_covering(self, t) -> tuple:
        """Index of a bracket whose window contains the threshold vector ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return tuple(int(np.searchsorted(self.thresholds[c], t[c], side="left")) for c in range(self.dim))

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "r": self.r,
            "eta": self.eta,
            "A_budget": self.A_budget,
            "count": self.count,
            "lip_norm_bound": self.lip_norm_bound,
            "binding_constraint": self.binding,
            "thresholds_per_coordinate": [int(len(t)) for t in self.thresholds],
            "validity_sample_size": self.validity_sample_size,
        }


def _largest_eta(src: CdfSource, c: int, target: float, width: float) -> float:
    """Largest eta with ``w_c(2 eta) <= target`` (bisection on log eta)."""
    if src.marginal_modulus(c, 2.0 * width) <= target:
        return width
    lo, hi = width * 1e-12, width
    if src.marginal_modulus(c, 2.0 * lo) > target:
        return 0.0
    for _ in range(40):
        mid = math.sqrt(lo * hi)
        if src.marginal_modulus(c, 2.0 * mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0 + 1e-4:
            break
    return lo


def build_rectangle_cover(src: CdfSource, eps: float, r: float, gamma: float, C: float, d: int | None = None) -> BracketingCover:
    """Quantile-threshold ramp brackets of L^r gap ``eps`` under norm budget ``exp(C eps^(-1/gamma))``."""
    d = src.dim if d is None else d
    if d != src.dim:
        raise ValueError("dimension does not match the CDF source")
    if not (1.0 < r < 2.0):
        raise ValueError("r must lie in (1, 2)")
    if d not in (1, 2):
        raise ValueError("rectangle covers are built for d in {1, 2}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    with np.errstate(over="ignore"):
        A = math.exp(C * eps ** (-1.0 / gamma)) if C * eps ** (-1.0 / gamma) < 700 else math.inf
    if eps >= 1:
        return BracketingCover(eps, r, math.inf, A, (), d, "trivial bracket [0, 1]")
    h = eps**r / (2 * d)
    widths = src.box.hi - src.box.lo
    etas = [_largest_eta(src, c, h, float(max(widths[c], 1e-12))) for c in range(d)]
    eta = min(etas)
    eta_min = d / (A - 1.0) if A > 1 else math.inf
    if eta <= 0 or eta < eta_min:
        binding = "mass" if eta <= 0 else "norm budget"
        raise BudgetInfeasible(
            f"no ramp width satisfies both constraints at eps={eps}: mass allows eta <= {eta:.3g}, budget requires eta >= {eta_min:.3g} (binding: {binding})"
        )
    levels = np.append(np.arange(0.0, 1.0, h), 1.0)
    thresholds = tuple(np.unique(src.marginal_quantile(c, levels)) for c in range(d))
    return BracketingCover(eps, r, eta, A, thresholds, d, "mass")


def bracketing_number(src: CdfSource, eps: float, r: float, gamma: float, C: float, d: int | None = None) -> int:
    """Size of the constructed cover: an upper bound on the minimal bracketing number."""
    return build_rectangle_cover(src, eps, r, gamma, C, d).count


# --- cover validation --------------------------------------------------------------------


@dataclass
class CoverValidity:
    sandwich_violations: int
    order_violations: int
    lr_max: float
    lr_violations: int
    brackets_checked: int
    probes: int
    measure_size: int

    @property
    def passed(self) -> bool:
        return self.sandwich_violations == 0 and self.order_violations == 0 and self.lr_violations == 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"passed": self.passed}


def probe_sample(cover: BracketingCover, box: Box, n: int, seed: int) -> np.ndarray:
    """Uniform points on a padded box plus every threshold and its ramp endpoints."""
    pad = 0.1 * (box.hi - box.lo) + (cover.eta if math.isfinite(cover.eta) else 0.0)
    big = Box(box.lo - pad, box.hi + pad)
    pts = big.uniform(stream(seed, "bracket-probes"), n)
    if cover.eps < 1 and cover.dim == 1:
        t = cover.thresholds[0]
        extra = np.concatenate([t, t - cover.eta, t + cover.eta, np.nextafter(t, np.inf), np.nextafter(t, -np.inf)])
        pts = np.concatenate([pts, extra[:, None]])
    return pts


def _coord_tables(cover: BracketingCover, c: int, x: np.ndarray):
    """Per-window lower/upper envelope values and indicator values at the window ends."""
    wins = cover.windows[c]
    L = np.empty((len(wins), x.size))
    U = np.empty_like(L)
    ind_lo = np.empty_like(L)
    ind_hi = np.empty_like(L)
    for i, w in enumerate(wins):
        lo, up = cover._coord_handles(c, w)
        pts = x[:, None]
        L[i] = np.zeros(x.size) if isinstance(lo, Const) else lo._eval(_embed(pts, c, cover.dim))
        U[i] = np.ones(x.size) if isinstance(up, Const) else up._eval(_embed(pts, c, cover.dim))
        ind_lo[i] = (x <= w.t_lo).astype(float)
        ind_hi[i] = (x <= w.t_hi).astype(float)
    return L, U, ind_lo, ind_hi


def _embed(col: np.ndarray, c: int, d: int) -> np.ndarray:
    out = np.zeros((col.shape[0], d))
    out[:, c] = col[:, 0]
    return out


def validate_cover(cover: BracketingCover, probes: np.ndarray, measure: np.ndarray) -> CoverValidity:
    """Sandwich, ordering and L^r-gap checks for every bracket of the cover.

    For thresholds in a window, ``1{x <= t_lo} <= 1{x <= t} <= 1{x <= t_hi}``,
    so the sandwich reduces to the two window ends.
    """
    probes = np.atleast_2d(probes)
    measure = np.atleast_2d(measure)
    if cover.eps >= 1:
        return CoverValidity(0, 0, 1.0 if measure.size else 0.0, 0, 1, probes.shape[0], measure.shape[0])
    tol = 1e-12
    r = cover.r
    if cover.dim == 1:
        L, U, ilo, ihi = _coord_tables(cover, 0, probes[:, 0])
        sandwich = int(np.sum(np.any((L > ilo + tol) | (U < ihi - tol), axis=1)))
        order = int(np.sum(np.any(L > U + tol, axis=1)))
        lr = _lr_gaps_1d(cover, measure[:, 0])
    else:
        tabs = [_coord_tables(cover, c, probes[:, c]) for c in range(cover.dim)]
        mtabs = [_coord_tables(cover, c, measure[:, c])[:2] for c in range(cover.dim)]
        (L0, U0, lo0, hi0), (L1, U1, lo1, hi1) = tabs
        (mL0, mU0), (mL1, mU1) = mtabs
        sandwich = order = 0
        lr = []
        for a in range(L0.shape[0]):
            low = L0[a] * L1
            up = U0[a] * U1
            sandwich += int(np.sum(np.any((low > lo0[a] * lo1 + tol) | (up < hi0[a] * hi1 - tol), axis=1)))
            order += int(np.sum(np.any(low > up + tol, axis=1)))
            gap = mU0[a] * mU1 - mL0[a] * mL1
            lr.append(np.mean(np.abs(gap) ** r, axis=1) ** (1.0 / r))
        lr = np.concatenate(lr)
    lr = np.asarray(lr)
    return CoverValidity(sandwich, order, float(lr.max()), int(np.sum(lr > cover.eps)), cover.count, probes.shape[0], measure.shape[0])


def _lr_gaps_1d(cover: BracketingCover, x: np.ndarray) -> np.ndarray:
    """``||u - l||_{L^r}`` under the empirical measure of x, using the bracket supports."""
    xs = np.sort(x)
    n = xs.size
    eta = cover.eta
    out = []
    for w in cover.windows[0]:
        lo, up = cover._coord_handles(0, w)
        a = -math.inf if w.t_lo == -math.inf else w.t_lo - eta
        b = math.inf if w.t_hi == math.inf else w.t_hi + eta
        i, j = np.searchsorted(xs, a, side="left"), np.searchsorted(xs, b, side="right")
        seg = xs[i:j, None]
        lv = np.zeros(seg.shape[0]) if isinstance(lo, Const) else lo._eval(seg)
        uv = np.ones(seg.shape[0]) if isinstance(up, Const) else up._eval(seg)
        out.append((np.sum(np.abs(uv - lv) ** cover.r) / n) ** (1.0 / cover.r))
    return np.array(out)


def cover_completeness(cover: BracketingCover, nodes: np.ndarray) -> int:
    """Number of grid nodes not contained in the window of their assigned bracket."""
    nodes = np.atleast_2d(nodes)
    if cover.eps >= 1:
        return 0
    wins = cover.windows
    missing = 0
    for t in nodes:
        idx = cover.window_covering(t)
        if not all(wins[c][i].t_lo <= t[c] <= wins[c][i].t_hi for c, i in enumerate(idx)):
            missing += 1
    return missing


# --- scaling and integrability ---------------------------------------------------------------


@dataclass
class SlopeReport:
    slope: float
    intercept: float
    expected: float
    lower: float
    upper: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_scaling(eps_list: Sequence[float], counts: Sequence[float], d: int, r: float) -> SlopeReport:
    """Least-squares slope of log count against log(1/eps); passes inside [0.8 dr, 1.3 dr]."""
    eps = np.asarray(eps_list, dtype=float)
    cnt = np.asarray(counts, dtype=float)
    if eps.size < 4 or np.unique(eps).size < 2:
        raise FitDegenerate("need at least four distinct ladder points")
    slope, icpt = np.polyfit(np.log(1.0 / eps), np.log(cnt), 1)
    dr = d * r
    lo, hi = 0.8 * dr, 1.3 * dr
    return SlopeReport(float(slope), float(icpt), dr, lo, hi, bool(lo <= slope <= hi))


@dataclass
class IntegralReport:
    exponent: float
    c: float
    gamma: float
    C: float
    integrand: list
    tail_integral: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_bracketing_integral(eps_list: Sequence[float], counts: Sequence[float], c: float, gamma: float, C: float) -> IntegralReport:
    """Integrability of ``delta^c sup_{eps >= delta} N(eps)`` near zero.

    The integrand is sampled on the ladder and fitted by a power law; it is
    integrable at the origin iff the fitted power exceeds -1.
    """
    eps = np.asarray(eps_list, dtype=float)
    cnt = np.asarray(counts, dtype=float)
    order = np.argsort(eps)
    eps, cnt = eps[order], cnt[order]
    if eps.size < 3:
        raise FitDegenerate("need at least three ladder points")
    # sup over eps' >= delta, read off the ladder
    sup_n = np.maximum.accumulate(cnt[::-1])[::-1]
    g = eps**c * sup_n
    if np.any(g <= 0):
        raise FitDegenerate("integrand must be positive on the ladder")
    a, b = np.polyfit(np.log(eps), np.log(g), 1)
    tail = math.exp(b) * eps[-1] ** (a + 1) / (a + 1) if a > -1 else math.inf
    return IntegralReport(float(a), float(c), float(gamma), float(C), [float(v) for v in g], float(tail), bool(a > -1))
