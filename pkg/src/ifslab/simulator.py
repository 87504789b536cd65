"""Chain sampling, the Markov operator, and geometric-decay diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import _kernel
from .errors import BudgetExceeded, FitDegenerate, NonFinite
from .handles import FunctionHandle
from .rng import stream
from .system import IfsSystem, apply_map, evaluate_probabilities
from .timeseries import long_run_variance

DEFAULT_BURN_IN = 1000
TREE_BUDGET = 10**7
PRUNE = 1e-15


def select_index(p: np.ndarray, u: float) -> int:
    """``min{j : u <= cumsum_j}``; falls back to the last positive weight on round-off."""
    cums = np.cumsum(p)
    i = int(np.searchsorted(cums, u, side="left"))
    if i >= len(p):
        i = int(np.flatnonzero(p > 0)[-1])
    return i


def step(system: IfsSystem, x, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """One transition; consumes exactly one uniform variate from ``rng``."""
    p = evaluate_probabilities(system, x)
    i = select_index(p, rng.random())
    return i, apply_map(system, i, x)


def trajectory_rng(seed: int) -> np.random.Generator:
    return stream(seed, "trajectory")


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (n, d)
    indices: np.ndarray  # (n - 1,)
    seed: int | None
    burn_in: int
    start: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def values(self, f: Callable) -> np.ndarray:
        return np.asarray(f(self.states), dtype=float)


def _kernel_args(system: IfsSystem):
    ka = system.kernel_arrays
    return (ka.matrices, ka.offsets, ka.kinds, ka.coef, ka.const, ka.lo, ka.hi, ka.renormalize, ka.constant_cumsum)


def run_chain(system: IfsSystem, start, n: int, burn_in: int, uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drive the chain with pre-drawn uniforms; returns ``(states, indices)``."""
    if n < 1 or burn_in < 0:
        raise ValueError("need n >= 1 and burn_in >= 0")
    start = np.ascontiguousarray(np.atleast_1d(np.asarray(start, dtype=float)))
    uniforms = np.ascontiguousarray(uniforms, dtype=float)
    if uniforms.shape[0] < burn_in + n - 1:
        raise ValueError("not enough uniforms for the requested path")
    # validates the field once (normalization, finiteness) before the compiled loop
    system.probabilities(start[None, :])
    states = np.empty((n, system.dimension))
    indices = np.empty(n - 1, dtype=np.int64)
    _kernel.run_chain(start, uniforms, burn_in, *_kernel_args(system), states, indices)
    if not np.all(np.isfinite(states)):
        raise NonFinite("trajectory left the finite reals")
    return states, indices


def simulate(system: IfsSystem, start=None, n: int = 1, burn_in: int = 0, seed: int = 0, uniforms=None) -> Trajectory:
    """Sample a path of ``n`` recorded states after ``burn_in`` discarded steps.

    ``uniforms`` forces the draws (one per step, burn-in included); otherwise
    they come from the stream derived from ``seed``.
    """
    start = system.base_point if start is None else np.atleast_1d(np.asarray(start, dtype=float))
    if uniforms is None:
        uniforms = trajectory_rng(seed).random(burn_in + n - 1)
    states, idx = run_chain(system, start, n, burn_in, uniforms)
    return Trajectory(states, idx, seed, burn_in, start)


def follow_indices(system: IfsSystem, start, indices) -> Trajectory:
    """Deterministic path along a prescribed word of map indices."""
    x = np.atleast_1d(np.asarray(start, dtype=float))
    states = [x]
    for i in indices:
        x = apply_map(system, int(i), x)
        states.append(x)
    return Trajectory(np.array(states), np.asarray(indices, dtype=np.int64), None, 0, states[0])


def replicate_paths(system: IfsSystem, n: int, reps: int, seed: int, burn_in: int = DEFAULT_BURN_IN, start=None, label="rep") -> Iterator[np.ndarray]:
    """Yield the state array of each replication; replication r uses stream (seed, label, r)."""
    start = system.base_point if start is None else start
    for r in range(reps):
        u = stream(seed, label, r).random(burn_in + n - 1)
        states, _ = run_chain(system, start, n, burn_in, u)
        yield states


# --- the Markov operator ---------------------------------------------------------


def apply_operator(system: IfsSystem, f: FunctionHandle, x) -> float:
    """``Pf(x) = sum_i p_i(x) f(T_i x)``, evaluated exactly."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = evaluate_probabilities(system, x)
    imgs = system.images(x[None, :])[:, 0, :]
    vals = np.asarray(f(imgs), dtype=float)
    out = float(np.dot(p, vals))
    if not math.isfinite(out):
        raise NonFinite("Pf is not finite")
    return out


def apply_operator_batch(system: IfsSystem, f: FunctionHandle, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = system.probabilities(points)
    imgs = system.images(points)  # (k, m, d)
    vals = np.stack([np.asarray(f(imgs[i]), dtype=float) for i in range(system.k)], axis=1)
    return np.sum(p * vals, axis=1)


@dataclass(frozen=True)
class TreeResult:
    value: float
    kept_mass: float
    pruned_mass: float
    leaves: int


def operator_tree(system: IfsSystem, f: FunctionHandle, x, n: int, prune: float = PRUNE, budget: int = TREE_BUDGET) -> TreeResult:
    """Enumerate every length-``n`` word with its path probability."""
    if system.k**n > budget:
        raise BudgetExceeded(f"k^n = {system.k}^{n} exceeds the budget {budget}")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.ones(1)
    pruned = 0.0
    d = system.dimension
    for _ in range(n):
        p = system.probabilities(pts)  # (m, k)
        imgs = system.images(pts).transpose(1, 0, 2).reshape(-1, d)
        w = (w[:, None] * p).ravel()
        keep = w >= prune
        pruned += float(w[~keep].sum())
        pts, w = imgs[keep], w[keep]
    vals = np.asarray(f(pts), dtype=float)
    value = float(np.dot(w, vals))
    if not math.isfinite(value):
        raise NonFinite("P^n f is not finite")
    return TreeResult(value, float(w.sum()), pruned, int(w.shape[0]))


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    reps: int


def operator_monte_carlo(system: IfsSystem, f: FunctionHandle, x, n: int, reps: int, seed: int) -> MonteCarloEstimate:
    """Average of ``f(X_n)`` over independent chains from ``x``.

    Replication r consumes row r of one block of uniforms drawn from the
    stream ``(seed, "monte_carlo")``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 0:
        return MonteCarloEstimate(float(f(x)), 0.0, reps)
    system.probabilities(x[None, :])
    u = stream(seed, "monte_carlo").random((reps, n))
    starts = np.ascontiguousarray(np.broadcast_to(x, (reps, system.dimension)))
    out = np.empty((reps, system.dimension))
    _kernel.advance_many(starts, u, *_kernel_args(system), out)
    vals = np.asarray(f(out), dtype=float)
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
    return MonteCarloEstimate(float(vals.mean()), se, reps)


def iterate_operator(system: IfsSystem, f: FunctionHandle, x, n: int, mode: str = "exact_tree", reps: int = 10**5, seed: int = 0) -> float:
    """``P^n f(x)`` by exhaustive word enumeration or by simulation."""
    if n == 0:
        return float(f(np.atleast_1d(np.asarray(x, dtype=float))))
    if mode == "exact_tree":
        return operator_tree(system, f, x, n).value
    if mode == "monte_carlo":
        return operator_monte_carlo(system, f, x, n, reps, seed).value
    raise ValueError(f"unknown mode {mode!r}")


# --- invariant measure -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InvariantMeasureEstimate:
    """Uniform-weight empirical measure of one post-burn-in path."""

    support: np.ndarray
    first_moment: float
    base_point: np.ndarray
    burn_in: int
    seed: int
    bias_bound: float = math.nan
    _sorted: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def expect(self, f: Callable) -> float:
        return float(np.mean(np.asarray(f(self.support), dtype=float)))

    def stderr(self, f: Callable) -> float:
        """Standard error of ``expect(f)`` from the truncated long-run variance."""
        lrv = long_run_variance(np.asarray(f(self.support), dtype=float))
        return lrv.stderr_of_mean

    def marginal(self, coord: int = 0) -> np.ndarray:
        if coord not in self._sorted:
            self._sorted[coord] = np.sort(self.support[:, coord])
        return self._sorted[coord]

    def cdf(self, t) -> np.ndarray:
        """Empirical CDF at nodes of shape (m, d)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if self.support.shape[1] == 1:
            return np.searchsorted(self.marginal(0), t[:, 0], side="right") / self.n
        return np.array([np.mean(np.all(self.support <= node, axis=1)) for node in t])

    def kolmogorov_distance(self, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
        """Sup distance to a continuous one-dimensional CDF."""
        xs = self.marginal(0)
        F = cdf(xs[:, None])
        i = np.arange(1, self.n + 1)
        return float(max(np.max(i / self.n - F), np.max(F - (i - 1) / self.n)))


def estimate_invariant(system: IfsSystem, n: int, burn_in: int = DEFAULT_BURN_IN, seed: int = 0, start=None) -> InvariantMeasureEstimate:
    if n < 1:
        raise ValueError("n must be >= 1")
    traj = simulate(system, start, n, burn_in, seed)
    fm = float(np.mean(system.dist(traj.states, system.base_point)))
    if not math.isfinite(fm):
        raise NonFinite("first moment is not finite")
    return InvariantMeasureEstimate(traj.states, fm, system.base_point, burn_in, seed, _start_bias_bound(system, traj.start, burn_in))


def _start_bias_bound(system: IfsSystem, start, burn_in: int) -> float:
    """Heuristic ``rho^burn_in * diam``; rho from a small lattice contraction estimate."""
    from .verifier import estimate_contraction_ratio

    rho = estimate_contraction_ratio(system, samples=64, seed=0).rho_hat
    box = system.domain_box
    diam = float(system.dist(box.lo, box.hi)) + float(np.min(system.dist(box.corners(), start)))
    if rho >= 1:
        return math.inf
    return float(diam * rho**burn_in)


# --- geometric decay -----------------------------------------------------------------


@dataclass
class DecayReport:
    deviations: np.ndarray
    theta_hat: float
    c_hat: float
    fit_range: tuple
    target: float
    target_stderr: float
    noise_floor: float
    method: str
    passed: bool
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "deviations": [float(v) for v in self.deviations],
            "theta_hat": self.theta_hat,
            "c_hat": self.c_hat,
            "fit_range": list(self.fit_range),
            "nu_f": self.target,
            "nu_f_stderr": self.target_stderr,
            "noise_floor": self.noise_floor,
            "method": self.method,
            "passed": self.passed,
            "flags": list(self.flags),
        }


def decay_report(
    system: IfsSystem,
    f: FunctionHandle,
    nu_hat: InvariantMeasureEstimate,
    n_max: int,
    test_points,
    floor_factor: float = 10.0,
    mc_reps: int = 10**5,
    seed: int = 0,
) -> DecayReport:
    """Sup over test points of ``|P^n f - nu(f)|`` for n = 0..n_max and a log-linear fit."""
    if n_max < 3:
        raise ValueError("n_max must be >= 3")
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    target = nu_hat.expect(f)
    se = nu_hat.stderr(f)
    floor = floor_factor * se
    dev = np.empty(n_max + 1)
    methods = set()
    for n in range(n_max + 1):
        if system.k**n <= TREE_BUDGET:
            vals = [iterate_operator(system, f, x, n) for x in test_points]
            methods.add("exact_tree")
        else:
            vals = [operator_monte_carlo(system, f, x, n, mc_reps, seed).value for x in test_points]
            methods.add("monte_carlo")
        dev[n] = float(np.max(np.abs(np.asarray(vals) - target)))
    method = "+".join(sorted(methods))

    if np.all(dev[1:] <= floor):
        flags = ["constant function, no decay information"] if f.is_constant or np.all(dev == 0) else ["no deviation above the noise floor"]
        return DecayReport(dev, math.nan, math.nan, (), target, se, floor, method, False, flags)

    usable = [n for n in range(1, n_max + 1) if dev[n] > floor and dev[n] > 0]
    run = [usable[0]]
    for n in usable[1:]:
        if n != run[-1] + 1:
            break
        run.append(n)
    if len(run) < 3:
        raise FitDegenerate(f"only {len(run)} usable points above the noise floor {floor:.3g}")
    ns = np.array(run, dtype=float)
    slope, intercept = np.polyfit(ns, np.log(dev[run]), 1)
    theta, c = float(math.exp(slope)), float(math.exp(intercept))
    monotone = bool(np.all(np.diff(dev[run]) < 0))
    flags = [] if monotone else ["deviations not monotone over the fit range"]
    passed = 0.0 < theta < 1.0 and monotone
    return DecayReport(dev, theta, c, (run[0], run[-1]), target, se, floor, method, passed, flags)
