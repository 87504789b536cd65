"""Iterated affine maps with place-dependent selection probabilities.

A system is a finite family of affine maps ``T_i x = A_i x + b_i`` on R^d,
together with a probability field ``p_i(x)`` built from a small closed
expression language.  Every expression carries an analytic Lipschitz
constant, so the regularity conditions downstream never have to be sampled.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DegenerateField,
    FieldNotNormalized,
    IndexOutOfRange,
    NonFinite,
)
from .rng import stream

METRICS = ("euclidean", "sup", "manhattan")
_ORD = {"euclidean": 2, "sup": np.inf, "manhattan": 1}
# norm dual to the metric; Lipschitz constant of x -> a.x is ||a||_dual
_DUAL_ORD = {"euclidean": 2, "sup": 1, "manhattan": np.inf}

SUM_TOL = 1e-12


def _check_metric(metric: str) -> str:
    if metric not in _ORD:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return metric


def distance(x, y, metric: str = "euclidean") -> np.ndarray:
    """Distance between points (broadcast over leading axes)."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    ord_ = _ORD[_check_metric(metric)]
    if ord_ == 2:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if ord_ == 1:
        return np.sum(np.abs(diff), axis=-1)
    return np.max(np.abs(diff), axis=-1)


def dual_norm(a, metric: str) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float), _DUAL_ORD[_check_metric(metric)]))


def operator_norm(matrix, metric: str) -> float:
    """Lipschitz constant of ``x -> matrix @ x`` under ``metric``."""
    m = np.asarray(matrix, dtype=float)
    return float(np.linalg.norm(m, _ORD[_check_metric(metric)]))


def _linear_range(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    """Exact min and max of ``a . x`` over the box ``[lo, hi]``."""
    p, q = a * lo, a * hi
    return float(np.sum(np.minimum(p, q))), float(np.sum(np.maximum(p, q)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; every sup estimate and every probe sample lives here."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def corners(self) -> np.ndarray:
        d = self.dim
        bits = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
        return np.where(bits == 1, self.hi, self.lo)

    def lattice(self, per_axis: int) -> np.ndarray:
        """Regular lattice with ``per_axis`` nodes per coordinate (endpoints included)."""
        axes = [np.linspace(l, h, per_axis) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def probe_points(box: Box, samples: int, seed: int, per_axis: int | None = None, key="points") -> np.ndarray:
    """Deterministic lattice followed by ``samples`` seeded uniform draws.

    Increasing ``samples`` with a fixed seed yields a superset of points.
    """
    if per_axis is None:
        per_axis = 11 if box.dim == 1 else max(2, int(round(121 ** (1.0 / box.dim))))
    lat = box.lattice(per_axis)
    draws = box.uniform(stream(seed, key), samples)
    return np.concatenate([lat, draws], axis=0)


@dataclass(frozen=True, eq=False)
class AffineMap:
    matrix: np.ndarray
    offset: np.ndarray
    metric: str = "euclidean"
    cached_lipschitz: float = field(init=False)

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", b)
        _check_metric(self.metric)
        object.__setattr__(self, "cached_lipschitz", operator_norm(m, self.metric))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        # elementwise products summed in coordinate order; the compiled kernel
        # reproduces the same arithmetic bit for bit
        return np.sum(self.matrix * x[..., None, :], axis=-1) + self.offset

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


# --- probability expressions -------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float
    tag = "constant"

    def raw(self, points: np.ndarray) -> np.ndarray:
        return np.full(points.shape[0], float(self.value))

    def lipschitz(self, metric: str) -> float:
        return 0.0

    def box_range(self, box: Box) -> tuple[float, float]:
        return float(self.value), float(self.value)

    def to_dict(self) -> dict:
        return {"type": self.tag, "value": float(self.value)}


@dataclass(frozen=True, eq=False)
class ClippedAffine:
    """``clip(slope . x + intercept, lo, hi)``."""

    slope: np.ndarray
    intercept: float
    lo: float = 0.0
    hi: float = 1.0
    tag = "clipped_affine"

    def __post_init__(self):
        object.__setattr__(self, "slope", np.atleast_1d(np.asarray(self.slope, dtype=float)))
        if not self.lo <= self.hi:
            raise ConfigError("clip bounds must satisfy lo <= hi")

    def raw(self, points: np.ndarray) -> np.ndarray:
        z = np.sum(self.slope * points, axis=-1) + self.intercept
        return np.clip(z, self.lo, self.hi)

    def lipschitz(self, metric: str) -> float:
        return dual_norm(self.slope, metric)

    def box_range(self, box: Box) -> tuple[float, float]:
        a, b = _linear_range(self.slope, box.lo, box.hi)
        lo = min(max(a + self.intercept, self.lo), self.hi)
        hi = min(max(b + self.intercept, self.lo), self.hi)
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "type": self.tag,
            "slope": self.slope.tolist(),
            "intercept": float(self.intercept),
            "lo": float(self.lo),
            "hi": float(self.hi),
        }


@dataclass(frozen=True, eq=False)
class SoftmaxComponent:
    """One logit ``weights . x + bias``; the field normalizes all logits jointly."""

    weights: np.ndarray
    bias: float = 0.0
    tag = "softmax"

    def __post_init__(self):
        object.__setattr__(self, "weights", np.atleast_1d(np.asarray(self.weights, dtype=float)))

    def logit(self, points: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * points, axis=-1) + self.bias

    def to_dict(self) -> dict:
        return {"type": self.tag, "weights": self.weights.tolist(), "bias": float(self.bias)}


ProbExpr = Union[Constant, ClippedAffine, SoftmaxComponent]


def expr_from_dict(spec: dict) -> ProbExpr:
    try:
        tag = spec["type"]
        if tag == "constant":
            return Constant(float(spec["value"]))
        if tag == "clipped_affine":
            return ClippedAffine(spec["slope"], float(spec["intercept"]), float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)))
        if tag == "softmax":
            return SoftmaxComponent(spec["weights"], float(spec.get("bias", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed probability expression {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown probability expression type {tag!r}")


@dataclass(frozen=True, eq=False)
class ProbabilityField:
    exprs: tuple
    normalization: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "exprs", tuple(self.exprs))
        if self.normalization not in ("exact", "renormalize"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    def __len__(self) -> int:
        return len(self.exprs)

    @property
    def is_softmax(self) -> bool:
        return len(self.exprs) > 0 and all(isinstance(e, SoftmaxComponent) for e in self.exprs)

    @property
    def mixes_softmax(self) -> bool:
        n = sum(isinstance(e, SoftmaxComponent) for e in self.exprs)
        return 0 < n < len(self.exprs)

    @property
    def is_constant(self) -> bool:
        return all(isinstance(e, Constant) for e in self.exprs)

    def raw(self, points: np.ndarray) -> np.ndarray:
        """Unnormalized values, shape (n, k)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.mixes_softmax:
            raise ConfigError("softmax components cannot be mixed with other expressions")
        if self.is_softmax:
            z = np.stack([e.logit(points) for e in self.exprs], axis=-1)
            z = z - z.max(axis=-1, keepdims=True)
            w = np.exp(z)
            return w / w.sum(axis=-1, keepdims=True)
        return np.stack([e.raw(points) for e in self.exprs], axis=-1)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Probability vectors, shape (n, k)."""
        vals = self.raw(points)
        if not np.all(np.isfinite(vals)):
            raise NonFinite("probability expression evaluated to a non-finite value")
        if self.normalization == "renormalize" and not self.is_softmax:
            s = vals.sum(axis=-1, keepdims=True)
            if np.any(s <= 0.0):
                raise DegenerateField("all raw probabilities vanish at some point")
            vals = vals / s
        else:
            err = np.abs(vals.sum(axis=-1) - 1.0)
            if np.any(err > SUM_TOL):
                raise FieldNotNormalized(f"field sums deviate from 1 by up to {err.max():.3g}")
        return vals

    def raw_ranges(self, box: Box) -> np.ndarray:
        """Analytic (lower, upper) bounds on the unnormalized values over the box, shape (k, 2)."""
        if self.is_softmax:
            out = []
            for i, ei in enumerate(self.exprs):
                lo_terms, hi_terms = 0.0, 0.0
                for j, ej in enumerate(self.exprs):
                    if j == i:
                        continue
                    a, b = _linear_range(ej.weights - ei.weights, box.lo, box.hi)
                    hi_terms += math.exp(b + ej.bias - ei.bias)
                    lo_terms += math.exp(a + ej.bias - ei.bias)
                out.append((1.0 / (1.0 + hi_terms), 1.0 / (1.0 + lo_terms)))
            return np.array(out)
        if self.mixes_softmax:
            raise ConfigError("softmax components cannot be mixed with other expressions")
        return np.array([e.box_range(box) for e in self.exprs], dtype=float)

    def lower_bounds(self, box: Box) -> np.ndarray:
        """Analytic lower bounds on the normalized probabilities over the box."""
        rng_ = self.raw_ranges(box)
        if self.normalization == "renormalize" and not self.is_softmax:
            s_hi = rng_[:, 1].sum()
            return rng_[:, 0] / s_hi if s_hi > 0 else np.zeros(len(self))
        return rng_[:, 0]

    def lipschitz_bounds(self, metric: str, box: Box) -> np.ndarray:
        """Analytic Lipschitz constants of the normalized probabilities."""
        if self.is_softmax:
            out = []
            for ei in self.exprs:
                spread = max(dual_norm(ei.weights - ej.weights, metric) for ej in self.exprs)
                # |grad p_i| <= p_i (1 - p_i) max_j |w_i - w_j| <= max_j |w_i - w_j| / 4
                out.append(spread / 4.0)
            return np.array(out)
        raw_l = np.array([e.lipschitz(metric) for e in self.exprs], dtype=float)
        if self.normalization == "exact":
            return raw_l
        s_min = self.raw_ranges(box)[:, 0].sum()
        if s_min <= 0:
            return np.full(len(self), np.inf)
        return (raw_l + raw_l.sum()) / s_min

    def to_dict(self) -> dict:
        return {"normalization": self.normalization, "exprs": [e.to_dict() for e in self.exprs]}


# --- the system --------------------------------------------------------------

_KIND = {Constant: 0, ClippedAffine: 1, SoftmaxComponent: 2}


@dataclass(frozen=True)
class KernelArrays:
    """Flat array encoding of a system, consumed by the compiled chain kernel."""

    matrices: np.ndarray  # (k, d, d)
    offsets: np.ndarray  # (k, d)
    kinds: np.ndarray  # (k,) int64
    coef: np.ndarray  # (k, d)
    const: np.ndarray  # (k,)
    lo: np.ndarray  # (k,)
    hi: np.ndarray  # (k,)
    renormalize: bool
    constant_cumsum: np.ndarray  # (k,) cumulative sums when the field is constant, else empty


@dataclass(frozen=True, eq=False)
class IfsSystem:
    """A studied system; immutable after construction."""

    dimension: int
    maps: tuple
    field: ProbabilityField
    metric: str = "euclidean"
    base_point: np.ndarray = None
    domain_box: Box = None
    name: str = ""

    def __post_init__(self):
        _check_metric(self.metric)
        d = int(self.dimension)
        if d < 1:
            raise ConfigError("dimension must be >= 1")
        object.__setattr__(self, "dimension", d)
        maps = tuple(
            AffineMap(m.matrix, m.offset, self.metric) if isinstance(m, AffineMap) else AffineMap(m[0], m[1], self.metric)
            for m in self.maps
        )
        object.__setattr__(self, "maps", maps)
        if not isinstance(self.field, ProbabilityField):
            object.__setattr__(self, "field", ProbabilityField(tuple(self.field)))
        if self.domain_box is None:
            raise ConfigError("a domain box is mandatory")
        if not isinstance(self.domain_box, Box):
            lo, hi = self.domain_box
            object.__setattr__(self, "domain_box", Box(lo, hi))
        x0 = np.zeros(d) if self.base_point is None else np.atleast_1d(np.asarray(self.base_point, dtype=float))
        object.__setattr__(self, "base_point", x0)

    @property
    def k(self) -> int:
        return len(self.maps)

    def probabilities(self, points) -> np.ndarray:
        return self.field.evaluate(np.atleast_2d(np.asarray(points, dtype=float)))

    def images(self, points) -> np.ndarray:
        """All map images, shape (k, n, d)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([m(points) for m in self.maps], axis=0)

    def dist(self, x, y) -> np.ndarray:
        return distance(x, y, self.metric)

    @cached_property
    def lipschitz_constants(self) -> np.ndarray:
        return np.array([m.cached_lipschitz for m in self.maps])

    @cached_property
    def prob_lipschitz(self) -> np.ndarray:
        return self.field.lipschitz_bounds(self.metric, self.domain_box)

    @cached_property
    def kernel_arrays(self) -> KernelArrays:
        k, d = self.k, self.dimension
        kinds = np.zeros(k, dtype=np.int64)
        coef = np.zeros((k, d))
        const = np.zeros(k)
        lo = np.zeros(k)
        hi = np.ones(k)
        for i, e in enumerate(self.field.exprs):
            kinds[i] = _KIND[type(e)]
            if isinstance(e, Constant):
                const[i] = e.value
            elif isinstance(e, ClippedAffine):
                coef[i], const[i], lo[i], hi[i] = e.slope, e.intercept, e.lo, e.hi
            else:
                coef[i], const[i] = e.weights, e.bias
        renorm = self.field.normalization == "renormalize" and not self.field.is_softmax
        if self.field.is_constant:
            p = const / const.sum() if renorm else const.copy()
            cums = np.cumsum(p)
        else:
            cums = np.zeros(0)
        return KernelArrays(
            matrices=np.ascontiguousarray(np.stack([m.matrix for m in self.maps])),
            offsets=np.ascontiguousarray(np.stack([m.offset for m in self.maps])),
            kinds=kinds,
            coef=coef,
            const=const,
            lo=lo,
            hi=hi,
            renormalize=renorm,
            constant_cumsum=cums,
        )

    def with_maps(self, maps: Sequence, name: str | None = None) -> "IfsSystem":
        return IfsSystem(self.dimension, tuple(maps), self.field, self.metric, self.base_point, self.domain_box, name or self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "metric": self.metric,
            "maps": [m.to_dict() for m in self.maps],
            "normalization": self.field.normalization,
            "probabilities": [e.to_dict() for e in self.field.exprs],
            "base_point": self.base_point.tolist(),
            "domain_box": self.domain_box.to_dict(),
        }


def evaluate_probabilities(system: IfsSystem, x) -> np.ndarray:
    """Probability vector ``(p_0(x), ..., p_{k-1}(x))`` at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise NonFinite("point has non-finite coordinates")
    if not system.domain_box.contains(x):
        warnings.warn(f"point {x.tolist()} lies outside the domain box", RuntimeWarning, stacklevel=2)
    return system.probabilities(x[None, :])[0]


def apply_map(system: IfsSystem, i: int, x) -> np.ndarray:
    if not 0 <= i < system.k:
        raise IndexOutOfRange(f"map index {i} outside [0, {system.k})")
    return system.maps[i](np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    caveats: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations), "caveats": list(self.caveats)}


def validate_system(system: IfsSystem, probe: int = 1000, seed: int = 0) -> ValidationReport:
    """Structural checks; never raises, the findings are the report."""
    rep = ValidationReport()
    d = system.dimension
    box = system.domain_box
    if system.k < 1:
        rep.violations.append("no maps")
    if system.k != len(system.field):
        rep.violations.append(f"length mismatch: {system.k} maps but {len(system.field)} probability expressions")
    if box.dim != d or system.base_point.shape != (d,):
        rep.violations.append("dimension mismatch between domain box, base point and system")
        return rep
    if np.any(box.lo > box.hi) or not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
        rep.violations.append("domain box is empty or unbounded")
        return rep
    for i, m in enumerate(system.maps):
        if m.matrix.shape != (d, d) or m.offset.shape != (d,):
            rep.violations.append(f"map {i} has wrong shape")
    for i, e in enumerate(system.field.exprs):
        vec = getattr(e, "slope", getattr(e, "weights", None))
        if vec is not None and vec.shape != (d,):
            rep.violations.append(f"probability expression {i} has wrong dimension")
    if rep.violations:
        return rep
    if not box.contains(system.base_point):
        rep.violations.append("base point lies outside the domain box")
    if system.field.mixes_softmax:
        rep.violations.append("softmax components cannot be mixed with other expressions")
        return rep

    corners = box.corners()
    for i, m in enumerate(system.maps):
        img = m(corners)
        if not (np.all(np.isfinite(img)) and np.isfinite(m.cached_lipschitz)):
            rep.violations.append(f"unbounded image of the domain box under map {i}")

    pts = np.concatenate([corners, probe_points(box, probe, seed, key="validate")])
    raw = system.field.raw(pts)
    if not np.all(np.isfinite(raw)):
        rep.violations.append("probability field is non-finite on the probe sample")
        return rep
    if np.any(raw < 0) or np.any(raw > 1):
        rep.violations.append("probability outside [0, 1] on the probe sample")
    if system.field.normalization == "exact" or system.field.is_softmax:
        if np.any(np.abs(raw.sum(axis=1) - 1.0) > SUM_TOL):
            rep.violations.append("field does not sum to 1 on the probe sample")
    elif np.any(raw.sum(axis=1) <= 0):
        rep.violations.append("degenerate field: raw values vanish on the probe sample")

    for e in system.field.exprs:
        if isinstance(e, ClippedAffine) and not (0.0 < e.lo <= e.hi < 1.0):
            rep.caveats.append("clip interval not strictly inside (0, 1)")
            break
    rep.caveats.append("suprema are estimated over the domain box only")
    return rep


# --- file format ---------------------------------------------------------------


def system_from_dict(doc: dict) -> IfsSystem:
    try:
        d = int(doc["dimension"])
        metric = doc.get("metric", "euclidean")
        maps = [AffineMap(m["matrix"], m["offset"], metric) for m in doc["maps"]]
        probs = doc["probabilities"]
        normalization = doc.get("normalization", "exact")
        if isinstance(probs, dict):
            normalization = probs.get("normalization", normalization)
            probs = probs["exprs"]
        field_ = ProbabilityField(tuple(expr_from_dict(p) for p in probs), normalization)
        box = doc["domain_box"]
        return IfsSystem(
            dimension=d,
            maps=tuple(maps),
            field=field_,
            metric=metric,
            base_point=doc.get("base_point", [0.0] * d),
            domain_box=Box(box["lo"], box["hi"]),
            name=doc.get("name", ""),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed system definition: {exc!r}") from exc


def load_system(path: Union[str, Path]) -> IfsSystem:
    """Load a system file; bare names ``half`` and ``tilt`` resolve to bundled files."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and resources.files("ifslab.data").joinpath(f"{p.name}.json").is_file():
        text = resources.files("ifslab.data").joinpath(f"{p.name}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read system file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"system file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("system file must contain a JSON object")
    return system_from_dict(doc)


def dump_system(system: IfsSystem, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(system.to_dict(), indent=2) + "\n")
