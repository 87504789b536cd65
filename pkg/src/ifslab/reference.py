"""Reference systems with closed-form invariant measures.

``half``       T0 x = x/2, T1 x = x/2 + 1/2, p = (1/2, 1/2); nu = Uniform[0, 1].
``tilt``       same maps, p0(x) = (2 + x)/4, p1(x) = (2 - x)/4 on [0, 1].
``expanding``  HALF with T1 x = 2x; fails the contraction condition.
``iid_injection`` constant maps T_i x = c_i with uniform weights, so the chain
is i.i.d. after one step.
"""

from __future__ import annotations

import numpy as np

from .system import AffineMap, Box, ClippedAffine, Constant, IfsSystem, ProbabilityField, load_system


def half() -> IfsSystem:
    return load_system("half")


def tilt() -> IfsSystem:
    return load_system("tilt")


def expanding() -> IfsSystem:
    return load_system("expanding")


def single_halving() -> IfsSystem:
    return IfsSystem(
        1,
        (AffineMap([[0.5]], [0.0]),),
        ProbabilityField((Constant(1.0),)),
        base_point=[0.0],
        domain_box=Box([0.0], [1.0]),
        name="single-halving",
    )


def iid_injection(atoms: int = 1000) -> IfsSystem:
    """Constant maps onto the cell midpoints ``(i + 1/2)/atoms`` of [0, 1]."""
    c = (np.arange(atoms) + 0.5) / atoms
    maps = tuple(AffineMap([[0.0]], [ci]) for ci in c)
    probs = ProbabilityField(tuple(Constant(1.0) for _ in range(atoms)), "renormalize")
    return IfsSystem(1, maps, probs, base_point=[0.0], domain_box=Box([0.0], [1.0]), name=f"iid-injection-{atoms}")


def product_half(d: int = 2) -> IfsSystem:
    """All 2^d corner-halvings of the unit cube; nu is Uniform[0, 1]^d."""
    corners = Box(np.zeros(d), np.full(d, 0.5)).corners()
    maps = tuple(AffineMap(0.5 * np.eye(d), c) for c in corners)
    probs = ProbabilityField(tuple(Constant(1.0) for _ in corners), "renormalize")
    return IfsSystem(d, maps, probs, base_point=np.zeros(d), domain_box=Box(np.zeros(d), np.ones(d)), name=f"half-{d}d")


def tilt_probabilities() -> ProbabilityField:
    return ProbabilityField(
        (ClippedAffine([0.25], 0.5, 0.25, 0.75), ClippedAffine([-0.25], 0.5, 0.25, 0.75)),
        "exact",
    )


def uniform_cdf(t) -> np.ndarray:
    """CDF of Uniform[0, 1]^d at nodes of shape (m, d)."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    return np.prod(np.clip(t, 0.0, 1.0), axis=-1)
