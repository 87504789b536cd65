"""Compiled inner loops for chain simulation.

The arithmetic mirrors ``AffineMap.__call__`` and ``ProbabilityField.evaluate``
operation for operation, so compiled and reference paths agree bit for bit on
affine and clipped-affine fields.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _probabilities(x, kinds, coef, const, lo, hi, renorm, out):
    k = kinds.shape[0]
    d = x.shape[0]
    if k > 0 and kinds[0] == 2:
        zmax = -np.inf
        for i in range(k):
            s = 0.0
            for j in range(d):
                s += coef[i, j] * x[j]
            out[i] = s + const[i]
            if out[i] > zmax:
                zmax = out[i]
        tot = 0.0
        for i in range(k):
            out[i] = np.exp(out[i] - zmax)
            tot += out[i]
        for i in range(k):
            out[i] = out[i] / tot
        return
    for i in range(k):
        if kinds[i] == 0:
            out[i] = const[i]
        else:
            s = 0.0
            for j in range(d):
                s += coef[i, j] * x[j]
            v = s + const[i]
            out[i] = min(max(v, lo[i]), hi[i])
    if renorm:
        tot = 0.0
        for i in range(k):
            tot += out[i]
        for i in range(k):
            out[i] = out[i] / tot


@njit(cache=True)
def _select(u, p, cums):
    """Inverse CDF with right-closed intervals: first j with u <= cumsum_j."""
    k = p.shape[0]
    c = 0.0
    last = 0
    for j in range(k):
        c += p[j]
        cums[j] = c
        if p[j] > 0.0:
            last = j
        if u <= c:
            return j
    return last


@njit(cache=True)
def _select_sorted(u, cums, last):
    lo_, hi_ = 0, cums.shape[0]
    while lo_ < hi_:
        mid = (lo_ + hi_) // 2
        if cums[mid] < u:
            lo_ = mid + 1
        else:
            hi_ = mid
    return lo_ if lo_ < cums.shape[0] else last


@njit(cache=True)
def _last_positive(cums):
    last = 0
    prev = 0.0
    for j in range(cums.shape[0]):
        if cums[j] > prev:
            last = j
        prev = cums[j]
    return last


@njit(cache=True)
def _apply(i, x, matrices, offsets, out):
    d = x.shape[0]
    for r in range(d):
        s = 0.0
        for j in range(d):
            s += matrices[i, r, j] * x[j]
        out[r] = s + offsets[i, r]


@njit(cache=True)
def run_chain(start, uniforms, burn_in, matrices, offsets, kinds, coef, const, lo, hi, renorm, constant_cums, states, indices):
    """Advance from ``start`` consuming one uniform per step.

    ``states`` has shape (n, d): the state after ``burn_in`` steps and the
    following n - 1 states; ``indices[j]`` is the map taking states[j] to
    states[j + 1].
    """
    d = start.shape[0]
    k = kinds.shape[0]
    n = states.shape[0]
    x = start.copy()
    y = np.empty(d)
    p = np.empty(k)
    cums = np.empty(k)
    use_const = constant_cums.shape[0] == k
    last_const = _last_positive(constant_cums)
    total = burn_in + n - 1
    for t in range(total):
        if t >= burn_in:
            for r in range(d):
                states[t - burn_in, r] = x[r]
        u = uniforms[t]
        if use_const:
            i = _select_sorted(u, constant_cums, last_const)
        else:
            _probabilities(x, kinds, coef, const, lo, hi, renorm, p)
            i = _select(u, p, cums)
        if t >= burn_in:
            indices[t - burn_in] = i
        _apply(i, x, matrices, offsets, y)
        for r in range(d):
            x[r] = y[r]
    for r in range(d):
        states[n - 1, r] = x[r]


@njit(cache=True)
def advance_many(starts, uniforms, matrices, offsets, kinds, coef, const, lo, hi, renorm, constant_cums, out):
    """Run one chain per row of ``starts`` for ``uniforms.shape[1]`` steps; write final states."""
    reps, d = starts.shape
    steps = uniforms.shape[1]
    k = kinds.shape[0]
    x = np.empty(d)
    y = np.empty(d)
    p = np.empty(k)
    cums = np.empty(k)
    use_const = constant_cums.shape[0] == k
    last_const = _last_positive(constant_cums)
    for r in range(reps):
        for c in range(d):
            x[c] = starts[r, c]
        for t in range(steps):
            u = uniforms[r, t]
            if use_const:
                i = _select_sorted(u, constant_cums, last_const)
            else:
                _probabilities(x, kinds, coef, const, lo, hi, renorm, p)
                i = _select(u, p, cums)
            _apply(i, x, matrices, offsets, y)
            for c in range(d):
                x[c] = y[c]
        for c in range(d):
            out[r, c] = x[c]
