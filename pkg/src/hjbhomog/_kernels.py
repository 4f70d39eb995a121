"""Compiled inner loops for the semi-Lagrangian cell solver.

Grids are flattened in C order. A stencil stores, for every control ``a``
and node ``i``, the ``2^D`` corner indices and multilinear weights of the
foot point ``i + dt * velocity / h``. Periodic grids wrap; box grids clamp
the foot point into the box.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _unravel(i, dims, out):
    D = dims.shape[0]
    r = i
    for k in range(D - 1, -1, -1):
        out[k] = r % dims[k]
        r //= dims[k]


@njit(cache=True, parallel=True)
def build_stencil(dims, periodic, disp):
    """Corner indices and weights for displacements ``disp`` (M, P, D) in cells."""
    M, P, D = disp.shape
    K = 1 << D
    idx = np.empty((M, P, K), dtype=np.int64)
    wt = np.empty((M, P, K), dtype=np.float64)
    strides = np.empty(D, dtype=np.int64)
    s = 1
    for k in range(D - 1, -1, -1):
        strides[k] = s
        s *= dims[k]
    for a in range(M):
        for i in prange(P):
            m = np.empty(D, dtype=np.int64)
            base = np.empty(D, dtype=np.int64)
            t = np.empty(D)
            _unravel(i, dims, m)
            for k in range(D):
                f = m[k] + disp[a, i, k]
                if periodic:
                    b = np.floor(f)
                    t[k] = f - b
                    base[k] = np.int64(b)
                else:
                    top = dims[k] - 1
                    if f < 0.0:
                        f = 0.0
                    elif f > top:
                        f = top
                    b = np.floor(f)
                    if b >= top:
                        b = top - 1 if top > 0 else 0
                    t[k] = f - b
                    base[k] = np.int64(b)
            for c in range(K):
                j = 0
                w = 1.0
                for k in range(D):
                    bit = (c >> (D - 1 - k)) & 1
                    q = base[k] + bit
                    if periodic:
                        q = q % dims[k]
                    elif q > dims[k] - 1:
                        q = dims[k] - 1
                    j += q * strides[k]
                    w *= t[k] if bit else 1.0 - t[k]
                idx[a, i, c] = j
                wt[a, i, c] = w
    return idx, wt


@njit(cache=True, parallel=True)
def sl_apply(w, idx, wt, cost, beta):
    """Jacobi application of the discounted dynamic-programming map.

    ``T(w)_i = min_a cost[a, i] + beta * I[w](foot_a(i))``.
    """
    M, P, K = idx.shape
    out = np.empty(P)
    for i in prange(P):
        best = np.inf
        for a in range(M):
            s = 0.0
            for k in range(K):
                s += wt[a, i, k] * w[idx[a, i, k]]
            c = cost[a, i] + beta * s
            if c < best:
                best = c
        out[i] = best
    return out


@njit(cache=True, parallel=True)
def sl_policy(w, idx, wt, cost, beta):
    """Index of the first minimizing control at every node."""
    M, P, K = idx.shape
    out = np.empty(P, dtype=np.int64)
    for i in prange(P):
        best = np.inf
        arg = 0
        for a in range(M):
            s = 0.0
            for k in range(K):
                s += wt[a, i, k] * w[idx[a, i, k]]
            c = cost[a, i] + beta * s
            if c < best:
                best = c
                arg = a
        out[i] = arg
    return out


@njit(cache=True)
def sl_sweep(w, idx, wt, cost, beta, order):
    """One Gauss-Seidel sweep in the given node order, in place.

    The self-coupling weight of each control is solved for exactly, so a
    node whose foot point is itself converges in one visit.
    """
    M, P, K = idx.shape
    diff = 0.0
    for n in range(order.shape[0]):
        i = order[n]
        best = np.inf
        for a in range(M):
            th = 0.0
            rest = 0.0
            for k in range(K):
                j = idx[a, i, k]
                if j == i:
                    th += wt[a, i, k]
                else:
                    rest += wt[a, i, k] * w[j]
            c = (cost[a, i] + beta * rest) / (1.0 - beta * th)
            if c < best:
                best = c
        dd = abs(best - w[i])
        if dd > diff:
            diff = dd
        w[i] = best
    return diff


@njit(cache=True)
def interp_periodic(w, dims, coords):
    """Multilinear interpolation of a periodic grid function.

    ``coords`` (Q, D) are in cell units (node ``j`` sits at ``j``).
    """
    Q, D = coords.shape
    K = 1 << D
    out = np.empty(Q)
    strides = np.empty(D, dtype=np.int64)
    s = 1
    for k in range(D - 1, -1, -1):
        strides[k] = s
        s *= dims[k]
    base = np.empty(D, dtype=np.int64)
    t = np.empty(D)
    for q in range(Q):
        for k in range(D):
            f = coords[q, k]
            b = np.floor(f)
            t[k] = f - b
            base[k] = np.int64(b)
        acc = 0.0
        for c in range(K):
            j = 0
            wgt = 1.0
            for k in range(D):
                bit = (c >> (D - 1 - k)) & 1
                j += ((base[k] + bit) % dims[k]) * strides[k]
                wgt *= t[k] if bit else 1.0 - t[k]
            acc += wgt * w[j]
        out[q] = acc
    return out
