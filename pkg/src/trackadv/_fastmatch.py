"""Fused kernels for the candidate tracker's soft Chamfer matching.

The (candidates x template x search) distance tensor dominates the attack
runtime, so the forward pass and the vector-Jacobian product are compiled
with numba. No fastmath: results must be IEEE-reproducible across runs and
worker processes.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def soft_chamfer_forward(moved, search, tau):
    """Distances, shifted exponential weights, and both soft-min sums.

    Returns (dist, expw, sum_s, sum_a, gmin) where expw = exp((gmin - d)/tau)
    with the global minimum distance as a shared stability shift.
    """
    m, a, _ = moved.shape
    s = search.shape[0]
    dist = np.empty((m, a, s))
    gmin = np.inf
    for i in range(m):
        for j in range(a):
            tx = moved[i, j, 0]
            ty = moved[i, j, 1]
            tz = moved[i, j, 2]
            for k in range(s):
                dx = tx - search[k, 0]
                dy = ty - search[k, 1]
                dz = tz - search[k, 2]
                d = np.sqrt(dx * dx + dy * dy + dz * dz)
                dist[i, j, k] = d
                if d < gmin:
                    gmin = d
    expw = np.empty((m, a, s))
    sum_s = np.zeros((m, a))
    sum_a = np.zeros((m, s))
    inv_tau = 1.0 / tau
    for i in range(m):
        for j in range(a):
            acc = 0.0
            for k in range(s):
                e = np.exp((gmin - dist[i, j, k]) * inv_tau)
                expw[i, j, k] = e
                acc += e
                sum_a[i, k] += e
            sum_s[i, j] = acc
    return dist, expw, sum_s, sum_a, gmin


@njit(cache=True)
def soft_chamfer_backward(dist, expw, sum_s, sum_a, moved, search, upstream):
    """d(loss)/d(search) given upstream d(loss)/d(scores).

    Coincident pairs (zero distance) contribute no gradient; underflowed
    soft-min sums are clamped, which matches the flat forward value there.
    """
    m, a, s = dist.shape
    grad = np.zeros((s, 3))
    for i in range(m):
        u = upstream[i]
        if u == 0.0:
            continue
        for j in range(a):
            row = u / (a * max(sum_s[i, j], 1e-300))
            tx = moved[i, j, 0]
            ty = moved[i, j, 1]
            tz = moved[i, j, 2]
            for k in range(s):
                d = dist[i, j, k]
                if d <= 0.0:
                    continue
                c = expw[i, j, k] * (row + u / (s * max(sum_a[i, k], 1e-300))) / d
                grad[k, 0] += c * (tx - search[k, 0])
                grad[k, 1] += c * (ty - search[k, 1])
                grad[k, 2] += c * (tz - search[k, 2])
    return grad
