"""Smooth surrogate primitives, Adam, and the finite-difference gradient oracle.

Everything runs in double precision so that analytic gradients can be
verified against central differences with headroom. Functions returning
gradients hand back plain float64 arrays shaped like their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction; outputs sum to 1."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    s = np.asarray(scores, dtype=np.float64) / temperature
    if not np.all(np.isfinite(s)):
        raise ValueError("softmax scores must be finite")
    z = np.exp(s - s.max())
    return z / z.sum()


def soft_min_distance(p, cloud, temperature: float = 0.1):
    """Smooth lower envelope of the min Euclidean distance from p to a cloud.

    Returns (value, grad_p, grad_cloud) for
        value = -tau * log(sum_q exp(-||p - q|| / tau)).

    The value lies at or below the true nearest-neighbor distance and the
    gradients are exact for the smoothed function. Raises on an empty cloud.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    q = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if q.shape[0] == 0:
        raise ValueError("empty reference set")
    p = np.asarray(p, dtype=np.float64).reshape(3)
    diff = p - q
    d = np.linalg.norm(diff, axis=1)
    m = d.min()
    z = np.exp(-(d - m) / temperature)
    zsum = z.sum()
    value = float(m + temperature * (-np.log(zsum)))
    w = z / zsum
    # Unit directions; coincident points contribute zero direction.
    safe = np.where(d > 0.0, d, 1.0)
    dirs = np.where(d[:, None] > 0.0, diff / safe[:, None], 0.0)
    grad_p = (w[:, None] * dirs).sum(axis=0)
    grad_cloud = -w[:, None] * dirs
    return value, grad_p, grad_cloud


@dataclass
class AdamState:
    """Adam optimizer state; single-owner mutable, one per attack run."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params, grads) -> np.ndarray:
    """One Adam update with bias correction; mutates state, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise ValueError("optimizer state shape does not match parameters")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_gradient(f, points, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of an (N, 3) cloud."""
    if h <= 0.0:
        raise ValueError("step h must be positive")
    pts = np.asarray(points, dtype=np.float64).copy()
    grad = np.zeros_like(pts)
    flat = pts.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(pts)
        flat[i] = orig - h
        f_minus = f(pts)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("objective returned a non-finite value during differencing")
        grad.ravel()[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
