"""White-box adversarial losses for the three tracking paradigms and the
composite objective used by the target-aware black-box attack.

Each loss returns (value, gradient) where the gradient is taken w.r.t. the
tracker output it flows through (confidences, response map, or motion), and
`tracker_adv_loss` chains it all the way to the search-cloud coordinates.
Minimizing any of these losses degrades tracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box3D
from .trackers import MotionDelta, ResponseMap, TrackerContext

# Confidences and response values are clamped away from {0, 1} before logs.
CLAMP_EPS = 1e-7


@dataclass
class LossConfig:
    """Loss hyperparameters: center-error threshold, focal modulation, balance."""

    sigma: float = 0.3
    beta: float = 2.0
    gamma: float = 4.0
    lam: float = 0.5
    eta: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0.0 or self.beta < 0.0 or self.gamma < 0.0 or self.lam < 0.0:
            raise ValueError("invalid loss configuration")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


@dataclass
class CraftedLabel:
    """Response-map label with the peak moved opposite the target index."""

    grid: np.ndarray
    target: tuple


def _clamp_unit(x: np.ndarray):
    clamped = np.clip(x, CLAMP_EPS, 1.0 - CLAMP_EPS)
    interior = (x > CLAMP_EPS) & (x < 1.0 - CLAMP_EPS)
    return clamped, interior


def candidate_adv_loss_arrays(confidences, centers, gt_center, cfg: LossConfig):
    """Core of the candidate-paradigm loss on raw arrays.

    Candidates whose center lies farther than sigma from the reference are
    pushed toward confidence 1, the rest toward 0. The gradient flows through
    the confidences only; candidate boxes are constants.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if conf.shape[0] == 0:
        raise ValueError("no candidates")
    far = np.linalg.norm(centers - np.asarray(gt_center, float), axis=1) > cfg.sigma
    s, interior = _clamp_unit(conf)
    loss = -float(np.sum(np.where(far, np.log(s), np.log(1.0 - s))))
    grad = np.where(far, -1.0 / s, 1.0 / (1.0 - s)) * interior
    return loss, grad


def candidate_adv_loss(candidates, gt: Box3D, cfg: LossConfig):
    """Candidate-confidence loss on a list of Candidate objects."""
    conf = np.array([c.confidence for c in candidates])
    centers = np.array([c.box.center for c in candidates])
    return candidate_adv_loss_arrays(conf, centers, gt.center, cfg)


def crafted_label(c: tuple, h: int, w: int) -> CraftedLabel:
    """Label grid with value 1 at the index mirrored from the target index c.

    Indices are measured relative to the grid center cell; every other entry
    is the inverse distance to the mirrored peak. Raises when the mirrored
    index falls outside the grid.
    """
    cx, cy = int(c[0]), int(c[1])
    ri = np.arange(h) - h // 2
    rj = np.arange(w) - w // 2
    if not (ri[0] <= -cx <= ri[-1] and rj[0] <= -cy <= rj[-1]):
        raise ValueError("mirror target out of bounds")
    di = ri[:, None] + cx
    dj = rj[None, :] + cy
    dist = np.sqrt(di.astype(float) ** 2 + dj.astype(float) ** 2)
    grid = np.where(dist > 0.0, 1.0 / np.where(dist > 0.0, dist, 1.0), 1.0)
    return CraftedLabel(grid=grid, target=(cx, cy))


def response_adv_loss(r, m: CraftedLabel, cfg: LossConfig):
    """Focal-style loss pulling the response peak to the crafted label's peak."""
    grid = r.grid if isinstance(r, ResponseMap) else np.asarray(r, dtype=np.float64)
    label = m.grid
    if grid.shape != label.shape:
        raise ValueError(f"shape mismatch: response {grid.shape} vs label {label.shape}")
    rr, interior = _clamp_unit(grid)
    pos = label == 1.0
    neg_w = (1.0 - label) ** cfg.gamma
    pos_term = (1.0 - rr) ** cfg.beta * np.log(rr)
    neg_term = neg_w * rr**cfg.beta * np.log(1.0 - rr)
    loss = -float(np.sum(np.where(pos, pos_term, neg_term)))

    dpos = -cfg.beta * (1.0 - rr) ** (cfg.beta - 1.0) * np.log(rr) + (1.0 - rr) ** cfg.beta / rr
    dneg = neg_w * (cfg.beta * rr ** (cfg.beta - 1.0) * np.log(1.0 - rr) - rr**cfg.beta / (1.0 - rr))
    grad = -np.where(pos, dpos, dneg) * interior
    return loss, grad


def motion_adv_loss(pred: MotionDelta, gt: MotionDelta, size):
    """L1 pull of the predicted motion toward the true motion plus one box size."""
    size = np.asarray(size, dtype=np.float64).reshape(3)
    if np.any(size <= 0.0):
        raise ValueError("size must be positive")
    diff = pred.translation - (gt.translation + size)
    loss = float(np.abs(diff).sum())
    return loss, np.sign(diff)


def chamfer_with_grad(p, q):
    """Exact Chamfer distance and its a.e. gradient w.r.t. the first cloud.

    Nearest-neighbor assignments are treated as locally constant; coincident
    pairs contribute zero gradient.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError("chamfer distance is undefined for an empty cloud")
    d_pq, idx_pq = cKDTree(q).query(p)
    d_qp, idx_qp = cKDTree(p).query(q)
    loss = float(d_pq.mean() + d_qp.mean())

    grad = np.zeros_like(p)
    safe = np.where(d_pq > 0.0, d_pq, 1.0)
    grad += np.where(d_pq[:, None] > 0.0, (p - q[idx_pq]) / safe[:, None], 0.0) / p.shape[0]
    diff = p[idx_qp] - q
    safe = np.where(d_qp > 0.0, d_qp, 1.0)
    contrib = np.where(d_qp[:, None] > 0.0, diff / safe[:, None], 0.0) / q.shape[0]
    np.add.at(grad, idx_qp, contrib)
    return loss, grad


def _response_target_index(state, ref_box: Box3D) -> tuple:
    """Grid index of the reference center, clamped to the mirror-safe range."""
    i, j = state.response.relative_index(ref_box.center[:2])
    h, w = state.response.grid.shape
    lo_i, hi_i = -(h - 1 - h // 2), h - 1 - h // 2
    lo_j, hi_j = -(w - 1 - w // 2), w - 1 - w // 2
    return (int(np.clip(i, lo_i, hi_i)), int(np.clip(j, lo_j, hi_j)))


def tracker_adv_loss(tracker, search, ctx: TrackerContext, ref_box: Box3D, cfg: LossConfig):
    """Paradigm-appropriate adversarial loss and its gradient w.r.t. search.

    Returns (loss, grad, state) where state is the tracker forward cache.
    """
    state = tracker.forward(search, ctx)
    if tracker.paradigm == "candidate":
        centers = np.array([b.center for b in state.boxes])
        loss, d_conf = candidate_adv_loss_arrays(state.confidences, centers, ref_box.center, cfg)
        grad = tracker.backward_confidences(state, d_conf)
    elif tracker.paradigm == "response":
        c = _response_target_index(state, ref_box)
        h, w = state.response.grid.shape
        label = crafted_label(c, h, w)
        loss, d_r = response_adv_loss(state.response, label, cfg)
        grad = tracker.backward_response(state, d_r)
    elif tracker.paradigm == "motion":
        ref_motion = MotionDelta(*(ref_box.center - ctx.prev_box.center), 0.0)
        loss, d_delta = motion_adv_loss(state.delta, ref_motion, ref_box.size)
        grad = tracker.backward_motion(state, d_delta)
    else:
        raise ValueError(f"unknown tracker paradigm: {tracker.paradigm}")
    return loss, grad, state


def tapg_objective(
    perturbed,
    benign,
    delta,
    position_mask,
    factor_mask,
    tracker,
    ctx: TrackerContext,
    ref_box: Box3D,
    cfg: LossConfig,
    use_subvector: bool = True,
):
    """Composite objective of the target-aware attack.

    L = CD(perturbed, benign)
        + lam * [H(benign + M.delta) + H(benign + M.(G.delta)) + H(benign + M.((1-G).delta))]

    where M is the {0,1} position mask and G the random factor mask, both
    per-point. The returned gradient is w.r.t. delta and is exactly zero on
    unmasked points. With use_subvector=False only the first H term is kept.
    """
    benign = np.asarray(benign, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    lam_col = np.asarray(position_mask, dtype=np.float64).reshape(-1, 1)
    g_col = np.asarray(factor_mask, dtype=np.float64).reshape(-1, 1)

    cd, cd_grad = chamfer_with_grad(perturbed, benign)
    h_full, g_full, _ = tracker_adv_loss(tracker, perturbed, ctx, ref_box, cfg)
    loss = cd + cfg.lam * h_full
    grad = lam_col * (cd_grad + cfg.lam * g_full)
    parts = {"cd": cd, "h_full": h_full}

    if use_subvector:
        cloud_g = benign + lam_col * (g_col * delta)
        cloud_ng = benign + lam_col * ((1.0 - g_col) * delta)
        h_g, grad_g, _ = tracker_adv_loss(tracker, cloud_g, ctx, ref_box, cfg)
        h_ng, grad_ng, _ = tracker_adv_loss(tracker, cloud_ng, ctx, ref_box, cfg)
        loss += cfg.lam * (h_g + h_ng)
        grad += cfg.lam * lam_col * (g_col * grad_g + (1.0 - g_col) * grad_ng)
        parts["h_sub"] = h_g
        parts["h_sub_complement"] = h_ng
    return loss, grad, parts
