"""Gradient-based attacks on point-cloud trackers.

FGSM, PGD, and C&W operate white-box through the paradigm loss of the victim
tracker; GAUSS replaces the gradient direction with Gaussian noise; TAPG is
the transfer attack that restricts the perturbation to points inside the
predicted target box and regularizes a random sub-vector factorization of
the perturbation.

FGSM, PGD, and GAUSS guarantee the L-inf budget bit-exactly on their output;
TAPG leaves points outside its position mask bit-identical to the input.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .advloss import LossConfig, chamfer_with_grad, tapg_objective, tracker_adv_loss
from .geometry import Box3D, ensure_cloud, mask_in_box
from .numerics import AdamState, adam_step
from .trackers import TrackerContext

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    """Attack hyperparameters (paper defaults where the paper states them)."""

    epsilon: float = 0.1
    pgd_steps: int = 10
    pgd_alpha: float | None = None  # defaults to epsilon / 4
    cw_const: float = 1.0
    cw_steps: int = 50
    n_iter: int = 20
    lr: float = 0.01
    factor_prob: float = 0.5
    init_std: float = 0.05
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    # Ablation switches for the target-aware attack.
    use_subvector: bool = True
    target_aware: bool = True

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if min(self.pgd_steps, self.cw_steps, self.n_iter) < 0:
            raise ValueError("step counts must be non-negative")
        if not 0.0 < self.factor_prob < 1.0:
            raise ValueError("factor_prob must lie in (0, 1)")

    @property
    def step_size(self) -> float:
        return self.epsilon / 4.0 if self.pgd_alpha is None else self.pgd_alpha


@dataclass
class AttackResult:
    """Perturbed cloud plus bookkeeping; delta equals adversarial - benign exactly."""

    adversarial: np.ndarray
    delta: np.ndarray
    mask: np.ndarray | None
    loss_trace: list
    wall_time: float


def _apply_linf(benign: np.ndarray, delta: np.ndarray, eps: float) -> np.ndarray:
    """benign + delta with the L-inf budget enforced on the realized difference.

    Rounding of benign + delta can overshoot the budget by an ulp; nudge those
    coordinates back toward benign until the realized difference fits.
    """
    adv = benign + np.clip(delta, -eps, eps)
    for _ in range(4):
        over = np.abs(adv - benign) > eps
        if not over.any():
            break
        adv[over] = np.nextafter(adv[over], benign[over])
    return adv


def _finish(benign, adv, mask, trace, t0) -> AttackResult:
    return AttackResult(
        adversarial=adv,
        delta=adv - benign,
        mask=mask,
        loss_trace=[float(v) for v in trace],
        wall_time=time.perf_counter() - t0,
    )


def fgsm(benign, tracker, ctx: TrackerContext, gt: Box3D, cfg: AttackConfig) -> AttackResult:
    """Single signed-gradient step of size epsilon."""
    t0 = time.perf_counter()
    benign = ensure_cloud(benign)
    loss, grad, _ = tracker_adv_loss(tracker, benign, ctx, gt, cfg.loss)
    # Ascent direction on the attack objective = descent on the paradigm loss.
    delta = cfg.epsilon * np.sign(-grad)
    adv = _apply_linf(benign, delta, cfg.epsilon)
    return _finish(benign, adv, None, [loss], t0)


def pgd(benign, tracker, ctx: TrackerContext, gt: Box3D, cfg: AttackConfig) -> AttackResult:
    """Iterated signed-gradient steps with projection onto the L-inf ball."""
    t0 = time.perf_counter()
    benign = ensure_cloud(benign)
    delta = np.zeros_like(benign)
    trace = []
    for _ in range(cfg.pgd_steps):
        loss, grad, _ = tracker_adv_loss(tracker, benign + delta, ctx, gt, cfg.loss)
        trace.append(loss)
        delta = np.clip(delta + cfg.step_size * np.sign(-grad), -cfg.epsilon, cfg.epsilon)
    adv = _apply_linf(benign, delta, cfg.epsilon)
    return _finish(benign, adv, None, trace, t0)


def cw(benign, tracker, ctx: TrackerContext, gt: Box3D, cfg: AttackConfig) -> AttackResult:
    """Optimization attack: minimize CD(benign+delta, benign) + c * H by Adam.

    Returns the best-objective iterate. A single fixed trade-off constant is
    used; there is no binary search schedule.
    """
    t0 = time.perf_counter()
    benign = ensure_cloud(benign)
    delta = np.zeros_like(benign)
    adam = AdamState(lr=cfg.lr)
    best_delta, best_obj = delta, np.inf
    trace = []
    for _ in range(cfg.cw_steps):
        cloud = benign + delta
        cd, cd_grad = chamfer_with_grad(cloud, benign)
        h, h_grad, _ = tracker_adv_loss(tracker, cloud, ctx, gt, cfg.loss)
        obj = cd + cfg.cw_const * h
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_delta = obj, delta
        delta = adam_step(adam, delta, cd_grad + cfg.cw_const * h_grad)
    adv = benign + best_delta
    return _finish(benign, adv, None, trace, t0)


def gauss(benign, cfg: AttackConfig, rng: np.random.Generator | None = None) -> AttackResult:
    """FGSM with the gradient direction replaced by Gaussian noise; no queries."""
    t0 = time.perf_counter()
    benign = ensure_cloud(benign)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    delta = cfg.epsilon * np.sign(rng.standard_normal(benign.shape))
    adv = _apply_linf(benign, delta, cfg.epsilon)
    return _finish(benign, adv, None, [], t0)


def tapg(
    benign,
    tracker,
    ctx: TrackerContext,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Target-aware perturbation generation on a surrogate tracker.

    The surrogate's own prediction provides both the position mask (points
    inside the predicted box) and the reference box for the adversarial loss;
    no ground truth is consumed. Iterations stop early as soon as the
    objective exceeds the best value seen, and the perturbation at the best
    accepted iterate is returned.
    """
    t0 = time.perf_counter()
    benign = ensure_cloud(benign)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    pred_box = tracker.track(benign, ctx).box
    if cfg.target_aware:
        mask = mask_in_box(benign, pred_box)
    else:
        mask = np.ones(benign.shape[0], dtype=bool)
    if not mask.any():
        log.warning("position mask is empty; returning the benign cloud unchanged")
        return _finish(benign, benign.copy(), mask, [], t0)

    delta = rng.normal(0.0, cfg.init_std, size=benign.shape) if cfg.init_std > 0 else np.zeros_like(benign)
    delta[~mask] = 0.0

    adam = AdamState(lr=cfg.lr)
    best_loss = np.inf
    best_delta = delta
    trace = []
    for _ in range(cfg.n_iter):
        factor = rng.random(benign.shape[0]) < cfg.factor_prob
        perturbed = benign.copy()
        perturbed[mask] = benign[mask] + delta[mask]
        loss, grad, _ = tapg_objective(
            perturbed, benign, delta, mask, factor, tracker, ctx, pred_box,
            cfg.loss, use_subvector=cfg.use_subvector,
        )
        if loss > best_loss:
            break
        best_loss, best_delta = loss, delta
        trace.append(loss)
        delta = adam_step(adam, delta, grad)
        delta[~mask] = 0.0

    adv = benign.copy()
    adv[mask] = benign[mask] + best_delta[mask]
    return _finish(benign, adv, mask, trace, t0)
