"""Tracking metrics (SR/PR), attack metrics (ASR/APR), and imperceptibility
metrics (Chamfer and Hausdorff distance).

SR is the area under the success curve over IoU thresholds {0, 0.05, ..., 1.0}
with strict "IoU exceeds threshold"; PR uses center-error thresholds
{0, 0.1, ..., 2.0} m with inclusive "error <= threshold". Threshold weights
are uniform. Chamfer uses unsquared Euclidean distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box3D, center_distance, ensure_cloud, iou_3d

IOU_THRESHOLDS = np.linspace(0.0, 1.0, 21)
ERROR_THRESHOLDS = np.linspace(0.0, 2.0, 21)


def _directed_nn(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance from each point of p to its nearest neighbor in q."""
    d, _ = cKDTree(q).query(p)
    return d


def chamfer(p, q) -> float:
    """Chamfer distance: sum of the two directed mean nearest-neighbor distances."""
    p = ensure_cloud(p)
    q = ensure_cloud(q)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError("chamfer distance is undefined for an empty cloud")
    return float(_directed_nn(p, q).mean() + _directed_nn(q, p).mean())


def hausdorff(p, q) -> float:
    """Hausdorff distance: max over the two directed max-min distances."""
    p = ensure_cloud(p)
    q = ensure_cloud(q)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError("hausdorff distance is undefined for an empty cloud")
    return float(max(_directed_nn(p, q).max(), _directed_nn(q, p).max()))


@dataclass
class SequenceEval:
    """Per-sequence one-pass evaluation."""

    sequence_id: str
    ious: np.ndarray
    center_errors: np.ndarray
    sr: float
    pr: float
    lost_frames: list[int] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return int(self.ious.shape[0])


@dataclass
class EvalReport:
    """Aggregate SR/PR over one or more sequences (frame-weighted)."""

    per_sequence: list[SequenceEval]
    sr: float
    pr: float
    frame_count: int


@dataclass
class AttackReport:
    """Fractional SR/PR degradation plus imperceptibility statistics."""

    asr: float
    apr: float
    mean_cd: float
    max_cd: float
    mean_hd: float
    max_hd: float
    attack: str = ""
    surrogate: str = ""
    victim: str = ""


def _success_auc(ious: np.ndarray) -> float:
    return float(np.mean([(ious > t).mean() for t in IOU_THRESHOLDS]))


def _precision_auc(errors: np.ndarray) -> float:
    return float(np.mean([(errors <= t).mean() for t in ERROR_THRESHOLDS]))


def eval_sequence(pred_boxes, gt_boxes, sequence_id: str = "", lost_frames=None) -> SequenceEval:
    """One-pass evaluation of a single predicted box sequence."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(
            f"length mismatch: {len(pred_boxes)} predictions vs {len(gt_boxes)} ground truths"
        )
    if len(pred_boxes) == 0:
        raise ValueError("cannot evaluate an empty sequence")
    ious = np.array([iou_3d(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    errors = np.array([center_distance(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    return SequenceEval(
        sequence_id=sequence_id,
        ious=ious,
        center_errors=errors,
        sr=_success_auc(ious),
        pr=_precision_auc(errors),
        lost_frames=list(lost_frames) if lost_frames else [],
    )


def one_pass_eval(pred_boxes, gt_boxes, sequence_id: str = "") -> EvalReport:
    """Evaluate one sequence and wrap it in an aggregate report."""
    seq = eval_sequence(pred_boxes, gt_boxes, sequence_id)
    return combine_evals([seq])


def combine_evals(per_sequence: list[SequenceEval]) -> EvalReport:
    """Frame-weighted aggregate over per-sequence evaluations.

    Equals the pooled-frame computation because the threshold mean commutes
    with the frame-weighted average.
    """
    if not per_sequence:
        raise ValueError("no sequences to aggregate")
    ious = np.concatenate([s.ious for s in per_sequence])
    errors = np.concatenate([s.center_errors for s in per_sequence])
    return EvalReport(
        per_sequence=list(per_sequence),
        sr=_success_auc(ious),
        pr=_precision_auc(errors),
        frame_count=int(ious.shape[0]),
    )


def attack_rates(
    origin: EvalReport,
    attacked: EvalReport,
    cd=None,
    hd=None,
    attack: str = "",
    surrogate: str = "",
    victim: str = "",
) -> AttackReport:
    """ASR = (SR - SR_attacked) / SR and APR analogously.

    Negative values (the attack improved tracking) are permitted; a zero
    origin SR or PR makes the rate undefined and raises.
    """
    if origin.sr <= 0.0 or origin.pr <= 0.0:
        raise ValueError("undefined rate: origin SR and PR must be positive")
    cd = np.asarray(cd, dtype=np.float64) if cd is not None else np.zeros(1)
    hd = np.asarray(hd, dtype=np.float64) if hd is not None else np.zeros(1)
    if cd.size == 0:
        cd = np.zeros(1)
    if hd.size == 0:
        hd = np.zeros(1)
    return AttackReport(
        asr=float((origin.sr - attacked.sr) / origin.sr),
        apr=float((origin.pr - attacked.pr) / origin.pr),
        mean_cd=float(cd.mean()),
        max_cd=float(cd.max()),
        mean_hd=float(hd.mean()),
        max_hd=float(hd.max()),
        attack=attack,
        surrogate=surrogate,
        victim=victim,
    )
