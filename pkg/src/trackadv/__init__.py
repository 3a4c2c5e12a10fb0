"""Adversarial attack benchmark for LiDAR point-cloud single-object trackers."""

from .geometry import Box3D, PointMask, corners, center_distance, iou_3d, iou_mc_oracle, mask_in_box
from .metrics import AttackReport, EvalReport, attack_rates, chamfer, hausdorff, one_pass_eval

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "PointMask",
    "corners",
    "center_distance",
    "iou_3d",
    "iou_mc_oracle",
    "mask_in_box",
    "chamfer",
    "hausdorff",
    "one_pass_eval",
    "attack_rates",
    "AttackReport",
    "EvalReport",
    "__version__",
]
