"""Point clouds, oriented 3D boxes, containment tests, and yaw-aware IoU.

Boxes are parameterized by center (x, y, z), size (w, l, h) and a yaw angle
about the +z axis; w extends along the local x axis, l along local y, h along
z. There is no pitch or roll. All operations here are pure functions on
immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# BEV intersection areas below this are numerical noise and snap to zero.
DEGENERATE_AREA = 1e-12

# Corner sign pattern: bottom face counter-clockwise (viewed from +z),
# then the top face in the same x/y order.
_CORNER_SIGNS = np.array(
    [
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, -1, +1],
        [+1, -1, +1],
    ],
    dtype=np.float64,
)


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    return float((float(angle) + math.pi) % TWO_PI - math.pi)


def rotation_z(yaw: float) -> np.ndarray:
    """3x3 rotation matrix about +z (local -> world)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def ensure_cloud(points) -> np.ndarray:
    """Validate and coerce an (N, 3) float64 point array.

    Raises ValueError on wrong shape or non-finite coordinates. The row
    order is preserved: index i keeps referring to the same physical point,
    which is what keeps perturbation masks aligned.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box (center, size, yaw about +z)."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3).copy()
        size = np.asarray(self.size, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(center)) or not np.all(np.isfinite(size)):
            raise ValueError("box parameters must be finite")
        if np.any(size <= 0.0):
            raise ValueError(f"box size must be positive, got {size}")
        center.setflags(write=False)
        size.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return float(self.size[0] * self.size[1] * self.size[2])

    def rotation(self) -> np.ndarray:
        return rotation_z(self.yaw)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """World coordinates -> box-local coordinates (inverse yaw)."""
        return (np.atleast_2d(points) - self.center) @ self.rotation()

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return np.atleast_2d(local) @ self.rotation().T + self.center

    def translated(self, offset) -> "Box3D":
        return Box3D(self.center + np.asarray(offset, dtype=np.float64), self.size, self.yaw)

    def offset_pose(self, dx: float, dy: float, dyaw: float) -> "Box3D":
        """Box moved by a horizontal offset and an extra yaw."""
        return Box3D(self.center + np.array([dx, dy, 0.0]), self.size, self.yaw + dyaw)


@dataclass
class PointMask:
    """Per-point {0, 1} mask aligned with a point cloud of the same length."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits).astype(bool).reshape(-1)

    def __len__(self) -> int:
        return int(self.bits.shape[0])


def corners(box: Box3D) -> np.ndarray:
    """Eight vertices of the box, shape (8, 3).

    Order: bottom face counter-clockwise starting at local (+w/2, +l/2),
    then the top face in the same x/y order.
    """
    local = _CORNER_SIGNS * (box.size / 2.0)
    return local @ box.rotation().T + box.center


def mask_in_box(points, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the box; boundary points count as inside."""
    pts = ensure_cloud(points)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    local = box.to_local(pts)
    half = box.size / 2.0
    return np.all(np.abs(local) <= half, axis=1)


def center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers."""
    return float(np.linalg.norm(a.center - b.center))


def _footprint(box: Box3D) -> np.ndarray:
    """BEV footprint corners, shape (4, 2), counter-clockwise."""
    return corners(box)[:4, :2]


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against a convex CCW polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not output:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        polygon = output
        output = []
        prev = polygon[-1]
        prev_side = side(prev)
        for cur in polygon:
            cur_side = side(cur)
            # Points on the clip edge count as inside.
            if cur_side >= -DEGENERATE_AREA:
                if prev_side < -DEGENERATE_AREA:
                    output.append(_edge_intersection(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= -DEGENERATE_AREA:
                output.append(_edge_intersection(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64) if output else np.zeros((0, 2))


def _edge_intersection(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Exact 3D IoU of two yaw-oriented boxes.

    The BEV footprints are intersected by convex polygon clipping and the
    result is multiplied by the vertical overlap. Degenerate intersection
    areas snap to zero.
    """
    inter_poly = _clip_polygon(_footprint(a), _footprint(b))
    area = _polygon_area(inter_poly)
    if area < DEGENERATE_AREA:
        return 0.0
    za0, za1 = a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0
    zb0, zb1 = b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter = area * dz
    union = a.volume + b.volume - inter
    return float(inter / union)


def iou_mc_oracle(a: Box3D, b: Box3D, n_samples: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo IoU estimate with its standard error.

    Samples uniformly in the axis-aligned bounding box of both boxes.
    Conditional on landing in the union, a sample is in the intersection
    with probability IoU, so the standard error is the binomial one.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(lo, hi, size=(int(n_samples), 3))
    in_a = mask_in_box(samples, a)
    in_b = mask_in_box(samples, b)
    n_union = int(np.count_nonzero(in_a | in_b))
    if n_union == 0:
        return 0.0, 0.0
    n_inter = int(np.count_nonzero(in_a & in_b))
    est = n_inter / n_union
    stderr = math.sqrt(est * (1.0 - est) / n_union)
    return est, stderr
