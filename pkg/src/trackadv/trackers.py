"""Three differentiable desk-scale reference trackers, one per paradigm.

* CandidateTracker: scores a grid of pose hypotheses by soft Chamfer matching
  of the template against the search cloud and emits (box, confidence)
  candidates; the prediction is the confidence argmax.
* ResponseTracker: splats the search cloud onto a BEV grid, normalized
  cross-correlation with the template splat, sigmoid response map; the
  prediction sits at the peak cell.
* MotionTracker: soft foreground segmentation around the previous box in two
  consecutive frames; the prediction moves by the difference of weighted
  centroids.

Each tracker exposes a forward pass that caches what its hand-derived
vector-Jacobian products need, so adversarial losses can be differentiated
w.r.t. the search cloud coordinates. All trackers are deterministic
functions of (inputs, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d, correlate2d

from ._fastmatch import soft_chamfer_backward, soft_chamfer_forward
from .geometry import Box3D, ensure_cloud, rotation_z
from .numerics import softmax


class TargetLostError(RuntimeError):
    """The tracker cannot produce a prediction for this frame."""


@dataclass
class Candidate:
    box: Box3D
    confidence: float


@dataclass
class ResponseMap:
    """BEV response grid in (0,1); origin is the world xy of cell (0,0) center."""

    grid: np.ndarray
    cell_size: float
    origin: np.ndarray
    peak: tuple

    def relative_index(self, world_xy) -> tuple:
        """Grid index of a world position, relative to the grid center cell."""
        h, w = self.grid.shape
        i = int(np.round((world_xy[0] - self.origin[0]) / self.cell_size))
        j = int(np.round((world_xy[1] - self.origin[1]) / self.cell_size))
        return i - h // 2, j - w // 2


@dataclass
class MotionDelta:
    dx: float
    dy: float
    dz: float
    dyaw: float = 0.0

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


@dataclass
class TrackerContext:
    """Per-sequence state shared by every frame: template, priors, history."""

    template: np.ndarray
    template_box: Box3D
    prev_box: Box3D
    prev_cloud: np.ndarray | None = None

    def __post_init__(self):
        self.template = ensure_cloud(self.template)
        if self.template.shape[0] == 0:
            raise ValueError("template is empty after cropping")


@dataclass
class TrackResult:
    box: Box3D
    candidates: list | None = None
    response: ResponseMap | None = None
    motion: MotionDelta | None = None


def default_offset_grid() -> np.ndarray:
    """(dx, dy, dyaw) pose hypotheses: 5 x 5 x 3 = 75 candidates."""
    dx = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    dyaw = np.array([-0.2, 0.0, 0.2])
    grid = [(x, y, a) for x in dx for y in dx for a in dyaw]
    return np.array(grid, dtype=np.float64)


def _downsample(points: np.ndarray, size: int) -> np.ndarray:
    if points.shape[0] <= size:
        return points
    idx = np.unique(np.round(np.linspace(0, points.shape[0] - 1, size)).astype(int))
    return points[idx]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _parabolic_offset(values: np.ndarray, idx: int) -> float:
    """Sub-cell offset of a 1D peak by quadratic interpolation, in [-0.5, 0.5]."""
    if idx <= 0 or idx >= values.shape[0] - 1:
        return 0.0
    y0, y1, y2 = values[idx - 1], values[idx], values[idx + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))


# ---------------------------------------------------------------------------
# Candidate paradigm


@dataclass
class CandidateState:
    """Forward cache of CandidateTracker for the backward pass."""

    search: np.ndarray
    moved: np.ndarray          # (M, A, 3) template under each pose hypothesis
    scores: np.ndarray         # (M,)
    confidences: np.ndarray    # (M,)
    boxes: list
    dist: np.ndarray           # (M, A, S)
    expw: np.ndarray           # (M, A, S) shifted soft-min weights
    sum_s: np.ndarray          # (M, A)
    sum_a: np.ndarray          # (M, S)
    conf_temp: float


class CandidateTracker:
    """Vote-style two-stream stand-in: pose hypotheses scored by soft Chamfer."""

    paradigm = "candidate"

    def __init__(self, offsets=None, match_temp: float = 0.1, conf_temp: float = 0.05,
                 template_size: int = 64):
        self.offsets = default_offset_grid() if offsets is None else np.asarray(offsets, float)
        if self.offsets.shape[0] == 0:
            raise ValueError("offset grid must be nonempty")
        self.match_temp = float(match_temp)
        self.conf_temp = float(conf_temp)
        self.template_size = int(template_size)

    def _moved_templates(self, ctx: TrackerContext) -> tuple[np.ndarray, list]:
        tmpl = _downsample(ctx.template, self.template_size)
        local = ctx.template_box.to_local(tmpl)
        boxes = [ctx.prev_box.offset_pose(dx, dy, da) for dx, dy, da in self.offsets]
        moved = np.stack([b.to_world(local) for b in boxes])
        return moved, boxes

    def forward(self, search, ctx: TrackerContext) -> CandidateState:
        search = ensure_cloud(search)
        if search.shape[0] == 0:
            raise TargetLostError("no points in search region")
        moved, boxes = self._moved_templates(ctx)
        tau = self.match_temp

        dist, expw, sum_s, sum_a, gmin = soft_chamfer_forward(
            np.ascontiguousarray(moved), np.ascontiguousarray(search), tau)
        # Soft Chamfer per candidate, both directions.
        d_ts = gmin - tau * np.log(np.maximum(sum_s, 1e-300))  # softmin over search
        d_st = gmin - tau * np.log(np.maximum(sum_a, 1e-300))  # softmin over template
        scores = -(d_ts.mean(axis=1) + d_st.mean(axis=1))

        confidences = softmax(scores, temperature=self.conf_temp)
        return CandidateState(
            search, moved, scores, confidences, boxes, dist, expw, sum_s, sum_a,
            self.conf_temp,
        )

    def track(self, search, ctx: TrackerContext) -> TrackResult:
        state = self.forward(search, ctx)
        cands = [Candidate(b, float(c)) for b, c in zip(state.boxes, state.confidences)]
        best = int(np.argmax(state.confidences))
        return TrackResult(box=state.boxes[best], candidates=cands)

    def backward_scores(self, state: CandidateState, d_scores) -> np.ndarray:
        """d(loss)/d(search) given upstream d(loss)/d(scores)."""
        upstream = np.ascontiguousarray(np.asarray(d_scores, dtype=np.float64))
        return soft_chamfer_backward(
            state.dist, state.expw, state.sum_s, state.sum_a,
            state.moved, state.search, upstream,
        )

    def backward_confidences(self, state: CandidateState, d_conf) -> np.ndarray:
        """d(loss)/d(search) given upstream d(loss)/d(confidences)."""
        c = state.confidences
        d_conf = np.asarray(d_conf, float)
        d_scores = c * (d_conf - float(np.dot(c, d_conf))) / state.conf_temp
        return self.backward_scores(state, d_scores)


# ---------------------------------------------------------------------------
# BEV response paradigm


@dataclass
class ResponseState:
    search: np.ndarray
    response: ResponseMap
    box: Box3D
    ex: np.ndarray
    ey: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    kernel: np.ndarray
    kernel_norm: float
    corr_num: np.ndarray
    energy: np.ndarray
    denom: np.ndarray
    occupancy: np.ndarray
    gain: float
    splat_var: float


class ResponseTracker:
    """BEV two-stream stand-in: Gaussian splat + normalized cross-correlation."""

    paradigm = "response"

    def __init__(self, grid_h: int = 16, grid_w: int = 16, cell: float = 0.25,
                 splat_width: float = 0.3, gain: float = 4.0, template_size: int = 64):
        self.grid_h = int(grid_h)
        self.grid_w = int(grid_w)
        self.cell = float(cell)
        self.splat_width = float(splat_width)
        self.gain = float(gain)
        self.template_size = int(template_size)

    def _axes(self, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gx = center[0] + (np.arange(self.grid_h) - (self.grid_h - 1) / 2.0) * self.cell
        gy = center[1] + (np.arange(self.grid_w) - (self.grid_w - 1) / 2.0) * self.cell
        return gx, gy

    def _splat_axes(self, pts: np.ndarray, gx, gy):
        var = self.splat_width**2
        ex = np.exp(-((pts[:, 0:1] - gx[None, :]) ** 2) / (2.0 * var))
        ey = np.exp(-((pts[:, 1:2] - gy[None, :]) ** 2) / (2.0 * var))
        return ex, ey

    def _template_kernel(self, ctx: TrackerContext) -> np.ndarray:
        tmpl = _downsample(ctx.template, self.template_size)
        local = ctx.template_box.to_local(tmpl)
        moved = ctx.prev_box.to_world(local)
        extent = max(ctx.template_box.size[0], ctx.template_box.size[1]) / 2.0
        half_cells = int(math.ceil((extent + 2.0 * self.splat_width) / self.cell))
        k = 2 * half_cells + 1
        kx = ctx.prev_box.center[0] + (np.arange(k) - half_cells) * self.cell
        ky = ctx.prev_box.center[1] + (np.arange(k) - half_cells) * self.cell
        ex, ey = self._splat_axes(moved, kx, ky)
        kernel = ex.T @ ey
        # Zero-mean kernel: correlation responds to the template's shape
        # rather than to raw point mass, so dense clutter blobs score low.
        return kernel - kernel.mean()

    def forward(self, search, ctx: TrackerContext) -> ResponseState:
        search = ensure_cloud(search)
        if search.shape[0] == 0:
            raise TargetLostError("no points in search region")
        gx, gy = self._axes(ctx.prev_box.center)
        ex, ey = self._splat_axes(search, gx, gy)
        occupancy = ex.T @ ey

        kernel = self._template_kernel(ctx)
        kernel_norm = float(np.linalg.norm(kernel))
        corr_num = correlate2d(occupancy, kernel, mode="same", boundary="fill")
        # Local energy normalization: a window's score is its cosine
        # similarity with the template splat, so raw point mass cannot win.
        ones = np.ones_like(kernel)
        energy = np.sqrt(correlate2d(occupancy**2, ones, mode="same", boundary="fill") + 1e-9)
        denom = energy * kernel_norm + 1e-12
        r = _sigmoid(self.gain * corr_num / denom)

        peak = np.unravel_index(int(np.argmax(r)), r.shape)
        response = ResponseMap(
            grid=r,
            cell_size=self.cell,
            origin=np.array([gx[0], gy[0]]),
            peak=(int(peak[0]), int(peak[1])),
        )
        # Sub-cell parabolic refinement of the peak for the box prediction;
        # the response map itself stays on the cell grid.
        off_x = _parabolic_offset(corr_num[:, peak[1]], peak[0])
        off_y = _parabolic_offset(corr_num[peak[0], :], peak[1])
        center = np.array([
            gx[peak[0]] + off_x * self.cell,
            gy[peak[1]] + off_y * self.cell,
            ctx.prev_box.center[2],
        ])
        box = Box3D(center, ctx.prev_box.size, ctx.prev_box.yaw)
        return ResponseState(
            search, response, box, ex, ey, gx, gy, kernel, kernel_norm,
            corr_num, energy, denom, occupancy, self.gain, self.splat_width**2,
        )

    def track(self, search, ctx: TrackerContext) -> TrackResult:
        state = self.forward(search, ctx)
        return TrackResult(box=state.box, response=state.response)

    def backward_response(self, state: ResponseState, d_response) -> np.ndarray:
        """d(loss)/d(search) given upstream d(loss)/d(response grid)."""
        r = state.response.grid
        d_corr = np.asarray(d_response, float) * state.gain * r * (1.0 - r)
        d_num = d_corr / state.denom
        d_occ = convolve2d(d_num, state.kernel, mode="same", boundary="fill")
        # Local-energy normalization path of the denominator.
        d_energy = -d_corr * state.corr_num / state.denom**2 * state.kernel_norm
        ones = np.ones_like(state.kernel)
        d_occ = d_occ + state.occupancy * convolve2d(
            d_energy / state.energy, ones, mode="same", boundary="fill")

        d_ex = (d_occ @ state.ey.T).T    # (S, H)
        d_ey = state.ex @ d_occ          # (S, W)
        grad = np.zeros_like(state.search)
        px = state.search[:, 0:1]
        py = state.search[:, 1:2]
        grad[:, 0] = np.sum(
            d_ex * state.ex * (state.grid_x[None, :] - px) / state.splat_var, axis=1
        )
        grad[:, 1] = np.sum(
            d_ey * state.ey * (state.grid_y[None, :] - py) / state.splat_var, axis=1
        )
        return grad


# ---------------------------------------------------------------------------
# Motion paradigm


@dataclass
class MotionState:
    curr: np.ndarray
    delta: MotionDelta
    box: Box3D
    weights: np.ndarray
    weight_sum: float
    centroid: np.ndarray
    local: np.ndarray
    smooth_abs: np.ndarray
    axis_soft: np.ndarray
    rotation: np.ndarray
    fg_width: float


class MotionTracker:
    """Motion-centric one-stream stand-in: weighted-centroid frame difference.

    Foreground weights come from a sigmoid of the smooth signed distance to
    the previous box inflated by `fg_margin`; without the inflation, points
    the target motion carries past the old box boundary lose their weight
    and the centroid estimate lags the true translation.
    """

    paradigm = "motion"

    def __init__(self, fg_width: float = 0.1, box_temp: float = 0.05, abs_eps: float = 0.01,
                 fg_margin=(1.0, 1.0, 0.3)):
        self.fg_width = float(fg_width)
        self.box_temp = float(box_temp)
        self.abs_eps = float(abs_eps)
        self.fg_margin = np.asarray(fg_margin, dtype=np.float64).reshape(3)

    def _foreground(self, pts: np.ndarray, box: Box3D):
        """Smooth inside/outside score and soft weights for each point."""
        local = box.to_local(pts)
        smooth_abs = np.sqrt(local**2 + self.abs_eps**2)
        excess = smooth_abs - (box.size / 2.0 + self.fg_margin)
        m = excess.max(axis=1, keepdims=True)
        z = np.exp((excess - m) / self.box_temp)
        sdist = m[:, 0] + self.box_temp * np.log(z.sum(axis=1))
        axis_soft = z / z.sum(axis=1, keepdims=True)
        weights = _sigmoid(-sdist / self.fg_width)
        return weights, local, smooth_abs, axis_soft

    def forward(self, curr, ctx: TrackerContext) -> MotionState:
        if ctx.prev_cloud is None:
            raise ValueError("motion tracking needs the previous frame cloud in the context")
        curr = ensure_cloud(curr)
        prev = ensure_cloud(ctx.prev_cloud)
        if curr.shape[0] == 0 or prev.shape[0] == 0:
            raise TargetLostError("no points in search region")

        w_prev, _, _, _ = self._foreground(prev, ctx.prev_box)
        w_curr, local, smooth_abs, axis_soft = self._foreground(curr, ctx.prev_box)
        wp, wc = float(w_prev.sum()), float(w_curr.sum())
        if wp < 1e-6 or wc < 1e-6:
            raise TargetLostError("target lost")

        centroid_prev = (w_prev[:, None] * prev).sum(axis=0) / wp
        centroid_curr = (w_curr[:, None] * curr).sum(axis=0) / wc
        d = centroid_curr - centroid_prev
        delta = MotionDelta(float(d[0]), float(d[1]), float(d[2]), 0.0)
        box = Box3D(ctx.prev_box.center + d, ctx.prev_box.size, ctx.prev_box.yaw)
        return MotionState(
            curr, delta, box, w_curr, wc, centroid_curr, local, smooth_abs,
            axis_soft, ctx.prev_box.rotation(), self.fg_width,
        )

    def track(self, curr, ctx: TrackerContext) -> TrackResult:
        state = self.forward(curr, ctx)
        return TrackResult(box=state.box, motion=state.delta)

    def backward_motion(self, state: MotionState, d_delta) -> np.ndarray:
        """d(loss)/d(curr) given upstream d(loss)/d(translation delta)."""
        d_delta = np.asarray(d_delta, float).reshape(3)
        w = state.weights
        total = state.weight_sum
        direct = w[:, None] * d_delta[None, :] / total
        through_w = (state.curr - state.centroid) @ d_delta / total
        # dw/dp: sigmoid derivative through the smooth box distance.
        ds_dlocal = state.axis_soft * (state.local / state.smooth_abs)
        ds_dp = ds_dlocal @ state.rotation.T
        dw_coeff = -w * (1.0 - w) / state.fg_width
        return direct + (through_w * dw_coeff)[:, None] * ds_dp
