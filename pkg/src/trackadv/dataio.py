"""Sequence ingestion, synthetic scene generation, and search-region cropping.

On-disk layout of a sequence:

    <seq>/frames/000000.pcf   (or .xyz)
    <seq>/labels.txt          one line per frame: "frame cx cy cz w l h yaw"
    <seq>/meta.json           optional {"id": ..., "category": ...}

The binary frame format is magic "PCF1", little-endian uint32 point count,
then N x 3 float32 coordinates. Round-trips are bit-exact for clouds whose
coordinates are float32-representable; the text format round-trips to the
printed precision (1e-6).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box3D, ensure_cloud, rotation_z

PCF_MAGIC = b"PCF1"


@dataclass
class Sequence:
    """Ordered frames with per-frame ground-truth boxes; first box is the template."""

    seq_id: str
    frames: list[np.ndarray]
    gt_boxes: list[Box3D]
    category: str = "synthetic"

    def __post_init__(self):
        if len(self.frames) != len(self.gt_boxes):
            raise ValueError("frames and gt_boxes must have the same length")
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least two frames")
        self.frames = [ensure_cloud(f) for f in self.frames]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class SynthConfig:
    """Desk-scale synthetic scene: a cuboid-shell target moving through clutter."""

    frames: int = 30
    target_points: int = 192
    clutter_points: int = 64
    step: float = 0.5
    yaw_rate: float = 0.0
    noise_std: float = 0.02
    dropout: float = 0.05
    seed: int = 0
    target_size: tuple = (1.0, 1.8, 0.8)
    start_center: tuple = (0.0, 0.0, 0.4)
    start_yaw: float = 0.0
    clutter_margin: float = 4.0

    def __post_init__(self):
        if self.frames < 2 or self.target_points < 1 or self.clutter_points < 0:
            raise ValueError("invalid synthetic configuration counts")
        if self.noise_std < 0.0 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("invalid noise or dropout settings")


def trajectory_pose(cfg: SynthConfig, t: int) -> tuple[np.ndarray, float]:
    """Deterministic pose of the target at frame t (incremental integration)."""
    center = np.array(cfg.start_center, dtype=np.float64)
    yaw = float(cfg.start_yaw)
    for _ in range(t):
        center = center + cfg.step * np.array([np.cos(yaw), np.sin(yaw), 0.0])
        yaw = yaw + cfg.yaw_rate
    return center, yaw


def _sample_shell(rng: np.random.Generator, n: int, size) -> np.ndarray:
    """Uniform samples on the surface of a centered cuboid, local coordinates."""
    w, l, h = size
    areas = np.array([l * h, l * h, w * h, w * h, w * l, w * l])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    for k in range(6):
        m = face == k
        axis = k // 2
        sign = 1.0 if k % 2 == 0 else -1.0
        fixed = sign * 0.5
        coords = np.stack([u[m], v[m]], axis=1)
        if axis == 0:
            pts[m] = np.column_stack([np.full(m.sum(), fixed), coords[:, 0], coords[:, 1]])
        elif axis == 1:
            pts[m] = np.column_stack([coords[:, 0], np.full(m.sum(), fixed), coords[:, 1]])
        else:
            pts[m] = np.column_stack([coords[:, 0], coords[:, 1], np.full(m.sum(), fixed)])
    # Tiny inward inset keeps shell points inside the box after the
    # world-rotation round-trip despite floating-point error.
    return pts * np.array([w, l, h]) * (1.0 - 1e-9)


def synth_sequence(cfg: SynthConfig, seq_id: str | None = None) -> Sequence:
    """Generate a seeded synthetic sequence; a pure function of the config."""
    rng = np.random.default_rng(cfg.seed)
    shell = _sample_shell(rng, cfg.target_points, cfg.target_size)

    poses = [trajectory_pose(cfg, t) for t in range(cfg.frames)]
    centers = np.array([p[0] for p in poses])
    lo = centers.min(axis=0) - cfg.clutter_margin
    hi = centers.max(axis=0) + cfg.clutter_margin
    lo[2], hi[2] = 0.0, max(2.0, float(hi[2]) + 1.0)
    clutter = rng.uniform(lo, hi, size=(cfg.clutter_points, 3))

    frames, boxes = [], []
    for t in range(cfg.frames):
        center, yaw = poses[t]
        target = shell @ rotation_z(yaw).T + center
        cloud = np.vstack([target, clutter])
        if cfg.noise_std > 0.0:
            cloud = cloud + rng.normal(0.0, cfg.noise_std, size=cloud.shape)
        if cfg.dropout > 0.0:
            keep = rng.random(cloud.shape[0]) >= cfg.dropout
            if not keep.any():
                keep[0] = True
            cloud = cloud[keep]
        frames.append(cloud)
        boxes.append(Box3D(center, cfg.target_size, yaw))
    return Sequence(seq_id or f"synth_{cfg.seed:03d}", frames, boxes)


def save_frame(path: Path, points: np.ndarray) -> None:
    points = ensure_cloud(points)
    path = Path(path)
    if path.suffix == ".pcf":
        with open(path, "wb") as fh:
            fh.write(PCF_MAGIC)
            fh.write(struct.pack("<I", points.shape[0]))
            fh.write(points.astype("<f4").tobytes())
    elif path.suffix == ".xyz":
        with open(path, "w") as fh:
            for x, y, z in points:
                fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
    else:
        raise ValueError(f"unknown frame format: {path.suffix}")


def load_frame(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pcf":
        raw = path.read_bytes()
        if raw[:4] != PCF_MAGIC:
            raise ValueError(f"{path}: bad magic, expected PCF1")
        (count,) = struct.unpack("<I", raw[4:8])
        body = np.frombuffer(raw[8:], dtype="<f4")
        if body.size != count * 3:
            raise ValueError(f"{path}: expected {count * 3} floats, found {body.size}")
        return ensure_cloud(body.astype(np.float64).reshape(count, 3))
    if path.suffix == ".xyz":
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
                try:
                    rows.append([float(v) for v in parts])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        return ensure_cloud(np.array(rows, dtype=np.float64).reshape(len(rows), 3))
    raise ValueError(f"unknown frame format: {path.suffix}")


def save_sequence(seq: Sequence, directory, fmt: str = "pcf") -> Path:
    """Write a sequence to <directory>/frames/ + labels.txt (+ meta.json)."""
    if fmt not in ("pcf", "xyz"):
        raise ValueError("fmt must be 'pcf' or 'xyz'")
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        save_frame(directory / "frames" / f"{t:06d}.{fmt}", frame)
    with open(directory / "labels.txt", "w") as fh:
        for t, box in enumerate(seq.gt_boxes):
            vals = " ".join(repr(float(v)) for v in (*box.center, *box.size, box.yaw))
            fh.write(f"{t} {vals}\n")
    with open(directory / "meta.json", "w") as fh:
        json.dump({"id": seq.seq_id, "category": seq.category}, fh, sort_keys=True)
        fh.write("\n")
    return directory


def load_sequence(directory) -> Sequence:
    """Load a sequence directory; frames ordered by numeric filename."""
    directory = Path(directory)
    frames_dir = directory / "frames"
    label_path = directory / "labels.txt"
    if not frames_dir.is_dir():
        raise ValueError(f"{directory}: missing frames/ directory")
    if not label_path.is_file():
        raise ValueError(f"{directory}: missing labels.txt")

    frame_paths = sorted(
        (p for p in frames_dir.iterdir() if p.suffix in (".pcf", ".xyz")),
        key=lambda p: int(p.stem),
    )
    frames = [load_frame(p) for p in frame_paths]

    boxes: dict[int, Box3D] = {}
    with open(label_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{label_path}:{lineno}: expected 8 columns, got {len(parts)}")
            try:
                idx = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{label_path}:{lineno}: {exc}") from None
            boxes[idx] = Box3D(vals[0:3], vals[3:6], vals[6])
    if len(boxes) != len(frames):
        raise ValueError(
            f"{directory}: {len(frames)} frames but {len(boxes)} label lines"
        )
    gt = [boxes[t] for t in sorted(boxes)]

    seq_id, category = directory.name, "synthetic"
    meta_path = directory / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        seq_id = meta.get("id", seq_id)
        category = meta.get("category", category)
    return Sequence(seq_id, frames, gt, category)


def load_dataset(directory) -> list[Sequence]:
    """Load every sequence subdirectory, sorted by name."""
    directory = Path(directory)
    seq_dirs = sorted(p for p in directory.iterdir() if (p / "labels.txt").is_file())
    if not seq_dirs:
        raise ValueError(f"{directory}: no sequence directories found")
    return [load_sequence(p) for p in seq_dirs]


def crop_search_region(points, prev_box: Box3D, margin: float = 2.0):
    """Crop points inside the previous box enlarged horizontally by margin.

    z is unrestricted. Returns (crop, index_map) where index_map holds the
    original row index of every cropped point, so perturbations computed on
    the crop can be scattered back into the frame.
    """
    if margin < 0.0:
        raise ValueError("margin must be non-negative")
    pts = ensure_cloud(points)
    local = prev_box.to_local(pts)
    half = prev_box.size / 2.0
    keep = (np.abs(local[:, 0]) <= half[0] + margin) & (np.abs(local[:, 1]) <= half[1] + margin)
    index_map = np.flatnonzero(keep)
    if index_map.size == 0:
        raise ValueError("target lost from search region")
    return pts[index_map], index_map
