"""Experiment orchestration: one-pass tracking runs with and without attacks,
surrogate-to-victim transfer matrices, the target-aware ablation grid, and
report serialization.

Determinism contract: a fixed configuration (dataset, seeds, attack settings)
produces byte-identical JSON/CSV outputs across runs and across worker
counts. Attack randomness is derived per (seed, sequence, frame), results are
merged in a canonical order, and no timestamps enter the report files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, AttackResult, cw, fgsm, gauss, pgd, tapg
from .dataio import Sequence, crop_search_region
from .geometry import Box3D, mask_in_box
from .metrics import (
    EvalReport,
    SequenceEval,
    attack_rates,
    chamfer,
    combine_evals,
    eval_sequence,
    hausdorff,
)
from .trackers import (
    CandidateTracker,
    MotionTracker,
    ResponseTracker,
    TargetLostError,
    TrackerContext,
)

DEFAULT_SEEDS = list(range(10))
DEFAULT_MARGIN = 2.0

ORIGIN = "origin"
ATTACKS = ("fgsm", "pgd", "cw", "gauss", "tapg")
# Attacks with no random component run once regardless of the seed list.
DETERMINISTIC_ATTACKS = frozenset({"fgsm", "pgd", "cw"})


def make_tracker(tracker_id: str):
    if tracker_id == "candidate":
        return CandidateTracker()
    if tracker_id == "response":
        return ResponseTracker()
    if tracker_id == "motion":
        return MotionTracker()
    raise ValueError(f"unknown tracker id: {tracker_id!r}")


TRACKER_IDS = ("candidate", "response", "motion")


def frame_rng(seed: int, seq_id: str, frame: int, attack_id: str) -> np.random.Generator:
    """Generator derived stably from the run seed, sequence, frame, and attack."""
    entropy = [int(seed), zlib.crc32(seq_id.encode()), int(frame), zlib.crc32(attack_id.encode())]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _run_attack(attack_id, crop, tracker, ctx, gt, cfg: AttackConfig, rng) -> AttackResult:
    if attack_id == "fgsm":
        return fgsm(crop, tracker, ctx, gt, cfg)
    if attack_id == "pgd":
        return pgd(crop, tracker, ctx, gt, cfg)
    if attack_id == "cw":
        return cw(crop, tracker, ctx, gt, cfg)
    if attack_id == "gauss":
        return gauss(crop, cfg, rng)
    if attack_id == "tapg":
        return tapg(crop, tracker, ctx, cfg, rng)
    raise ValueError(f"unknown attack id: {attack_id!r}")


@dataclass
class RunResult:
    """One tracker pass over one sequence."""

    tracker_id: str
    attack_id: str | None
    seq_id: str
    seed: int
    boxes: list
    eval: SequenceEval
    cd: np.ndarray
    hd: np.ndarray
    lost_frames: list
    perturbed_frames: list | None = None
    deltas: list | None = None
    masks: list | None = None


def run_tracking(
    tracker,
    seq: Sequence,
    attack: str | None = None,
    cfg: AttackConfig | None = None,
    seed: int = 0,
    margin: float = DEFAULT_MARGIN,
    record_frames: bool = False,
    frames_override: list | None = None,
    tracker_id: str = "",
) -> RunResult:
    """One-pass protocol: frame t uses frame t-1's prediction as its prior.

    With `attack` set, each frame's search crop is attacked before tracking
    and CD/HD are recorded between the benign and the attacked crop. With
    `frames_override`, tracking consumes the supplied (already perturbed)
    frames instead of the sequence's own; this is the transfer replay path.
    A lost target carries the previous box forward and flags the frame.
    """
    if attack is not None and frames_override is not None:
        raise ValueError("attack generation and frame replay are mutually exclusive")
    cfg = cfg or AttackConfig()
    template_box = seq.gt_boxes[0]
    template = seq.frames[0][mask_in_box(seq.frames[0], template_box)]
    if template.shape[0] == 0:
        raise ValueError(f"{seq.seq_id}: no template points inside the first box")

    prev_box = template_box
    prev_crop, _ = crop_search_region(seq.frames[0], prev_box, margin)

    boxes = [template_box]
    cd = [0.0]
    hd = [0.0]
    lost = []
    recorded = [seq.frames[0].copy()] if record_frames else None
    deltas = [] if record_frames else None
    masks = [] if record_frames else None

    for t in range(1, len(seq)):
        stream_frame = frames_override[t] if frames_override is not None else seq.frames[t]
        ctx = TrackerContext(template, template_box, prev_box, prev_cloud=prev_crop)
        cd_t = hd_t = 0.0
        frame_record = delta_record = mask_record = None
        try:
            if attack is not None:
                benign_crop, idx = crop_search_region(seq.frames[t], prev_box, margin)
                rng = frame_rng(seed, seq.seq_id, t, attack)
                result = _run_attack(attack, benign_crop, tracker, ctx, seq.gt_boxes[t], cfg, rng)
                frame = seq.frames[t].copy()
                frame[idx] = result.adversarial
                frame_record, delta_record, mask_record = frame, result.delta, result.mask
                search_crop, _ = crop_search_region(frame, prev_box, margin)
                cd_t = chamfer(benign_crop, search_crop)
                hd_t = hausdorff(benign_crop, search_crop)
            elif frames_override is not None:
                search_crop, _ = crop_search_region(stream_frame, prev_box, margin)
                benign_crop, _ = crop_search_region(seq.frames[t], prev_box, margin)
                cd_t = chamfer(benign_crop, search_crop)
                hd_t = hausdorff(benign_crop, search_crop)
            else:
                search_crop, _ = crop_search_region(stream_frame, prev_box, margin)
            box = tracker.track(search_crop, ctx).box
            prev_crop = search_crop
        except (TargetLostError, ValueError) as exc:
            if isinstance(exc, ValueError) and "target lost" not in str(exc):
                raise
            box = prev_box
            lost.append(t)
        boxes.append(box)
        prev_box = box
        cd.append(cd_t)
        hd.append(hd_t)
        if record_frames:
            recorded.append(frame_record if frame_record is not None else seq.frames[t].copy())
            deltas.append(delta_record if delta_record is not None else np.zeros_like(seq.frames[t]))
            masks.append(mask_record)

    report = eval_sequence(boxes, seq.gt_boxes, seq.seq_id, lost_frames=lost)
    return RunResult(
        tracker_id=tracker_id,
        attack_id=attack,
        seq_id=seq.seq_id,
        seed=seed,
        boxes=boxes,
        eval=report,
        cd=np.asarray(cd),
        hd=np.asarray(hd),
        lost_frames=lost,
        perturbed_frames=recorded,
        deltas=deltas,
        masks=masks,
    )


# ---------------------------------------------------------------------------
# Transfer matrix


@dataclass
class TransferCell:
    sr: float = 0.0
    pr: float = 0.0
    asr: float = 0.0
    apr: float = 0.0
    mean_cd: float = 0.0
    mean_hd: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class TransferMatrix:
    """Rows are victims, columns ORIGIN plus each attack."""

    surrogate: str
    victims: list
    attacks: list
    seeds: list
    cells: dict  # victim -> column -> TransferCell


def _attack_unit(args):
    """Generate adversarial frames on the surrogate, replay on every victim.

    Returns (unit_key, {victim: (SequenceEval, cd, hd)} or {"__error__": msg}).
    """
    surrogate_id, victim_ids, attack_id, cfg, seq, seed, margin = args
    key = (attack_id, seq.seq_id, seed)
    try:
        surrogate = make_tracker(surrogate_id)
        gen = run_tracking(
            surrogate, seq, attack=attack_id, cfg=cfg, seed=seed, margin=margin,
            record_frames=True, tracker_id=surrogate_id,
        )
        out = {}
        for victim_id in victim_ids:
            if victim_id == surrogate_id:
                out[victim_id] = (gen.eval, gen.cd, gen.hd)
                continue
            victim = make_tracker(victim_id)
            replay = run_tracking(
                victim, seq, frames_override=gen.perturbed_frames, margin=margin,
                tracker_id=victim_id,
            )
            out[victim_id] = (replay.eval, replay.cd, replay.hd)
        return key, out
    except Exception as exc:  # per-cell failure, matrix continues
        return key, {"__error__": f"{type(exc).__name__}: {exc}"}


def _origin_unit(args):
    victim_id, seq, margin = args
    victim = make_tracker(victim_id)
    run = run_tracking(victim, seq, margin=margin, tracker_id=victim_id)
    return (victim_id, seq.seq_id), (run.eval, run.cd, run.hd)


def _map_units(fn, units, workers: int):
    if workers <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, units))


def transfer_matrix(
    surrogate: str,
    victims: list,
    attacks: list,
    sequences: list,
    seeds: list | None = None,
    cfg: AttackConfig | None = None,
    margin: float = DEFAULT_MARGIN,
    workers: int = 1,
) -> TransferMatrix:
    """Seed-averaged transfer table: one generation per (attack, seq, seed),
    adversarial frames replayed bit-equal against every victim."""
    seeds = DEFAULT_SEEDS if seeds is None else list(seeds)
    cfg = cfg or AttackConfig()
    sequences = sorted(sequences, key=lambda s: s.seq_id)

    origin_units = [(v, seq, margin) for v in victims for seq in sequences]
    origin_results = dict(_map_units(_origin_unit, origin_units, workers))

    origin_reports = {}
    cells = {v: {} for v in victims}
    for v in victims:
        evals = [origin_results[(v, s.seq_id)][0] for s in sequences]
        rep = combine_evals(evals)
        origin_reports[v] = rep
        cells[v][ORIGIN] = TransferCell(sr=rep.sr, pr=rep.pr, asr=0.0, apr=0.0)

    units = []
    for attack_id in attacks:
        attack_seeds = seeds[:1] if attack_id in DETERMINISTIC_ATTACKS else seeds
        for seq in sequences:
            for seed in attack_seeds:
                unit_cfg = dataclasses.replace(cfg, seed=seed)
                units.append((surrogate, list(victims), attack_id, unit_cfg, seq, seed, margin))
    unit_results = dict(_map_units(_attack_unit, units, workers))

    for attack_id in attacks:
        attack_seeds = seeds[:1] if attack_id in DETERMINISTIC_ATTACKS else seeds
        keys = sorted(
            (attack_id, seq.seq_id, seed) for seq in sequences for seed in attack_seeds
        )
        errors = [unit_results[k]["__error__"] for k in keys if "__error__" in unit_results[k]]
        for v in victims:
            if errors:
                cells[v][attack_id] = TransferCell(failed=True, error=errors[0])
                continue
            evals = [unit_results[k][v][0] for k in keys]
            cd = np.concatenate([unit_results[k][v][1] for k in keys])
            hd = np.concatenate([unit_results[k][v][2] for k in keys])
            rep = combine_evals(evals)
            rates = attack_rates(origin_reports[v], rep, cd=cd, hd=hd,
                                 attack=attack_id, surrogate=surrogate, victim=v)
            cells[v][attack_id] = TransferCell(
                sr=rep.sr, pr=rep.pr, asr=rates.asr, apr=rates.apr,
                mean_cd=rates.mean_cd, mean_hd=rates.mean_hd,
            )
    return TransferMatrix(surrogate, list(victims), list(attacks), seeds, cells)


# ---------------------------------------------------------------------------
# Ablation grid


ABLATION_ROWS = (
    {"subvector": False, "target_aware": False},
    {"subvector": True, "target_aware": False},
    {"subvector": False, "target_aware": True},
    {"subvector": True, "target_aware": True},
)


def ablation_tapg(
    sequences: list,
    victims: list,
    seeds: list | None = None,
    cfg: AttackConfig | None = None,
    surrogate: str = "candidate",
    margin: float = DEFAULT_MARGIN,
    workers: int = 1,
) -> list:
    """2x2 grid over {sub-vector, target-aware}; reports SR/PR per victim.

    With both strategies off this is a plain Adam attack on CD + lam * H with
    an all-ones position mask.
    """
    seeds = DEFAULT_SEEDS if seeds is None else list(seeds)
    cfg = cfg or AttackConfig()
    rows = []
    for flags in ABLATION_ROWS:
        row_cfg = dataclasses.replace(
            cfg, use_subvector=flags["subvector"], target_aware=flags["target_aware"])
        matrix = transfer_matrix(
            surrogate, victims, ["tapg"], sequences, seeds=seeds, cfg=row_cfg,
            margin=margin, workers=workers,
        )
        row = dict(flags)
        row["victims"] = {
            v: {
                "sr": matrix.cells[v]["tapg"].sr,
                "pr": matrix.cells[v]["tapg"].pr,
                "failed": matrix.cells[v]["tapg"].failed,
            }
            for v in victims
        }
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Reports


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


TRANSFER_CSV_COLUMNS = ["victim", "column", "sr", "pr", "asr", "apr", "mean_cd", "mean_hd", "failed"]


def transfer_csv_rows(matrix: TransferMatrix) -> list:
    """Long-form rows, one per (victim, column), in the documented order."""
    rows = []
    for victim in matrix.victims:
        for column in [ORIGIN] + list(matrix.attacks):
            cell = matrix.cells[victim][column]
            rows.append([
                victim, column,
                f"{cell.sr:.6f}", f"{cell.pr:.6f}", f"{cell.asr:.6f}", f"{cell.apr:.6f}",
                f"{cell.mean_cd:.6f}", f"{cell.mean_hd:.6f}", str(int(cell.failed)),
            ])
    return rows


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def scatter_rows(matrix: TransferMatrix, rate: str) -> list:
    """(CD, ASR) or (CD, APR) pairs per attack and victim."""
    rows = []
    for attack in matrix.attacks:
        for victim in matrix.victims:
            cell = matrix.cells[victim][attack]
            if cell.failed:
                continue
            value = cell.asr if rate == "asr" else cell.apr
            rows.append([attack, victim, f"{cell.mean_cd:.6f}", f"{value:.6f}"])
    return rows


def write_transfer_outputs(out_dir, matrix: TransferMatrix, config_echo: dict) -> dict:
    """transfer.json + transfer.csv + the two scatter CSVs."""
    out_dir = Path(out_dir)
    payload = {
        "kind": "transfer_matrix",
        "config": config_echo,
        "surrogate": matrix.surrogate,
        "victims": matrix.victims,
        "attacks": matrix.attacks,
        "seeds": matrix.seeds,
        "cells": {v: {c: to_jsonable(cell) for c, cell in cols.items()}
                  for v, cols in matrix.cells.items()},
    }
    paths = {"json": write_json(out_dir / "transfer.json", payload)}
    paths["csv"] = write_csv(out_dir / "transfer.csv", TRANSFER_CSV_COLUMNS,
                             transfer_csv_rows(matrix))
    paths["scatter_asr"] = write_csv(out_dir / "scatter_asr.csv",
                                     ["attack", "victim", "mean_cd", "asr"],
                                     scatter_rows(matrix, "asr"))
    paths["scatter_apr"] = write_csv(out_dir / "scatter_apr.csv",
                                     ["attack", "victim", "mean_cd", "apr"],
                                     scatter_rows(matrix, "apr"))
    return paths


def matrix_from_payload(payload: dict) -> TransferMatrix:
    cells = {
        victim: {col: TransferCell(**cell) for col, cell in cols.items()}
        for victim, cols in payload["cells"].items()
    }
    return TransferMatrix(
        surrogate=payload["surrogate"],
        victims=payload["victims"],
        attacks=payload["attacks"],
        seeds=payload["seeds"],
        cells=cells,
    )
