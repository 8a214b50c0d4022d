"""Streaming detection metrics.

Every input timestamp is scored against the most recent prediction that
completed strictly before it. Per-class AP over center-distance thresholds
follows the nuScenes convention (101-point recall grid, precision and
recall floors of 0.1); true-positive errors are plain means over matched
pairs at the 2 m threshold. Velocity error is the one exception computed
offline, against each prediction's own source frame, because delayed
matching would bias it toward slow objects.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Box3D, FrameAnnotations, FrameDetections, ValidationError
from .geom import center_distance, wrap_angle
from .stream_sim import PredictionStream

DISTANCE_THRESHOLDS_M = (0.5, 1.0, 2.0, 4.0)
TP_ERROR_THRESHOLD_M = 2.0
_MIN_RECALL = 0.1
_MIN_PRECISION = 0.1


@dataclass(frozen=True, slots=True)
class MatchResult:
    """Outcome of pairing one evaluation timestamp with the stream."""

    eval_timestamp_us: int
    matched_record_index: int | None
    staleness_us: int | None


@dataclass(slots=True)
class MetricReport:
    """Aggregate streaming scores for one evaluation run."""

    per_class_ap: dict[tuple[str, float], float]
    map_s: float
    ate_s: float
    ase_s: float
    aoe_s: float
    aae_s: float
    ave_offline: float
    nds_s: float
    counts: dict[str, int]
    metadata: dict = field(default_factory=dict)
    schema_version: int = 1

    def to_dict(self) -> dict:
        ap_nested: dict[str, dict[str, float]] = {}
        for (cls, thr), ap in self.per_class_ap.items():
            ap_nested.setdefault(cls, {})[f"{thr:g}"] = ap
        return {
            "schema_version": self.schema_version,
            "map_s": self.map_s,
            "nds_s": self.nds_s,
            "ate_s": self.ate_s,
            "ase_s": self.ase_s,
            "aoe_s": self.aoe_s,
            "aae_s": self.aae_s,
            "ave_offline": self.ave_offline,
            "per_class_ap": ap_nested,
            "counts": self.counts,
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(obj: dict) -> "MetricReport":
        version = obj.get("schema_version")
        if version != 1:
            raise ValidationError(f"unsupported report schema_version: {version!r}")
        per_class = {
            (cls, float(thr)): float(ap)
            for cls, by_thr in obj["per_class_ap"].items()
            for thr, ap in by_thr.items()
        }
        return MetricReport(
            per_class_ap=per_class,
            map_s=float(obj["map_s"]),
            ate_s=float(obj["ate_s"]),
            ase_s=float(obj["ase_s"]),
            aoe_s=float(obj["aoe_s"]),
            aae_s=float(obj["aae_s"]),
            ave_offline=float(obj["ave_offline"]),
            nds_s=float(obj["nds_s"]),
            counts={k: int(v) for k, v in obj["counts"].items()},
            metadata=obj.get("metadata", {}),
        )


def match_recent(stream: PredictionStream, t_eval: int) -> MatchResult:
    """Most recent stream record completing strictly before `t_eval`.

    Returns an empty match when no record qualifies; evaluation then scores
    against the empty prediction set.
    """
    completions = stream.completions()
    idx = bisect_left(completions, t_eval) - 1
    if idx < 0:
        return MatchResult(t_eval, None, None)
    return MatchResult(t_eval, idx, t_eval - completions[idx])


def match_boxes(
    gt_boxes: Sequence[Box3D],
    pred_boxes: Sequence[Box3D],
    category: str,
    threshold_m: float,
) -> tuple[list[tuple[Box3D, Box3D]], list[Box3D], list[Box3D]]:
    """Greedy center-distance matching for one class at one threshold.

    Predictions are visited in descending score order; each takes the
    nearest unmatched ground-truth box within the threshold. Returns
    (tp_pairs, fp_predictions, fn_ground_truths).
    """
    if not threshold_m > 0.0:
        raise ValidationError(f"threshold must be positive, got {threshold_m}")
    gts = [b for b in gt_boxes if b.category == category]
    preds = [b for b in pred_boxes if b.category == category]
    preds.sort(key=lambda b: -b.score)

    taken = [False] * len(gts)
    pairs: list[tuple[Box3D, Box3D]] = []
    fps: list[Box3D] = []
    for p in preds:
        best_i, best_d = -1, math.inf
        for i, g in enumerate(gts):
            if taken[i]:
                continue
            d = center_distance(g.center, p.center)
            if d < best_d:
                best_i, best_d = i, d
        if best_i >= 0 and best_d <= threshold_m:
            taken[best_i] = True
            pairs.append((gts[best_i], p))
        else:
            fps.append(p)
    fns = [g for i, g in enumerate(gts) if not taken[i]]
    return pairs, fps, fns


def compute_ap(events: Sequence[tuple[float, bool]], npos: int) -> float:
    """Average precision from pooled (score, is_tp) events.

    Events sharing a score collapse into one operating point, so the curve
    is a function of the score ranking alone, not of pooling order.
    Precision is interpolated with a running max and evaluated on the
    101-point recall grid; recall below 0.1 and precision below 0.1 are
    discarded, and the result is renormalized so a perfect detector scores 1.
    """
    if npos <= 0:
        raise ValidationError("zero ground truth: AP undefined for this class")
    if not events:
        return 0.0
    scores = np.array([s for s, _ in events], dtype=np.float64)
    flags = np.array([tp for _, tp in events], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    flags = flags[order]

    block_end = np.ones(len(scores), dtype=bool)
    block_end[:-1] = scores[:-1] != scores[1:]
    tp = np.cumsum(flags)[block_end]
    fp = np.cumsum(~flags)[block_end]
    recall = tp / npos
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    grid = np.arange(round(100 * _MIN_RECALL) + 1, 101, dtype=np.float64) / 100.0
    idx = np.searchsorted(recall, grid, side="left")
    prec_at = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    clipped = np.maximum(prec_at - _MIN_PRECISION, 0.0)
    return min(1.0, float(np.mean(clipped) / (1.0 - _MIN_PRECISION)))


def compute_tp_errors(
    pairs: Sequence[tuple[Box3D, Box3D]],
) -> tuple[float, float, float, float]:
    """(ATE, ASE, AOE, AAE) means over matched (gt, pred) pairs.

    With no pairs every error is the worst case 1.0, matching the nuScenes
    convention for empty classes.
    """
    if not pairs:
        return 1.0, 1.0, 1.0, 1.0
    ate = sum(center_distance(g.center, p.center) for g, p in pairs) / len(pairs)
    ase = sum(1.0 - _scale_iou(g, p) for g, p in pairs) / len(pairs)
    aoe = sum(abs(wrap_angle(p.yaw - g.yaw)) for g, p in pairs) / len(pairs)
    aae = sum(1.0 for g, p in pairs if g.attribute != p.attribute) / len(pairs)
    return ate, ase, aoe, aae


def _scale_iou(a: Box3D, b: Box3D) -> float:
    """3D IoU of the two boxes after aligning centers and yaw."""
    inter = math.prod(min(sa, sb) for sa, sb in zip(a.size, b.size))
    union = math.prod(a.size) + math.prod(b.size) - inter
    return inter / union


def compute_ave_offline(
    offline_outputs: Mapping | Sequence[FrameDetections],
    gt_frames: Sequence[FrameAnnotations],
    classes: Sequence[str],
) -> float:
    """Mean planar velocity error over offline true positives.

    Each detection frame is matched against the ground truth of its own
    scene and source timestamp at the 2 m threshold, with no streaming
    delay.
    """
    dets = list(
        offline_outputs.values() if isinstance(offline_outputs, Mapping) else offline_outputs
    )
    dets.sort(key=lambda d: (d.scene_id, d.source_timestamp_us))
    gt_by_key = {(f.scene_id, f.timestamp_us): f for f in gt_frames}
    errors: list[float] = []
    for det in dets:
        gt = gt_by_key.get((det.scene_id, det.source_timestamp_us))
        if gt is None:
            continue
        for cls in classes:
            pairs, _, _ = match_boxes(gt.boxes, det.boxes, cls, TP_ERROR_THRESHOLD_M)
            errors.extend(
                math.hypot(p.velocity[0] - g.velocity[0], p.velocity[1] - g.velocity[1])
                for g, p in pairs
            )
    if not errors:
        return 1.0
    return sum(errors) / len(errors)


def compute_nds_s(
    map_s: float, ate_s: float, ase_s: float, aoe_s: float, ave: float, aae_s: float
) -> float:
    """Composite detection score: mAP weighted 5, each clamped TP error 1."""
    tp_terms = sum(1.0 - min(1.0, e) for e in (ave, ate_s, ase_s, aoe_s, aae_s))
    return 0.1 * (5.0 * map_s + tp_terms)


PredictionsFn = Callable[[int], FrameDetections]


def collect_pairs(
    gt_frames: Sequence[FrameAnnotations],
    stream: PredictionStream,
    predictions_fn: PredictionsFn | None = None,
) -> list[tuple[FrameAnnotations, list[Box3D]]]:
    """Pair every input timestamp with its effective prediction set."""
    scene_ids = {f.scene_id for f in gt_frames}
    for rec in stream.records:
        if rec.detections.scene_id not in scene_ids:
            raise ValidationError(
                f"scene mismatch: stream record for {rec.detections.scene_id!r}"
            )
    pairs = []
    for frame in gt_frames:
        if predictions_fn is not None:
            boxes = list(predictions_fn(frame.timestamp_us).boxes)
        else:
            m = match_recent(stream, frame.timestamp_us)
            if m.matched_record_index is None:
                boxes = []
            else:
                boxes = list(stream.records[m.matched_record_index].detections.boxes)
        pairs.append((frame, boxes))
    return pairs


def evaluate_pairs(
    pairs: Sequence[tuple[FrameAnnotations, list[Box3D]]],
    classes: Sequence[str] | None = None,
    thresholds: Sequence[float] = DISTANCE_THRESHOLDS_M,
    offline_outputs: Mapping[int, FrameDetections] | None = None,
    gt_frames_for_ave: Sequence[FrameAnnotations] | None = None,
    metadata: dict | None = None,
) -> MetricReport:
    """Compute the full report from (ground truth, prediction) pairs."""
    if not pairs:
        raise ValidationError("empty ground truth: nothing to evaluate")
    total_gt = sum(len(f.boxes) for f, _ in pairs)
    if total_gt == 0:
        raise ValidationError("empty ground truth: no annotated boxes")
    if classes is None:
        classes = sorted({b.category for f, _ in pairs for b in f.boxes})

    npos = {cls: 0 for cls in classes}
    for frame, _ in pairs:
        for b in frame.boxes:
            if b.category in npos:
                npos[b.category] += 1

    per_class_ap: dict[tuple[str, float], float] = {}
    for cls in classes:
        if npos[cls] == 0:
            continue  # AP undefined; class excluded from the mean
        for thr in thresholds:
            events: list[tuple[float, bool]] = []
            for frame, preds in pairs:
                tps, fps, _ = match_boxes(frame.boxes, preds, cls, thr)
                events.extend((p.score, True) for _, p in tps)
                events.extend((p.score, False) for p in fps)
            per_class_ap[(cls, thr)] = compute_ap(events, npos[cls])

    # TP errors and counts always use the 2 m matching, independent of the
    # AP threshold set.
    tp_pairs_2m: list[tuple[Box3D, Box3D]] = []
    counts = {"tp": 0, "fp": 0, "fn": 0}
    for cls in classes:
        if npos[cls] == 0:
            continue
        for frame, preds in pairs:
            tps, fps, fns = match_boxes(frame.boxes, preds, cls, TP_ERROR_THRESHOLD_M)
            tp_pairs_2m.extend(tps)
            counts["tp"] += len(tps)
            counts["fp"] += len(fps)
            counts["fn"] += len(fns)

    if not per_class_ap:
        raise ValidationError("empty ground truth: no class has annotations")
    map_s = sum(per_class_ap.values()) / len(per_class_ap)
    ate_s, ase_s, aoe_s, aae_s = compute_tp_errors(tp_pairs_2m)
    if offline_outputs is not None:
        gt_for_ave = gt_frames_for_ave if gt_frames_for_ave is not None else [f for f, _ in pairs]
        ave = compute_ave_offline(offline_outputs, gt_for_ave, classes)
    else:
        ave = 1.0
    nds = compute_nds_s(map_s, ate_s, ase_s, aoe_s, ave, aae_s)
    return MetricReport(
        per_class_ap=per_class_ap,
        map_s=map_s,
        ate_s=ate_s,
        ase_s=ase_s,
        aoe_s=aoe_s,
        aae_s=aae_s,
        ave_offline=ave,
        nds_s=nds,
        counts=counts,
        metadata=metadata or {},
    )


def evaluate_streaming(
    gt_frames: Sequence[FrameAnnotations],
    stream: PredictionStream,
    classes: Sequence[str] | None = None,
    thresholds: Sequence[float] = DISTANCE_THRESHOLDS_M,
    offline_outputs: Mapping[int, FrameDetections] | None = None,
    predictions_fn: PredictionsFn | None = None,
    metadata: dict | None = None,
) -> MetricReport:
    """Score a prediction stream against ground truth at every input timestamp."""
    if not gt_frames:
        raise ValidationError("empty ground truth: no frames")
    pairs = collect_pairs(gt_frames, stream, predictions_fn)
    return evaluate_pairs(
        pairs,
        classes=classes,
        thresholds=thresholds,
        offline_outputs=offline_outputs,
        gt_frames_for_ave=gt_frames,
        metadata=metadata,
    )
