"""Video-level mask AP with base/novel breakdown, plus identity-tracking metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rle
from .errors import ContractError, ShapeError

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
NUM_RECALL_POINTS = 101
FRAME_MATCH_IOU = 0.5


@dataclass
class TrackMasks:
    """One identity in one video: category, score and a T x h x w boolean stack."""

    video_id: int
    track_id: int
    category: int
    masks: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        self.masks = np.asarray(self.masks).astype(bool)
        if self.masks.ndim != 3:
            raise ShapeError("track masks must be T x h x w")


def st_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersections and unions summed over frames, then divided; 0 when both are empty."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"st_iou needs equal shapes, got {pred.shape} and {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(pred, gt).sum() / union)


def interpolated_ap(tp, num_gt: int) -> Fraction:
    """101-point interpolated area under the PR curve, in exact rational arithmetic.

    ``tp`` flags the predictions (already sorted by descending score) that
    matched a ground truth.  Exact arithmetic makes the result the correctly
    rounded value of the hand-computable fraction.
    """
    if num_gt <= 0:
        raise ContractError("AP is undefined without ground truth")
    precision, recall, hits = [], [], 0
    for k, flag in enumerate(tp, start=1):
        hits += int(flag)
        precision.append(Fraction(hits, k))
        recall.append(Fraction(hits, num_gt))
    # precision envelope: best precision at any recall >= r
    for k in range(len(precision) - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    total, j = Fraction(0), 0
    for i in range(NUM_RECALL_POINTS):
        r = Fraction(i, NUM_RECALL_POINTS - 1)
        while j < len(recall) and recall[j] < r:
            j += 1
        if j < len(recall):
            total += precision[j]
    return total / NUM_RECALL_POINTS


def _rank(preds: list[TrackMasks]) -> list[TrackMasks]:
    # stable: ties keep (video, track) order
    return sorted(preds, key=lambda p: -p.confidence)


def average_precision(preds: list[TrackMasks], gts: list[TrackMasks],
                      thresholds=IOU_THRESHOLDS, exact: bool = False):
    """AP of one category, averaged over IoU thresholds.

    Predictions are visited in descending confidence and each takes the
    still-unmatched ground truth of the same video with the highest IoU,
    provided that IoU reaches the threshold.
    """
    if not gts:
        raise ContractError("AP is undefined without ground truth")
    ranked = _rank(preds)
    by_video: dict[int, list[int]] = {}
    for gi, g in enumerate(gts):
        by_video.setdefault(g.video_id, []).append(gi)
    ious = []
    for p in ranked:
        cands = by_video.get(p.video_id, [])
        ious.append({gi: st_iou(p.masks, gts[gi].masks) for gi in cands})
    aps = []
    for thr in thresholds:
        taken: set[int] = set()
        tp = np.zeros(len(ranked))
        for k, row in enumerate(ious):
            best, best_iou = None, -1.0
            for gi, v in row.items():
                if gi not in taken and v >= thr and v > best_iou:
                    best, best_iou = gi, v
            if best is not None:
                taken.add(best)
                tp[k] = 1.0
        aps.append(interpolated_ap(tp, len(gts)))
    mean = sum(aps, Fraction(0)) / len(aps)
    return mean if exact else float(mean)


def frame_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def id_sequence(gt: TrackMasks, preds: list[TrackMasks]) -> list[int]:
    """Per frame, the id of the prediction overlapping the gt with IoU > 0.5 (best one, lowest id on ties)."""
    seq = []
    for t in range(gt.masks.shape[0]):
        best, best_iou = None, FRAME_MATCH_IOU
        for p in sorted(preds, key=lambda p: p.track_id):
            v = frame_iou(p.masks[t], gt.masks[t])
            if v > best_iou:
                best, best_iou = p.track_id, v
        if best is not None:
            seq.append(best)
    return seq


def id_metrics(preds: list[TrackMasks], gts: list[TrackMasks]) -> tuple[int, float]:
    """(id_switches, id_consistency) summed / averaged over all gt tracks.

    Predictions are only compared to ground truth of the same video,
    regardless of category.
    """
    switches, consistent = 0, 0
    for g in gts:
        seq = id_sequence(g, [p for p in preds if p.video_id == g.video_id])
        switches += sum(1 for a, b in zip(seq, seq[1:]) if a != b)
        consistent += int(len(seq) > 0 and len(set(seq)) == 1)
    return switches, (consistent / len(gts) if gts else 1.0)


def tracks_from_result(doc: dict) -> list[TrackMasks]:
    """Decode a VideoResult document; frames a track does not cover are empty."""
    T, (h, w) = doc["num_frames"], doc["mask_size"]
    out = []
    for track in doc["tracks"]:
        masks = np.zeros((T, h, w), dtype=bool)
        for frame in track["frames"]:
            masks[frame["frame_idx"]] = rle.decode(frame["rle"], (h, w))
        out.append(TrackMasks(doc["video_id"], track["id"], track["category"], masks, track["confidence"]))
    return out


@dataclass
class EvalReport:
    mAP: float | None
    mAP_b: float | None
    mAP_n: float | None
    per_category: dict  # category id -> AP, only categories with ground truth
    id_switches: int
    id_consistency: float
    num_videos: int
    category_names: list = field(default_factory=list)
    novel_flags: list = field(default_factory=list)
    num_gt: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mAP": self.mAP, "mAP_b": self.mAP_b, "mAP_n": self.mAP_n,
            "per_category": {str(k): v for k, v in sorted(self.per_category.items())},
            "id_switches": int(self.id_switches),
            "id_consistency": float(self.id_consistency),
            "num_videos": int(self.num_videos),
            "config": self.config,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category_id", "name", "split", "num_gt", "ap"])
        for k in sorted(self.per_category):
            name = self.category_names[k] if k < len(self.category_names) else str(k)
            split = "novel" if k < len(self.novel_flags) and self.novel_flags[k] else "base"
            writer.writerow([k, name, split, self.num_gt.get(k, 0), repr(float(self.per_category[k]))])
        return buf.getvalue()


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate(preds: list[TrackMasks], gts: list[TrackMasks], novel_flags, category_names=None,
             config: dict | None = None) -> EvalReport:
    novel_flags = [bool(f) for f in novel_flags]
    K = len(novel_flags)
    for t in preds + gts:
        if not 0 <= t.category < K:
            raise ContractError(f"category {t.category} outside vocabulary of size {K}")
    per_category, num_gt = {}, {}
    for k in range(K):
        g = [t for t in gts if t.category == k]
        if not g:
            continue
        num_gt[k] = len(g)
        per_category[k] = average_precision([p for p in preds if p.category == k], g)
    base = [ap for k, ap in per_category.items() if not novel_flags[k]]
    novel = [ap for k, ap in per_category.items() if novel_flags[k]]
    switches, consistency = id_metrics(preds, gts)
    return EvalReport(_mean_or_none(list(per_category.values())), _mean_or_none(base), _mean_or_none(novel),
                      per_category, switches, consistency, len({t.video_id for t in gts}),
                      list(category_names or []), novel_flags, num_gt, dict(config or {}))


def ground_truth_tracks(video, stride: int) -> list[TrackMasks]:
    """Ground-truth tracks of a synthetic video at mask-head resolution."""
    coarse = video.coarse_masks(stride)
    return [TrackMasks(video.video_id, int(tid), int(c), coarse[i])
            for i, (tid, c) in enumerate(zip(video.track_ids, video.class_ids))]
