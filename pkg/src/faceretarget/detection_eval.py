"""Box overlap, non-maximum suppression and COCO-style average precision."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import InvalidInputError

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclasses.dataclass(frozen=True)
class EvalBox:
    x0: float
    y0: float
    x1: float
    y1: float
    score: float = 1.0
    image_id: int = 0

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidInputError(f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x, y) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalBox":
        return cls(float(d["x0"]), float(d["y0"]), float(d["x1"]), float(d["y1"]),
                   float(d.get("score", 1.0)), int(d.get("image_id", 0)))


def iou(a: EvalBox, b: EvalBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _by_score(boxes):
    # stable: ties keep input order
    return sorted(boxes, key=lambda b: -b.score)


def nms(boxes, iou_threshold: float = 0.45) -> list:
    """Greedy suppression; boxes from different images never suppress each other."""
    if not 0 <= iou_threshold <= 1:
        raise InvalidInputError("IoU threshold must lie in [0, 1]")
    kept = []
    for box in _by_score(boxes):
        if all(k.image_id != box.image_id or iou(k, box) <= iou_threshold for k in kept):
            kept.append(box)
    return kept


def match_detections(preds, gts, iou_threshold: float) -> np.ndarray:
    """True-positive flags for predictions in descending score order.

    Each prediction takes the unmatched ground truth (same image) with the
    highest IoU, provided that IoU reaches the threshold.
    """
    ordered = _by_score(preds)
    taken = [False] * len(gts)
    tp = np.zeros(len(ordered), dtype=bool)
    for i, p in enumerate(ordered):
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.image_id != p.image_id:
                continue
            o = iou(p, g)
            if o >= best_iou:
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
            tp[i] = True
    return tp


def precision_recall(tp: np.ndarray, n_gt: int) -> tuple:
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    return precision, recall


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """101-point interpolated area under the precision-recall curve."""
    if len(precision) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def ap_at(preds, gts, iou_threshold: float) -> float:
    if not gts:
        return float("nan")
    tp = match_detections(preds, gts, iou_threshold)
    return interpolated_ap(*precision_recall(tp, len(gts)))


def average_precision(preds, gts, iou_thresholds=COCO_THRESHOLDS) -> dict:
    """AP per IoU threshold plus ``AP`` (their mean), ``AP50`` and ``AP75``.

    With no ground-truth boxes every AP is NaN.
    """
    if any(not np.isfinite(p.score) for p in preds):
        raise InvalidInputError("prediction scores must be finite")
    per = {float(t): ap_at(preds, gts, float(t)) for t in iou_thresholds}
    return {
        "per_threshold": per,
        "AP": float(np.mean(list(per.values()))) if per else float("nan"),
        "AP50": per[0.5] if 0.5 in per else ap_at(preds, gts, 0.5),
        "AP75": per[0.75] if 0.75 in per else ap_at(preds, gts, 0.75),
    }


def filter_small_faces(preds, gts, image_width, image_height, min_frac: float = 0.02) -> tuple:
    """Drop ground truth smaller than ``min_frac`` of the image in either dimension.

    Predictions centered inside a dropped face and not overlapping any kept
    face at IoU >= 0.5 are dropped too, so they are neither hits nor misses.
    """
    kept, dropped = [], []
    for g in gts:
        small = g.width < min_frac * image_width or g.height < min_frac * image_height
        (dropped if small else kept).append(g)
    out = []
    for p in preds:
        cx, cy = (p.x0 + p.x1) / 2, (p.y0 + p.y1) / 2
        in_dropped = any(d.image_id == p.image_id and d.contains(cx, cy) for d in dropped)
        if in_dropped and not any(g.image_id == p.image_id and iou(p, g) >= 0.5 for g in kept):
            continue
        out.append(p)
    return out, kept
