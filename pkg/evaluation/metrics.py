"""
IoU, greedy one-to-one matching and all-points average precision.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

Box = Tuple[float, float, float, float]


def box_area(box: Sequence[float]) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union in continuous pixel coordinates."""
    for box in (a, b):
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ValueError(f"degenerate box {tuple(box)}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (box_area(a) + box_area(b) - inter)


def ranking(scores: Sequence[float], boxes: Sequence[Sequence[float]]) -> List[int]:
    """Indices by score descending, then area descending, then input order."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], -box_area(boxes[i]), i))


def greedy_match(
    det_boxes: Sequence[Sequence[float]],
    det_scores: Sequence[float],
    gt_boxes: Sequence[Sequence[float]],
    iou_threshold: float = 0.5,
) -> List[Tuple[int, Optional[int]]]:
    """Match detections to ground truth of one image and one class.

    Detections are visited in ranking order; each takes the unmatched GT
    with the highest IoU, provided that IoU reaches the threshold. Returns
    (detection index, matched GT index or None) in visiting order.
    """
    taken = [False] * len(gt_boxes)
    result: List[Tuple[int, Optional[int]]] = []
    for d in ranking(det_scores, det_boxes):
        best, best_iou = None, iou_threshold
        for g, gt in enumerate(gt_boxes):
            if taken[g]:
                continue
            overlap = iou(det_boxes[d], gt)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = g, overlap
        if best is not None:
            taken[best] = True
        result.append((d, best))
    return result


def precision_recall(tp_flags: Sequence[bool], num_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative precision and recall over ranked TP/FP flags."""
    flags = np.asarray(tp_flags, dtype=bool)
    tp = np.cumsum(flags).astype(np.float64)
    fp = np.cumsum(~flags).astype(np.float64)
    recall = tp / num_gt if num_gt > 0 else np.zeros_like(tp)
    precision = tp / np.maximum(tp + fp, 1.0)
    return precision, recall


def ap_from_flags(tp_flags: Sequence[bool], num_gt: int) -> Optional[float]:
    """All-points interpolated AP of ranked TP/FP flags.

    None when there is neither ground truth nor detection; 0 when only one
    side is empty.
    """
    if num_gt == 0:
        return None if len(tp_flags) == 0 else 0.0
    if len(tp_flags) == 0:
        return 0.0
    precision, recall = precision_recall(tp_flags, num_gt)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(
    det_boxes: Sequence[Sequence[float]],
    det_scores: Sequence[float],
    gt_boxes: Sequence[Sequence[float]],
    iou_threshold: float = 0.5,
) -> Optional[float]:
    """AP of one class on one image's worth of detections."""
    matches = greedy_match(det_boxes, det_scores, gt_boxes, iou_threshold)
    return ap_from_flags([g is not None for _, g in matches], len(gt_boxes))
