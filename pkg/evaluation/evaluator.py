"""
Dataset-level evaluation: per-class AP, mAP and TP/FP/FN counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from common.logger import get_logger
from datagen.sample import BoxLabel, DetectionSample
from detector.detector import ScoredBox
from evaluation.metrics import ap_from_flags, box_area, greedy_match, precision_recall

COLLECTION_THRESHOLD = 0.05


class Detects(Protocol):
    def detect(self, image: np.ndarray, score_threshold: Optional[float] = None) -> List[ScoredBox]:
        ...


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt: int = 0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "gt": self.gt}


@dataclass
class EvalResult:
    per_class_ap: Dict[int, Optional[float]]
    map: float
    counts: Dict[int, ClassCounts]
    num_images: int
    iou_threshold: float
    score_threshold: float
    curves: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "per_class_ap": {str(c): ap for c, ap in sorted(self.per_class_ap.items())},
            "mAP": self.map,
            "counts": {str(c): n.to_dict() for c, n in sorted(self.counts.items())},
            "num_images": self.num_images,
            "iou_threshold": self.iou_threshold,
            "score_threshold": self.score_threshold,
        }


def match_image(
    detections: Sequence[ScoredBox], gt: Sequence[BoxLabel], class_id: int, iou_threshold: float
) -> Tuple[List[Tuple[ScoredBox, bool]], List[int]]:
    """Match one class of one image.

    Returns (detection, is_tp) pairs in ranking order and the indices (into
    the full `gt` list) of the matched ground truth.
    """
    dets = [d for d in detections if d.class_id == class_id]
    gt_index = [i for i, label in enumerate(gt) if label.class_id == class_id]
    matches = greedy_match(
        [d.box for d in dets], [d.score for d in dets], [gt[i].box for i in gt_index], iou_threshold
    )
    flagged = [(dets[d], g is not None) for d, g in matches]
    matched = [gt_index[g] for _, g in matches if g is not None]
    return flagged, matched


def matched_gt(
    detections: Sequence[ScoredBox], gt: Sequence[BoxLabel], num_classes: int, iou_threshold: float
) -> List[int]:
    """Indices of every ground-truth object some detection matched, all classes."""
    matched: List[int] = []
    for c in range(1, num_classes + 1):
        matched.extend(match_image(detections, gt, c, iou_threshold)[1])
    return sorted(matched)


def evaluate_detections(
    detections: Sequence[Sequence[ScoredBox]],
    ground_truth: Sequence[Sequence[BoxLabel]],
    num_classes: int,
    iou_threshold: float = 0.5,
    score_threshold: float = COLLECTION_THRESHOLD,
) -> EvalResult:
    if len(detections) != len(ground_truth):
        raise ValueError(f"{len(detections)} detection lists for {len(ground_truth)} images")

    per_class_ap: Dict[int, Optional[float]] = {}
    counts: Dict[int, ClassCounts] = {}
    curves: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    for c in range(1, num_classes + 1):
        ranked: List[Tuple[float, float, int, int, bool]] = []
        n = ClassCounts()
        for image_idx, (dets, gt) in enumerate(zip(detections, ground_truth)):
            kept = [d for d in dets if d.score >= score_threshold]
            flagged, matched = match_image(kept, gt, c, iou_threshold)
            for order, (det, is_tp) in enumerate(flagged):
                ranked.append((-det.score, -box_area(det.box), image_idx, order, is_tp))
            n.gt += sum(1 for label in gt if label.class_id == c)
            n.tp += len(matched)
            n.fp += len(flagged) - len(matched)
        n.fn = n.gt - n.tp
        ranked.sort(key=lambda r: r[:4])
        flags = [r[4] for r in ranked]

        per_class_ap[c] = ap_from_flags(flags, n.gt)
        counts[c] = n
        if flags and n.gt > 0:
            precision, recall = precision_recall(flags, n.gt)
            curves[c] = (recall, precision)

    present = [ap for c, ap in per_class_ap.items() if counts[c].gt > 0 and ap is not None]
    mean_ap = float(np.mean(present)) if present else 0.0
    return EvalResult(
        per_class_ap=per_class_ap,
        map=mean_ap,
        counts=counts,
        num_images=len(ground_truth),
        iou_threshold=iou_threshold,
        score_threshold=score_threshold,
        curves=curves,
    )


def collect_detections(
    model: Detects, samples: Sequence[DetectionSample], score_threshold: float = COLLECTION_THRESHOLD,
    progress: bool = False,
) -> List[List[ScoredBox]]:
    items = tqdm(samples, desc="detect", leave=False) if progress else samples
    return [model.detect(s.image, score_threshold=score_threshold) for s in items]


def evaluate(
    model: Detects,
    eval_set: Sequence[DetectionSample],
    num_classes: int,
    iou_threshold: float = 0.5,
    score_threshold: float = COLLECTION_THRESHOLD,
    progress: bool = False,
) -> Tuple[EvalResult, List[List[ScoredBox]]]:
    """Detect on every sample and score against its evaluation labels.

    This is the only consumer of held-out target labels.
    """
    detections = collect_detections(model, eval_set, score_threshold, progress)
    ground_truth = [s.evaluation_labels() for s in eval_set]
    result = evaluate_detections(detections, ground_truth, num_classes, iou_threshold, score_threshold)
    get_logger().info(
        f"Evaluated {result.num_images} images: mAP {result.map:.4f} "
        + " ".join(f"AP{c}={ap if ap is None else round(ap, 4)}" for c, ap in result.per_class_ap.items())
    )
    return result, detections
