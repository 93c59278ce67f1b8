"""
Compares which ground-truth objects a source-only model and an adapted model find.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence, Set, Tuple

from datagen.sample import BoxLabel
from detector.detector import ScoredBox
from evaluation.evaluator import matched_gt

GtKey = Tuple[int, int]  # (image index, gt index)


@dataclass
class ErrorAnalysis:
    """recovered: found by adapted, missed by source-only. induced: the reverse."""

    recovered_tp_rate: float
    induced_fn_rate: float
    recovered_count: int
    induced_count: int
    both_matched: int
    source_matched: int
    adapted_matched: int
    source_missed: int
    total_gt: int
    recovered_undefined: bool
    induced_undefined: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _matched_keys(
    detections: Sequence[Sequence[ScoredBox]],
    gt: Sequence[Sequence[BoxLabel]],
    num_classes: int,
    iou_threshold: float,
    score_threshold: float,
) -> Set[GtKey]:
    keys: Set[GtKey] = set()
    for image_idx, (dets, labels) in enumerate(zip(detections, gt)):
        kept = [d for d in dets if d.score >= score_threshold]
        keys.update((image_idx, g) for g in matched_gt(kept, labels, num_classes, iou_threshold))
    return keys


def error_analysis(
    source_only_dets: Sequence[Sequence[ScoredBox]],
    adapted_dets: Sequence[Sequence[ScoredBox]],
    gt: Sequence[Sequence[BoxLabel]],
    num_classes: int,
    iou_threshold: float = 0.5,
    score_threshold: float = 0.5,
) -> ErrorAnalysis:
    """Set algebra over matched (image, gt) pairs; both sides use the evaluator's matcher.

    A zero denominator yields a rate of 0 and sets the matching *_undefined flag.
    """
    if len(source_only_dets) != len(gt) or len(adapted_dets) != len(gt):
        raise ValueError(
            f"detections cover {len(source_only_dets)} and {len(adapted_dets)} images, "
            f"ground truth {len(gt)}"
        )

    everything = {(i, g) for i, labels in enumerate(gt) for g in range(len(labels))}
    src = _matched_keys(source_only_dets, gt, num_classes, iou_threshold, score_threshold)
    ada = _matched_keys(adapted_dets, gt, num_classes, iou_threshold, score_threshold)

    recovered = ada - src
    induced = src - ada
    src_missed = everything - src

    return ErrorAnalysis(
        recovered_tp_rate=len(recovered) / len(src_missed) if src_missed else 0.0,
        induced_fn_rate=len(induced) / len(src) if src else 0.0,
        recovered_count=len(recovered),
        induced_count=len(induced),
        both_matched=len(src & ada),
        source_matched=len(src),
        adapted_matched=len(ada),
        source_missed=len(src_missed),
        total_gt=len(everything),
        recovered_undefined=not src_missed,
        induced_undefined=not src,
    )
