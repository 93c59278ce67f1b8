"""
Within-class and between-class variance of instance features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from torchvision.ops import box_iou

from datagen.sample import DetectionSample
from detector.backbone import image_to_tensor
from detector.detector import TwoStageDetector

LabelledFeature = Tuple[np.ndarray, int]


@dataclass
class VarianceReport:
    sigma_w2: float
    sigma_b2: float
    counts: Dict[int, int]

    @property
    def sigma_total2(self) -> float:
        return self.sigma_w2 + self.sigma_b2

    def to_dict(self) -> dict:
        return {
            "sigma_w2": self.sigma_w2,
            "sigma_b2": self.sigma_b2,
            "counts": {str(c): n for c, n in sorted(self.counts.items())},
        }


def class_variance(
    features: Sequence[LabelledFeature], per_class_cap: int = 200, seed: int = 0
) -> VarianceReport:
    """Otsu-style decomposition of the mean squared distance to the global mean.

    Classes with more than `per_class_cap` members are subsampled with a
    generator seeded by `seed`.
    """
    by_class: Dict[int, List[np.ndarray]] = {}
    for vector, class_id in features:
        by_class.setdefault(int(class_id), []).append(np.asarray(vector, dtype=np.float64).ravel())
    if len(by_class) < 2:
        raise ValueError("between-class variance undefined: need at least 2 classes")

    rng = np.random.default_rng(seed)
    groups: Dict[int, np.ndarray] = {}
    for c in sorted(by_class):
        x = np.stack(by_class[c])
        if len(x) > per_class_cap:
            x = x[np.sort(rng.choice(len(x), size=per_class_cap, replace=False))]
        groups[c] = x

    total = sum(len(x) for x in groups.values())
    mu = np.concatenate(list(groups.values())).mean(axis=0)
    sigma_w2 = 0.0
    sigma_b2 = 0.0
    for x in groups.values():
        mu_c = x.mean(axis=0)
        weight = len(x) / total
        sigma_w2 += weight * float(np.mean(np.sum((x - mu_c) ** 2, axis=1)))
        sigma_b2 += weight * float(np.sum((mu_c - mu) ** 2))
    return VarianceReport(
        sigma_w2=sigma_w2, sigma_b2=sigma_b2, counts={c: len(x) for c, x in groups.items()}
    )


@torch.no_grad()
def collect_instance_features(
    detector: TwoStageDetector, samples: Sequence[DetectionSample], iou_threshold: float = 0.5
) -> List[LabelledFeature]:
    """K-dim features of proposals matched to a ground-truth object, with its class."""
    was_training = detector.training
    detector.eval()
    out_features: List[LabelledFeature] = []
    try:
        for sample in samples:
            labels = sample.evaluation_labels()
            out = detector(image_to_tensor(sample.image).to(detector.anchors.dtype))
            if out.num_proposals == 0 or not labels:
                continue
            gt = torch.tensor([label.box for label in labels], dtype=out.proposals.boxes.dtype)
            best_iou, best_gt = box_iou(out.proposals.boxes, gt).max(dim=1)
            for k in torch.nonzero(best_iou >= iou_threshold).flatten().tolist():
                vector = out.instance_features[k].cpu().numpy().astype(np.float64)
                out_features.append((vector, labels[int(best_gt[k])].class_id))
    finally:
        detector.train(was_training)
    return out_features
