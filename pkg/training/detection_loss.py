"""
Supervised detection loss: RPN objectness and box terms plus RCNN
classification and box refinement terms, Faster R-CNN style.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn.functional as F
from torchvision.ops import box_iou

from common.config_reader import ConfigError, ConfigReader
from datagen.sample import BoxLabel
from detector.box_ops import encode
from detector.rcnn import DetectionSet
from detector.rpn import ProposalMap


class MissingLabelsError(ValueError):
    def __init__(self) -> None:
        super().__init__("detection loss requires source labels")


@dataclass(frozen=True)
class SamplingConfig:
    rpn_batch: int = 64
    rpn_positive_fraction: float = 0.5
    rpn_pos_iou: float = 0.5
    rpn_neg_iou: float = 0.3
    rcnn_batch: int = 64
    rcnn_fg_fraction: float = 0.25
    rcnn_fg_iou: float = 0.5
    smooth_l1_beta: float = 1.0

    def __post_init__(self) -> None:
        if self.rpn_batch < 2 or self.rcnn_batch < 1:
            raise ConfigError("sampling batch sizes too small")
        if not 0.0 < self.rpn_positive_fraction <= 1.0 or not 0.0 < self.rcnn_fg_fraction <= 1.0:
            raise ConfigError("sampling fractions must be in (0, 1]")
        if not 0.0 <= self.rpn_neg_iou <= self.rpn_pos_iou <= 1.0:
            raise ConfigError("need 0 <= rpn_neg_iou <= rpn_pos_iou <= 1")

    @staticmethod
    def from_reader(reader: ConfigReader) -> SamplingConfig:
        d = SamplingConfig()
        return SamplingConfig(
            rpn_batch=reader.get_config_def("rpn_batch", int, d.rpn_batch),
            rpn_positive_fraction=reader.get_config_def(
                "rpn_positive_fraction", float, d.rpn_positive_fraction
            ),
            rpn_pos_iou=reader.get_config_def("rpn_pos_iou", float, d.rpn_pos_iou),
            rpn_neg_iou=reader.get_config_def("rpn_neg_iou", float, d.rpn_neg_iou),
            rcnn_batch=reader.get_config_def("rcnn_batch", int, d.rcnn_batch),
            rcnn_fg_fraction=reader.get_config_def("rcnn_fg_fraction", float, d.rcnn_fg_fraction),
            rcnn_fg_iou=reader.get_config_def("rcnn_fg_iou", float, d.rcnn_fg_iou),
            smooth_l1_beta=reader.get_config_def("smooth_l1_beta", float, d.smooth_l1_beta),
        )


@dataclass
class DetectionLoss:
    rpn_cls: torch.Tensor
    rpn_reg: torch.Tensor
    rcnn_cls: torch.Tensor
    rcnn_reg: torch.Tensor

    @property
    def rpn(self) -> torch.Tensor:
        return self.rpn_cls + self.rpn_reg

    @property
    def rcnn(self) -> torch.Tensor:
        return self.rcnn_cls + self.rcnn_reg

    @property
    def total(self) -> torch.Tensor:
        return self.rpn + self.rcnn


def labels_to_tensors(
    labels: List[BoxLabel], dtype: torch.dtype = torch.float32
) -> Tuple[torch.Tensor, torch.Tensor]:
    boxes = torch.tensor([label.box for label in labels], dtype=dtype).reshape(-1, 4)
    classes = torch.tensor([label.class_id for label in labels], dtype=torch.long)
    return boxes, classes


def _subsample(index: torch.Tensor, cap: int, generator: Optional[torch.Generator]) -> torch.Tensor:
    """At most `cap` entries of `index`, chosen at random, kept in index order."""
    if index.numel() <= cap:
        return index
    pick = torch.randperm(index.numel(), generator=generator)[:cap]
    return index[pick].sort().values


def match_anchors(
    anchors: torch.Tensor, gt_boxes: torch.Tensor, pos_iou: float, neg_iou: float
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Label anchors 1 (positive), 0 (negative) or -1 (ignored).

    Positives have IoU >= pos_iou with some GT, plus the best anchor of
    each GT. Negatives have IoU < neg_iou with every GT. Also returns the
    index of each anchor's best GT.
    """
    labels = torch.full((anchors.shape[0],), -1, dtype=torch.long)
    if gt_boxes.shape[0] == 0:
        labels.fill_(0)
        return labels, torch.zeros_like(labels)

    iou = box_iou(anchors, gt_boxes.to(anchors.dtype))
    best_iou, best_gt = iou.max(dim=1)
    labels[best_iou < neg_iou] = 0
    labels[best_iou >= pos_iou] = 1

    best_anchor = iou.argmax(dim=0)
    labels[best_anchor] = 1
    best_gt[best_anchor] = torch.arange(gt_boxes.shape[0])
    return labels, best_gt


def rpn_loss(
    pm: ProposalMap,
    anchors: torch.Tensor,
    gt_boxes: torch.Tensor,
    sampling: SamplingConfig,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    flat_anchors = anchors.reshape(-1, 4).to(pm.objectness.dtype)
    objectness = pm.objectness.reshape(-1)
    deltas = pm.box_deltas.reshape(-1, 4)

    labels, matched = match_anchors(flat_anchors, gt_boxes, sampling.rpn_pos_iou, sampling.rpn_neg_iou)

    max_pos = int(sampling.rpn_batch * sampling.rpn_positive_fraction)
    pos = _subsample(torch.nonzero(labels == 1).flatten(), max_pos, generator)
    neg_cap = pos.numel() if pos.numel() > 0 else sampling.rpn_batch - max_pos
    neg = _subsample(torch.nonzero(labels == 0).flatten(), neg_cap, generator)

    sampled = torch.cat([pos, neg])
    num_sampled = max(1, sampled.numel())
    targets = (labels[sampled] == 1).to(objectness.dtype)
    cls = F.binary_cross_entropy(objectness[sampled], targets, reduction="sum") / num_sampled

    if pos.numel() == 0:
        return cls, deltas.sum() * 0.0
    reg_targets = encode(flat_anchors[pos], gt_boxes[matched[pos]].to(deltas.dtype))
    reg = F.smooth_l1_loss(
        deltas[pos], reg_targets, beta=sampling.smooth_l1_beta, reduction="sum"
    ) / num_sampled
    return cls, reg


def rcnn_loss(
    detections: DetectionSet,
    gt_boxes: torch.Tensor,
    gt_classes: torch.Tensor,
    sampling: SamplingConfig,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    rois = detections.source_boxes.to(detections.class_logits.dtype)
    if rois.shape[0] == 0:
        zero = detections.class_logits.sum() * 0.0
        return zero, zero

    if gt_boxes.shape[0] == 0:
        classes = torch.zeros(rois.shape[0], dtype=torch.long)
        matched = classes
    else:
        best_iou, matched = box_iou(rois, gt_boxes.to(rois.dtype)).max(dim=1)
        classes = torch.where(
            best_iou >= sampling.rcnn_fg_iou, gt_classes[matched], torch.zeros_like(matched)
        )

    max_fg = max(1, int(round(sampling.rcnn_batch * sampling.rcnn_fg_fraction)))
    fg = _subsample(torch.nonzero(classes > 0).flatten(), max_fg, generator)
    bg = _subsample(
        torch.nonzero(classes == 0).flatten(), sampling.rcnn_batch - fg.numel(), generator
    )
    sampled = torch.cat([fg, bg])
    num_sampled = max(1, sampled.numel())

    cls = F.cross_entropy(
        detections.class_logits[sampled], classes[sampled], reduction="sum"
    ) / num_sampled

    if fg.numel() == 0:
        return cls, detections.box_deltas.sum() * 0.0
    reg_targets = encode(rois[fg], gt_boxes[matched[fg]].to(rois.dtype))
    reg = F.smooth_l1_loss(
        detections.box_deltas[fg], reg_targets, beta=sampling.smooth_l1_beta, reduction="sum"
    ) / num_sampled
    return cls, reg


def detection_loss(
    pm: ProposalMap,
    anchors: torch.Tensor,
    detections: DetectionSet,
    labels: Optional[List[BoxLabel]],
    sampling: SamplingConfig = SamplingConfig(),
    generator: Optional[torch.Generator] = None,
) -> DetectionLoss:
    """Supervised loss of one labelled image.

    `detections` are the RCNN rows of that image, usually the proposals
    followed by the ground-truth boxes themselves.
    """
    if labels is None:
        raise MissingLabelsError()
    gt_boxes, gt_classes = labels_to_tensors(labels, pm.objectness.dtype)
    rpn_cls, rpn_reg = rpn_loss(pm, anchors, gt_boxes, sampling, generator)
    rcnn_cls, rcnn_reg = rcnn_loss(detections, gt_boxes, gt_classes, sampling, generator)
    return DetectionLoss(rpn_cls=rpn_cls, rpn_reg=rpn_reg, rcnn_cls=rcnn_cls, rcnn_reg=rcnn_reg)
