"""
Two-stage detector: backbone, RPN, ROI pooling, instance projection, RCNN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from torchvision.ops import batched_nms

from detector.backbone import Backbone, image_to_tensor
from detector.box_ops import generate_anchors, valid_boxes
from detector.config import DetectorConfig
from detector.rcnn import DetectionSet, InstanceHead, RCNNHead
from detector.roi_pool import roi_pool_many
from detector.rpn import ProposalMap, ProposalSet, RPNHead, select_proposals


class ScoredBox(NamedTuple):
    class_id: int
    score: float
    box: Tuple[float, float, float, float]


@dataclass
class DetectorOutput:
    """Everything one forward pass over one image produces.

    Rows of instance_features and detections are the selected proposals
    followed by any extra boxes passed in; the first num_proposals rows
    are always the RPN proposals.
    """

    features: torch.Tensor  # (D, U, V)
    proposal_map: ProposalMap
    proposals: ProposalSet
    roi_boxes: torch.Tensor  # (P + G, 4)
    instance_features: torch.Tensor  # (P + G, K)
    detections: DetectionSet

    @property
    def num_proposals(self) -> int:
        return len(self.proposals)


class TwoStageDetector(nn.Module):
    def __init__(self, cfg: DetectorConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.rpn = RPNHead(cfg)
        self.instance_head = InstanceHead(cfg)
        self.rcnn = RCNNHead(cfg)
        self.register_buffer(
            "anchors",
            generate_anchors(cfg.feature_size, cfg.stride, cfg.anchor_sizes),
            persistent=False,
        )

    def instance_features(self, features: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
        pooled = roi_pool_many(features, boxes, self.cfg.roi_size, self.cfg.stride)
        return self.instance_head(pooled)

    def forward(
        self,
        image: torch.Tensor,
        extra_boxes: Optional[torch.Tensor] = None,
        top_k: Optional[int] = None,
        nms_iou: Optional[float] = None,
    ) -> DetectorOutput:
        """Run both stages on a (1, 3, H, W) image.

        top_k and nms_iou default to the train or test selection parameters
        depending on the module mode.
        """
        if top_k is None:
            top_k = self.cfg.train_top_k if self.training else self.cfg.test_top_k
        if nms_iou is None:
            nms_iou = self.cfg.train_nms_iou if self.training else self.cfg.test_nms_iou

        features = self.backbone(image)
        proposal_map = self.rpn(features)
        proposals = select_proposals(
            proposal_map,
            self.anchors,
            top_k,
            nms_iou,
            self.cfg.image_size,
            self.cfg.min_proposal_size,
        )

        boxes = proposals.boxes.to(features.dtype)
        if extra_boxes is not None and extra_boxes.shape[0] > 0:
            boxes = torch.cat([boxes, extra_boxes.to(features.dtype)], dim=0)

        feature_grid = features[0]
        instance = self.instance_features(feature_grid, boxes)
        detections = self.rcnn(instance, boxes, self.cfg.image_size)
        return DetectorOutput(
            features=feature_grid,
            proposal_map=proposal_map,
            proposals=proposals,
            roi_boxes=boxes,
            instance_features=instance,
            detections=detections,
        )

    @torch.no_grad()
    def detect(
        self,
        image: np.ndarray,
        score_threshold: Optional[float] = None,
        nms_iou: Optional[float] = None,
    ) -> List[ScoredBox]:
        """Scored foreground detections of one (H, W, 3) image, best first."""
        if score_threshold is None:
            score_threshold = self.cfg.score_threshold
        if nms_iou is None:
            nms_iou = self.cfg.detect_nms_iou

        was_training = self.training
        self.eval()
        try:
            tensor = image_to_tensor(image).to(self.anchors.dtype)
            out = self.forward(tensor)
        finally:
            self.train(was_training)
        return postprocess(out.detections, score_threshold, nms_iou)


def postprocess(
    detections: DetectionSet, score_threshold: float, nms_iou: float
) -> List[ScoredBox]:
    """Per-class thresholding and NMS. Column 0 (background) is never emitted."""
    dist = detections.class_dist.detach()
    boxes = detections.refined_boxes.detach()
    if dist.shape[0] == 0:
        return []

    num_fg = dist.shape[1] - 1
    cand_boxes = boxes.unsqueeze(1).expand(-1, num_fg, 4).reshape(-1, 4)
    cand_scores = dist[:, 1:].reshape(-1)
    cand_labels = torch.arange(1, num_fg + 1).repeat(dist.shape[0])

    keep = (cand_scores >= score_threshold) & valid_boxes(cand_boxes)
    cand_boxes, cand_scores, cand_labels = cand_boxes[keep], cand_scores[keep], cand_labels[keep]
    if cand_scores.numel() == 0:
        return []

    kept = batched_nms(cand_boxes, cand_scores, cand_labels, nms_iou)
    return [
        ScoredBox(
            class_id=int(cand_labels[i]),
            score=float(cand_scores[i]),
            box=tuple(float(c) for c in cand_boxes[i].tolist()),
        )
        for i in kept
    ]
