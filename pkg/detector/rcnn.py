from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn

from detector.box_ops import clip_boxes, decode
from detector.config import DetectorConfig


@dataclass
class DetectionSet:
    """Second-stage output for the pooled rows of one image.

    class_dist is (P, C + 1) with column 0 the background; refined_boxes are
    the proposal boxes moved by the class-agnostic deltas and clipped.
    """

    class_logits: torch.Tensor
    class_dist: torch.Tensor
    box_deltas: torch.Tensor
    refined_boxes: torch.Tensor
    source_boxes: torch.Tensor

    def __len__(self) -> int:
        return int(self.class_dist.shape[0])


class InstanceHead(nn.Module):
    """Flattened M x M x D pooled features -> K-dim instance features."""

    def __init__(self, cfg: DetectorConfig) -> None:
        super().__init__()
        self.fc = nn.Linear(cfg.roi_size * cfg.roi_size * cfg.channels, cfg.instance_dim)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.fc(pooled.flatten(start_dim=1)))


class RCNNHead(nn.Module):
    def __init__(self, cfg: DetectorConfig) -> None:
        super().__init__()
        self.classifier = nn.Linear(cfg.instance_dim, cfg.num_classes + 1)
        self.regressor = nn.Linear(cfg.instance_dim, 4)
        for layer in (self.classifier, self.regressor):
            nn.init.normal_(layer.weight, std=cfg.head_init_std)
            nn.init.zeros_(layer.bias)

    def forward(
        self, instance_features: torch.Tensor, boxes: torch.Tensor, image_size: Tuple[int, int]
    ) -> DetectionSet:
        logits = self.classifier(instance_features)
        deltas = self.regressor(instance_features)
        refined = clip_boxes(decode(boxes.to(deltas.dtype), deltas.detach()), image_size)
        return DetectionSet(
            class_logits=logits,
            class_dist=torch.softmax(logits, dim=1),
            box_deltas=deltas,
            refined_boxes=refined,
            source_boxes=boxes,
        )
