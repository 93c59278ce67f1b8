"""
Region proposal head and proposal selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn as nn
from torchvision.ops import nms

from detector.box_ops import clip_boxes, decode, valid_boxes
from detector.config import DetectorConfig

# Probability clamp applied before any log.
EPS = 1e-7


@dataclass
class ProposalMap:
    """RPN output for one image.

    objectness is (U, V, R) in (EPS, 1 - EPS); box_deltas is (U, V, R, 4).
    """

    objectness: torch.Tensor
    box_deltas: torch.Tensor

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        u, v, r = self.objectness.shape
        return int(u), int(v), int(r)


@dataclass(frozen=True)
class Proposal:
    box: Tuple[float, float, float, float]
    objectness: float
    grid_origin: Tuple[int, int, int]  # (u, v, r)


@dataclass
class ProposalSet:
    """Selected proposals of one image, ordered by objectness descending."""

    boxes: torch.Tensor  # (P, 4)
    scores: torch.Tensor  # (P,)
    grid_origin: torch.Tensor  # (P, 3) long

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def to_list(self) -> List[Proposal]:
        return [
            Proposal(
                box=tuple(float(c) for c in self.boxes[i].tolist()),
                objectness=float(self.scores[i]),
                grid_origin=tuple(int(c) for c in self.grid_origin[i].tolist()),
            )
            for i in range(len(self))
        ]

    @staticmethod
    def empty(dtype: torch.dtype = torch.float32) -> ProposalSet:
        return ProposalSet(
            boxes=torch.zeros((0, 4), dtype=dtype),
            scores=torch.zeros((0,), dtype=dtype),
            grid_origin=torch.zeros((0, 3), dtype=torch.long),
        )


class RPNHead(nn.Module):
    def __init__(self, cfg: DetectorConfig) -> None:
        super().__init__()
        d, r = cfg.channels, cfg.num_anchors
        self.conv = nn.Conv2d(d, d, kernel_size=3, padding=1)
        self.objectness = nn.Conv2d(d, r, kernel_size=1)
        self.deltas = nn.Conv2d(d, r * 4, kernel_size=1)
        for layer in (self.conv, self.objectness, self.deltas):
            nn.init.normal_(layer.weight, std=cfg.head_init_std)
            nn.init.zeros_(layer.bias)

    def forward(self, features: torch.Tensor) -> ProposalMap:
        """(1, D, U, V) features -> ProposalMap of that image."""
        x = torch.relu(self.conv(features))
        logits = self.objectness(x)[0]  # (R, U, V)
        deltas = self.deltas(x)[0]  # (4R, U, V)
        r, u, v = logits.shape
        objectness = torch.sigmoid(logits).clamp(EPS, 1.0 - EPS).permute(1, 2, 0)
        box_deltas = deltas.view(r, 4, u, v).permute(2, 3, 0, 1)
        return ProposalMap(objectness=objectness, box_deltas=box_deltas)


def select_proposals(
    pm: ProposalMap,
    anchors: torch.Tensor,
    top_k: int,
    nms_iou: float,
    image_size: Tuple[int, int],
    min_size: float = 0.0,
) -> ProposalSet:
    """Decode, clip, drop degenerate boxes, NMS and keep the top_k.

    Boxes are detached: proposals are treated as fixed regions downstream.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if not 0.0 < nms_iou <= 1.0:
        raise ValueError(f"nms_iou must be in (0, 1], got {nms_iou}")

    u, v, r = pm.grid_shape
    with torch.no_grad():
        scores = pm.objectness.reshape(-1).detach()
        boxes = decode(anchors.reshape(-1, 4).to(scores.dtype), pm.box_deltas.reshape(-1, 4).detach())
        boxes = clip_boxes(boxes, image_size)

        keep_valid = valid_boxes(boxes, min_size)
        index = torch.arange(u * v * r)[keep_valid]
        if index.numel() == 0:
            return ProposalSet.empty(scores.dtype)

        kept = nms(boxes[index], scores[index], nms_iou)[:top_k]
        index = index[kept]

        origin = torch.stack([index // (v * r), (index // r) % v, index % r], dim=1)
        return ProposalSet(boxes=boxes[index], scores=scores[index], grid_origin=origin)
