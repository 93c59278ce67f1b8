"""
Entropy measures over RPN objectness and RCNN class distributions, in nats.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Sequence, Union

import torch

from detector.roi_pool import roi_pool, roi_pool_many
from detector.rpn import EPS, ProposalMap

Number = Union[float, torch.Tensor]


class InvalidDistributionError(ValueError):
    def __init__(self, detail: str = "") -> None:
        super().__init__(f"invalid distribution{': ' + detail if detail else ''}")


class EntropyReduction(Enum):
    """How a pooled M x M entropy patch becomes one scalar per proposal."""

    MEAN = "mean"
    MIN = "min"
    MAX = "max"

    def apply(self, patch: torch.Tensor) -> torch.Tensor:
        """Reduce the trailing (M, M) dims of `patch`."""
        flat = patch.flatten(start_dim=-2)
        if self == EntropyReduction.MEAN:
            return flat.mean(dim=-1)
        if self == EntropyReduction.MIN:
            return flat.min(dim=-1).values
        return flat.max(dim=-1).values


class DetectionEntropyClasses(Enum):
    """Range of the detection entropy sum: all C + 1 entries or foreground only."""

    ALL = "all"
    FOREGROUND = "foreground"


def binary_entropy(p: Number) -> Number:
    """-p ln p - (1 - p) ln(1 - p) with p clamped to [EPS, 1 - EPS]."""
    if isinstance(p, torch.Tensor):
        pc = p.clamp(EPS, 1.0 - EPS)
        q = 1.0 - pc
        return -(pc * torch.log(pc) + q * torch.log(q))
    pc = min(max(float(p), EPS), 1.0 - EPS)
    q = 1.0 - pc
    return -(pc * math.log(pc) + q * math.log(q))


def proposal_entropy_map(pm: Union[ProposalMap, torch.Tensor]) -> torch.Tensor:
    """(U, V) map of the lowest anchor entropy at each location."""
    objectness = pm.objectness if isinstance(pm, ProposalMap) else pm
    return binary_entropy(objectness).min(dim=-1).values


def categorical_entropy(dist: Union[Sequence[float], torch.Tensor], tol: float = 1e-6) -> torch.Tensor:
    """-sum d ln d over the last dim. Rows must lie on the simplex within tol."""
    d = dist if isinstance(dist, torch.Tensor) else torch.tensor(dist, dtype=torch.float64)
    if d.shape[-1] == 0:
        raise InvalidDistributionError("empty")
    if not torch.isfinite(d).all():
        raise InvalidDistributionError("non-finite entries")
    if (d < -tol).any():
        raise InvalidDistributionError("negative entries")
    sums = d.sum(dim=-1)
    if ((sums - 1.0).abs() > tol).any():
        raise InvalidDistributionError(f"sums to {sums.flatten()[0].item():.6g}")
    d = d.clamp(0.0, 1.0)
    return -(d * torch.log(d.clamp(min=EPS))).sum(dim=-1)


def detection_entropy(
    class_dist: torch.Tensor, classes: DetectionEntropyClasses = DetectionEntropyClasses.ALL
) -> torch.Tensor:
    """Entropy of each row of a (P, C + 1) class distribution."""
    if classes == DetectionEntropyClasses.FOREGROUND:
        fg = class_dist[..., 1:]
        fg = fg / fg.sum(dim=-1, keepdim=True).clamp(min=EPS)
        return categorical_entropy(fg, tol=1e-5)
    return categorical_entropy(class_dist)


def instance_proposal_entropy(
    em: torch.Tensor,
    box: Sequence[float],
    output_size: int,
    stride: int = 1,
    reduction: EntropyReduction = EntropyReduction.MEAN,
) -> torch.Tensor:
    """ROI-pool the entropy map under `box` and reduce the patch to a scalar."""
    return reduction.apply(roi_pool(em, box, output_size, stride))


def instance_entropies(
    em: torch.Tensor,
    boxes: torch.Tensor,
    output_size: int,
    stride: int = 1,
    reduction: EntropyReduction = EntropyReduction.MEAN,
) -> torch.Tensor:
    """instance_proposal_entropy for every row of (P, 4) boxes -> (P,)."""
    pooled = roi_pool_many(em, boxes, output_size, stride)  # (P, 1, M, M)
    return reduction.apply(pooled[:, 0])
