"""Anchor generation and box encoding in (x1, y1, x2, y2) pixel coordinates."""

import math
from typing import Sequence, Tuple

import torch

# Largest log-scale change a delta may apply, as in the usual Faster R-CNN coders.
DELTA_SCALE_CLAMP = math.log(1000.0 / 16)


def generate_anchors(
    feature_size: Tuple[int, int],
    stride: int,
    sizes: Sequence[int],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Square anchors centred on every feature cell.

    Returns a (U, V, R, 4) tensor. Cell (u, v) is centred at
    ((v + 0.5) * stride, (u + 0.5) * stride). Anchors are not clipped.
    """
    u_count, v_count = feature_size
    cy = (torch.arange(u_count, dtype=dtype) + 0.5) * stride
    cx = (torch.arange(v_count, dtype=dtype) + 0.5) * stride
    half = torch.tensor(sizes, dtype=dtype) / 2.0

    cy = cy.view(u_count, 1, 1).expand(u_count, v_count, len(sizes))
    cx = cx.view(1, v_count, 1).expand(u_count, v_count, len(sizes))
    half = half.view(1, 1, -1).expand(u_count, v_count, len(sizes))
    return torch.stack([cx - half, cy - half, cx + half, cy + half], dim=-1)


def encode(reference: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Deltas (dx, dy, dw, dh) that move `reference` boxes onto `target` boxes."""
    rw = reference[..., 2] - reference[..., 0]
    rh = reference[..., 3] - reference[..., 1]
    rx = reference[..., 0] + 0.5 * rw
    ry = reference[..., 1] + 0.5 * rh

    tw = target[..., 2] - target[..., 0]
    th = target[..., 3] - target[..., 1]
    tx = target[..., 0] + 0.5 * tw
    ty = target[..., 1] + 0.5 * th

    return torch.stack(
        [(tx - rx) / rw, (ty - ry) / rh, torch.log(tw / rw), torch.log(th / rh)], dim=-1
    )


def decode(reference: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """Inverse of encode. Zero deltas return the reference box."""
    rw = reference[..., 2] - reference[..., 0]
    rh = reference[..., 3] - reference[..., 1]
    rx = reference[..., 0] + 0.5 * rw
    ry = reference[..., 1] + 0.5 * rh

    dx, dy = deltas[..., 0], deltas[..., 1]
    dw = deltas[..., 2].clamp(max=DELTA_SCALE_CLAMP)
    dh = deltas[..., 3].clamp(max=DELTA_SCALE_CLAMP)

    cx = rx + dx * rw
    cy = ry + dy * rh
    w = rw * torch.exp(dw)
    h = rh * torch.exp(dh)
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1)


def clip_boxes(boxes: torch.Tensor, image_size: Tuple[int, int]) -> torch.Tensor:
    height, width = image_size
    x = boxes[..., 0::2].clamp(0.0, float(width))
    y = boxes[..., 1::2].clamp(0.0, float(height))
    return torch.stack([x[..., 0], y[..., 0], x[..., 1], y[..., 1]], dim=-1)


def valid_boxes(boxes: torch.Tensor, min_size: float = 0.0) -> torch.Tensor:
    """Mask of boxes whose width and height exceed min_size."""
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return (w > min_size) & (h > min_size)
