"""Max ROI pooling over a feature grid, shared by features and entropy maps."""

import math
from typing import Sequence, Tuple

import torch
import torch.nn.functional as F


class DegenerateRoiError(ValueError):
    def __init__(self, box: Sequence[float]) -> None:
        super().__init__(f"degenerate ROI: {tuple(float(c) for c in box)}")


def project_box(
    box: Sequence[float], stride: int, grid_size: Tuple[int, int]
) -> Tuple[int, int, int, int]:
    """Grid cells (u0, u1, v0, v1), end-exclusive, that a pixel box overlaps."""
    x1, y1, x2, y2 = (float(c) for c in box)
    u_count, v_count = grid_size
    u0 = max(0, int(math.floor(y1 / stride)))
    v0 = max(0, int(math.floor(x1 / stride)))
    u1 = min(u_count, int(math.ceil(y2 / stride)))
    v1 = min(v_count, int(math.ceil(x2 / stride)))
    if not (x1 < x2 and y1 < y2) or u1 <= u0 or v1 <= v0:
        raise DegenerateRoiError(box)
    return u0, u1, v0, v1


def roi_pool(grid: torch.Tensor, box: Sequence[float], output_size: int, stride: int = 1) -> torch.Tensor:
    """Pool the cells under `box` into an (c, M, M) tensor, M = output_size.

    `grid` is (c, U, V) or (U, V). Each output bin takes the max over its
    sub-range of covered cells; bins narrower than one cell reuse the
    nearest covered cell, so no bin is ever empty.
    """
    if output_size < 1:
        raise ValueError(f"output_size must be >= 1, got {output_size}")
    squeeze = grid.dim() == 2
    if squeeze:
        grid = grid.unsqueeze(0)
    u0, u1, v0, v1 = project_box(box, stride, (int(grid.shape[1]), int(grid.shape[2])))
    pooled = F.adaptive_max_pool2d(grid[:, u0:u1, v0:v1], output_size)
    return pooled[0] if squeeze else pooled


def roi_pool_many(
    grid: torch.Tensor, boxes: torch.Tensor, output_size: int, stride: int = 1
) -> torch.Tensor:
    """roi_pool for each row of an (P, 4) box tensor -> (P, c, M, M)."""
    if grid.dim() == 2:
        grid = grid.unsqueeze(0)
    if boxes.shape[0] == 0:
        return grid.new_zeros((0, grid.shape[0], output_size, output_size))
    return torch.stack([roi_pool(grid, b.tolist(), output_size, stride) for b in boxes])
