import math
from typing import List

import numpy as np
import torch
import torch.nn as nn

from common.config_reader import ConfigError
from detector.config import DetectorConfig

# Order in which blocks take a stride of 2 as the total stride grows.
_DOWNSAMPLE_ORDER = [1, 3, 0, 2]


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float image in [0, 1] -> (1, 3, H, W) float32 tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ConfigError(f"Expected an (H, W, 3) image, got shape {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)


class Backbone(nn.Module):
    """Four 3x3 conv blocks with ReLU; total stride from the config.

    Weights keep PyTorch's default fan-in initialisation.
    """

    def __init__(self, cfg: DetectorConfig) -> None:
        super().__init__()
        self.cfg = cfg
        n_down = int(round(math.log2(cfg.stride)))
        strides = [1, 1, 1, 1]
        for i in _DOWNSAMPLE_ORDER[:n_down]:
            strides[i] = 2

        widths = [cfg.channels // 2, cfg.channels // 2, cfg.channels, cfg.channels]
        layers: List[nn.Module] = []
        in_ch = 3
        for out_ch, stride in zip(widths, strides):
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1))
            layers.append(nn.ReLU(inplace=True))
            in_ch = out_ch
        self.body = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) -> (N, D, U, V)."""
        expected = (3, self.cfg.image_size[0], self.cfg.image_size[1])
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ConfigError(
                f"Backbone expects (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {tuple(images.shape)}"
            )
        return self.body(images)
