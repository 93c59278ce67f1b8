from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from common.config_reader import ConfigError


@dataclass(frozen=True)
class GateConfig:
    xi: float = 0.5

    def __post_init__(self) -> None:
        if not math.isfinite(self.xi) or self.xi < 0:
            raise ConfigError(f"xi must be finite and >= 0, got {self.xi}")


def gate(detection_entropy: float, instance_entropy: float, cfg: GateConfig) -> float:
    """Pass the detection entropy only where the instance entropy is strictly below xi."""
    return detection_entropy if instance_entropy < cfg.xi else 0.0


def gate_weights(
    detection_entropy: torch.Tensor, instance_entropy: torch.Tensor, cfg: GateConfig
) -> torch.Tensor:
    """Element-wise gate over aligned (P,) tensors."""
    if detection_entropy.shape != instance_entropy.shape:
        raise ValueError(
            f"gate inputs differ in shape: {tuple(detection_entropy.shape)} vs "
            f"{tuple(instance_entropy.shape)}"
        )
    return torch.where(
        instance_entropy < cfg.xi, detection_entropy, torch.zeros_like(detection_entropy)
    )
