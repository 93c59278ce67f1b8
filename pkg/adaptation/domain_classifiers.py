"""
Image-level and instance-level domain classifiers. Outputs are the
probability that the input came from the target domain.
"""

import torch
import torch.nn as nn

from detector.rpn import EPS


class ImageDomainClassifier(nn.Module):
    """Two 1x1 convolutions, D -> D/2 -> 1, applied at every location."""

    def __init__(self, channels: int, init_std: float = 0.01) -> None:
        super().__init__()
        hidden = max(1, channels // 2)
        self.conv1 = nn.Conv2d(channels, hidden, kernel_size=1)
        self.conv2 = nn.Conv2d(hidden, 1, kernel_size=1)
        for layer in (self.conv1, self.conv2):
            nn.init.normal_(layer.weight, std=init_std)
            nn.init.zeros_(layer.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """(D, U, V) or (1, D, U, V) features -> (U, V) probabilities."""
        x = features if features.dim() == 4 else features.unsqueeze(0)
        logits = self.conv2(torch.relu(self.conv1(x)))
        return torch.sigmoid(logits[0, 0]).clamp(EPS, 1.0 - EPS)


class InstanceDomainClassifier(nn.Module):
    """Three fully connected layers; dropout 0.5 after the first two."""

    def __init__(
        self, in_features: int, hidden: int = 256, dropout: float = 0.5, init_std: float = 0.01
    ) -> None:
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_features, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(dropout),
            nn.Linear(hidden, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(dropout),
            nn.Linear(hidden, 1),
        )
        for layer in self.net:
            if isinstance(layer, nn.Linear):
                nn.init.normal_(layer.weight, std=init_std)
                nn.init.zeros_(layer.bias)

    def forward(self, instance_features: torch.Tensor) -> torch.Tensor:
        """(P, K) -> (P,) probabilities."""
        return torch.sigmoid(self.net(instance_features)[:, 0]).clamp(EPS, 1.0 - EPS)
