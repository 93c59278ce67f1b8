from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Tuple

from common.config_reader import ConfigError, ConfigReader, config_hash


@dataclass(frozen=True)
class DetectorConfig:
    """Shape and selection parameters of the two-stage detector.

    stride is the total backbone downsampling; anchors are squares of the
    listed sides centred on every feature cell; roi_size is the pooled M and
    instance_dim the projected K.
    """

    image_size: Tuple[int, int] = (64, 64)
    num_classes: int = 3
    stride: int = 4
    channels: int = 64
    anchor_sizes: Tuple[int, ...] = (8, 16, 24)
    roi_size: int = 4
    instance_dim: int = 256
    train_top_k: int = 64
    train_nms_iou: float = 0.7
    test_top_k: int = 100
    test_nms_iou: float = 0.7
    min_proposal_size: float = 1.0
    score_threshold: float = 0.5
    detect_nms_iou: float = 0.5
    head_init_std: float = 0.01

    def __post_init__(self) -> None:
        h, w = self.image_size
        if self.stride < 1 or (self.stride & (self.stride - 1)) != 0 or self.stride > 16:
            raise ConfigError(f"stride must be a power of two in 1..16, got {self.stride}")
        if h % self.stride != 0 or w % self.stride != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by stride {self.stride}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.channels < 2:
            raise ConfigError("channels must be >= 2")
        if len(self.anchor_sizes) == 0 or any(a <= 0 for a in self.anchor_sizes):
            raise ConfigError(f"anchor_sizes {self.anchor_sizes} invalid")
        if self.roi_size < 1 or self.instance_dim < 1:
            raise ConfigError("roi_size and instance_dim must be >= 1")
        if self.train_top_k < 1 or self.test_top_k < 1:
            raise ConfigError("top_k must be >= 1")
        for name in ("train_nms_iou", "test_nms_iou", "detect_nms_iou"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("score_threshold must be in [0, 1]")
        if not math.isfinite(self.head_init_std) or self.head_init_std < 0:
            raise ConfigError("head_init_std must be finite and >= 0")

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_sizes)

    @property
    def feature_size(self) -> Tuple[int, int]:
        return self.image_size[0] // self.stride, self.image_size[1] // self.stride

    def config_hash(self) -> str:
        return config_hash(asdict(self))

    @staticmethod
    def from_reader(reader: ConfigReader, image_size: Tuple[int, int], num_classes: int) -> DetectorConfig:
        """Image size and class count always come from the dataset section."""
        d = DetectorConfig()
        return DetectorConfig(
            image_size=(int(image_size[0]), int(image_size[1])),
            num_classes=int(num_classes),
            stride=reader.get_config_def("stride", int, d.stride),
            channels=reader.get_config_def("channels", int, d.channels),
            anchor_sizes=tuple(
                int(a) for a in reader.get_config_def("anchor_sizes", list, list(d.anchor_sizes))
            ),
            roi_size=reader.get_config_def("roi_size", int, d.roi_size),
            instance_dim=reader.get_config_def("instance_dim", int, d.instance_dim),
            train_top_k=reader.get_config_def("train_top_k", int, d.train_top_k),
            train_nms_iou=reader.get_config_def("train_nms_iou", float, d.train_nms_iou),
            test_top_k=reader.get_config_def("test_top_k", int, d.test_top_k),
            test_nms_iou=reader.get_config_def("test_nms_iou", float, d.test_nms_iou),
            min_proposal_size=reader.get_config_def("min_proposal_size", float, d.min_proposal_size),
            score_threshold=reader.get_config_def("score_threshold", float, d.score_threshold),
            detect_nms_iou=reader.get_config_def("detect_nms_iou", float, d.detect_nms_iou),
            head_init_std=reader.get_config_def("head_init_std", float, d.head_init_std),
        )
