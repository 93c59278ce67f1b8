"""
Detection sample types shared by generation, training and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar, List, Optional, Tuple

import numpy as np

Box = Tuple[float, float, float, float]


class Domain(Enum):
    SOURCE = "source"
    TARGET = "target"

    @property
    def label(self) -> int:
        """Domain classifier label: 0 for source, 1 for target."""
        return 0 if self == Domain.SOURCE else 1


@dataclass(frozen=True)
class BoxLabel:
    class_id: int
    box: Box  # (x1, y1, x2, y2), pixel coordinates

    def validate(self, height: int, width: int, num_classes: int) -> None:
        x1, y1, x2, y2 = self.box
        if not 1 <= self.class_id <= num_classes:
            raise ValueError(f"class_id {self.class_id} outside 1..{num_classes}")
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"Degenerate box {self.box}")
        if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
            raise ValueError(f"Box {self.box} outside {width}x{height} image")

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "box": list(self.box)}

    @staticmethod
    def from_dict(data: dict) -> BoxLabel:
        x1, y1, x2, y2 = (float(v) for v in data["box"])
        return BoxLabel(class_id=int(data["class_id"]), box=(x1, y1, x2, y2))


class HeldOutLabels:
    """Target-domain labels, readable only through the evaluation path.

    Every reveal() is counted per instance and globally so the trainer can
    prove it never looked at the labels of the images it adapts on.
    """

    total_reads: ClassVar[int] = 0

    def __init__(self, labels: List[BoxLabel]) -> None:
        self._labels = list(labels)
        self.reads = 0

    def reveal(self) -> List[BoxLabel]:
        self.reads += 1
        HeldOutLabels.total_reads += 1
        return list(self._labels)

    def to_records(self) -> List[dict]:
        """Serialized form for the dataset manifest. Not counted as a read."""
        return [label.to_dict() for label in self._labels]

    def validate(self, height: int, width: int, num_classes: int) -> None:
        for label in self._labels:
            label.validate(height, width, num_classes)

    def __len__(self) -> int:
        return len(self._labels)

    def __repr__(self) -> str:
        return f"HeldOutLabels(<{len(self._labels)} hidden>)"


@dataclass
class DetectionSample:
    """One image of either domain.

    `labels` is only ever set on source samples. Target samples carry their
    ground truth in `held_out`, reachable through `evaluation_labels()`.
    """

    image: np.ndarray  # float32, (H, W, 3), values in [0, 1]
    domain: Domain
    labels: Optional[List[BoxLabel]] = None
    held_out: Optional[HeldOutLabels] = field(default=None, repr=False)
    seed: Optional[int] = None
    index: int = 0

    def __post_init__(self) -> None:
        if self.domain == Domain.SOURCE and self.labels is None:
            raise ValueError("Source samples must carry labels")
        if self.domain == Domain.TARGET and self.labels is not None:
            raise ValueError("Target samples must not expose labels to training")

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def evaluation_labels(self) -> List[BoxLabel]:
        """Ground truth for evaluation, regardless of domain."""
        if self.labels is not None:
            return list(self.labels)
        if self.held_out is None:
            return []
        return self.held_out.reveal()
