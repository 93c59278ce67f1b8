"""
Shape class definitions for the synthetic detection benchmark.
Central location for shape types, display names, class ids and palettes.
"""

from enum import Enum
from typing import Dict, List, Tuple

Color = Tuple[float, float, float]


class ShapeType(Enum):
    DISC = "disc"
    SQUARE = "square"
    TRIANGLE = "triangle"
    DIAMOND = "diamond"
    CROSS = "cross"
    RING = "ring"


# Class ids are 1-based in this order; 0 is reserved for background.
SHAPE_TYPES: List[ShapeType] = [
    ShapeType.DISC,
    ShapeType.SQUARE,
    ShapeType.TRIANGLE,
    ShapeType.DIAMOND,
    ShapeType.CROSS,
    ShapeType.RING,
]

SHAPE_NAMES: Dict[ShapeType, str] = {
    ShapeType.DISC: "Disc",
    ShapeType.SQUARE: "Square",
    ShapeType.TRIANGLE: "Triangle",
    ShapeType.DIAMOND: "Diamond",
    ShapeType.CROSS: "Cross",
    ShapeType.RING: "Ring",
}

MAX_CLASSES = len(SHAPE_TYPES)

# Smallest object side in pixels; boxes below this are never generated.
MIN_OBJECT_SIDE = 8
MAX_OBJECT_SIDE = 24

# Object fill colors, shared by both domains. Class is carried by shape only.
FOREGROUND_PALETTE: List[Color] = [
    (0.90, 0.20, 0.20),
    (0.20, 0.70, 0.25),
    (0.20, 0.35, 0.90),
    (0.95, 0.80, 0.15),
    (0.85, 0.30, 0.85),
    (0.15, 0.80, 0.85),
]

# Source-domain backgrounds; the target domain swaps these through ShiftConfig.
SOURCE_BACKGROUND_PALETTE: List[Color] = [
    (0.55, 0.55, 0.55),
    (0.60, 0.58, 0.50),
    (0.50, 0.55, 0.60),
]


def shape_for_class(class_id: int) -> ShapeType:
    if not 1 <= class_id <= MAX_CLASSES:
        raise ValueError(f"class_id {class_id} outside 1..{MAX_CLASSES}")
    return SHAPE_TYPES[class_id - 1]


def class_names(num_classes: int) -> List[str]:
    return [SHAPE_NAMES[SHAPE_TYPES[i]] for i in range(num_classes)]
