"""Creates random shapes-on-background detection datasets"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from common.config_reader import ConfigError, ConfigReader
from common.logger import get_logger
from common.shape_dictionary import (
    FOREGROUND_PALETTE,
    MAX_CLASSES,
    MAX_OBJECT_SIDE,
    MIN_OBJECT_SIDE,
    SOURCE_BACKGROUND_PALETTE,
    ShapeType,
    shape_for_class,
)
from datagen.sample import BoxLabel, DetectionSample, Domain, HeldOutLabels
from datagen.shift import ShiftConfig, apply_domain_shift
from datagen.texture import background_texture

# Offsets that derive the three benchmark splits from one experiment seed.
SPLIT_SEED_OFFSETS = {"source": 0, "target_train": 1, "target_eval": 2}


@dataclass(frozen=True)
class DatasetConfig:
    """Desk-scale benchmark layout. Defaults are the reference benchmark."""

    image_size: Tuple[int, int] = (64, 64)
    num_classes: int = 3
    objects_per_image: Tuple[int, int] = (1, 3)
    n_source: int = 500
    n_target_train: int = 500
    n_target_eval: int = 200
    seed: int = 0
    texture_feature_sizes: Tuple[int, ...] = (16, 4)
    texture_amplitude: float = 0.08
    shift: ShiftConfig = field(default_factory=ShiftConfig)

    def __post_init__(self) -> None:
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        if min(h, w) < MIN_OBJECT_SIDE:
            raise ConfigError(
                f"image_size {self.image_size} too small to place a "
                f"{MIN_OBJECT_SIDE}px object"
            )
        if not 1 <= self.num_classes <= MAX_CLASSES:
            raise ConfigError(f"num_classes must be in 1..{MAX_CLASSES}")
        lo, hi = self.objects_per_image
        if lo < 1 or hi < lo:
            raise ConfigError(f"objects_per_image {self.objects_per_image} invalid")
        for name in ("n_source", "n_target_train", "n_target_eval"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")

    def split_size(self, split: str) -> int:
        return {
            "source": self.n_source,
            "target_train": self.n_target_train,
            "target_eval": self.n_target_eval,
        }[split]

    def split_seed(self, split: str) -> int:
        return self.seed * 10 + SPLIT_SEED_OFFSETS[split]

    @staticmethod
    def from_reader(reader: ConfigReader) -> DatasetConfig:
        size = reader.get_config_def("image_size", list, [64, 64])
        objects = reader.get_config_def("objects_per_image", list, [1, 3])
        features = reader.get_config_def("texture_feature_sizes", list, [16, 4])
        return DatasetConfig(
            image_size=(int(size[0]), int(size[1])),
            num_classes=reader.get_config_def("num_classes", int, 3),
            objects_per_image=(int(objects[0]), int(objects[1])),
            n_source=reader.get_config_def("n_source", int, 500),
            n_target_train=reader.get_config_def("n_target_train", int, 500),
            n_target_eval=reader.get_config_def("n_target_eval", int, 200),
            seed=reader.get_config_def("seed", int, 0),
            texture_feature_sizes=tuple(int(g) for g in features),
            texture_amplitude=reader.get_config_def("texture_amplitude", float, 0.08),
            shift=ShiftConfig.from_reader(reader.section("shift")),
        )

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "num_classes": self.num_classes,
            "objects_per_image": list(self.objects_per_image),
            "n_source": self.n_source,
            "n_target_train": self.n_target_train,
            "n_target_eval": self.n_target_eval,
            "seed": self.seed,
            "texture_feature_sizes": list(self.texture_feature_sizes),
            "texture_amplitude": self.texture_amplitude,
            "shift": self.shift.to_dict(),
        }


def _box_iou(a: Tuple[int, int, int], b: Tuple[int, int, int]) -> float:
    """IoU of two squares given as (x, y, side)."""
    ax, ay, as_ = a
    bx, by, bs = b
    iw = max(0, min(ax + as_, bx + bs) - max(ax, bx))
    ih = max(0, min(ay + as_, by + bs) - max(ay, by))
    inter = iw * ih
    return inter / float(as_ * as_ + bs * bs - inter)


def draw_shape(draw: ImageDraw.ImageDraw, shape: ShapeType, x: int, y: int, s: int) -> None:
    """Rasterise one shape so it touches all four sides of its box."""
    r = s - 1
    if shape == ShapeType.DISC:
        draw.ellipse([x, y, x + r, y + r], fill=255)
    elif shape == ShapeType.SQUARE:
        draw.rectangle([x, y, x + r, y + r], fill=255)
    elif shape == ShapeType.TRIANGLE:
        draw.polygon([(x, y + r), (x + r, y + r), (x + r / 2, y)], fill=255)
    elif shape == ShapeType.DIAMOND:
        draw.polygon(
            [(x + r / 2, y), (x + r, y + r / 2), (x + r / 2, y + r), (x, y + r / 2)],
            fill=255,
        )
    elif shape == ShapeType.CROSS:
        bar = max(1, s // 3)
        draw.rectangle([x, y + bar, x + r, y + r - bar], fill=255)
        draw.rectangle([x + bar, y, x + r - bar, y + r], fill=255)
    elif shape == ShapeType.RING:
        draw.ellipse([x, y, x + r, y + r], outline=255, width=max(2, s // 5))
    else:
        raise ValueError(f"Unknown shape {shape}")


class ShapeDatasetGenerator:
    """Procedural shapes-on-background images with exact box labels.

    Every sample draws from its own generator seeded with (seed, index), so
    any sample can be regenerated alone and generation order never matters.
    """

    def __init__(
        self,
        image_size: Tuple[int, int],
        num_classes: int,
        objects_per_image: Tuple[int, int],
        texture_feature_sizes: Tuple[int, ...] = (16, 4),
        texture_amplitude: float = 0.08,
        max_overlap: float = 0.1,
        placement_tries: int = 50,
    ) -> None:
        self.log = get_logger()
        self.height, self.width = image_size
        if min(self.height, self.width) < MIN_OBJECT_SIDE:
            raise ConfigError(
                f"image_size {image_size} too small to place a {MIN_OBJECT_SIDE}px object"
            )
        if not 1 <= num_classes <= MAX_CLASSES:
            raise ConfigError(f"num_classes must be in 1..{MAX_CLASSES}")
        if objects_per_image[0] < 1 or objects_per_image[1] < objects_per_image[0]:
            raise ConfigError(f"objects_per_image {objects_per_image} invalid")
        self.num_classes = num_classes
        self.objects_per_image = objects_per_image
        self.texture_feature_sizes = list(texture_feature_sizes)
        self.texture_amplitude = texture_amplitude
        self.max_overlap = max_overlap
        self.placement_tries = placement_tries
        self.max_side = min(MAX_OBJECT_SIDE, self.height, self.width)

    def _object_side(self, rng: np.random.Generator, scale_jitter: float) -> int:
        side = int(rng.integers(MIN_OBJECT_SIDE, self.max_side + 1))
        if scale_jitter > 0.0:
            side = int(round(side * (1.0 + rng.uniform(-scale_jitter, scale_jitter))))
        return int(np.clip(side, MIN_OBJECT_SIDE, self.max_side))

    def _place(
        self, rng: np.random.Generator, side: int, placed: List[Tuple[int, int, int]]
    ) -> Tuple[int, int, int]:
        candidate = (0, 0, side)
        for _ in range(self.placement_tries):
            x = int(rng.integers(0, self.width - side + 1))
            y = int(rng.integers(0, self.height - side + 1))
            candidate = (x, y, side)
            if all(_box_iou(candidate, other) <= self.max_overlap for other in placed):
                return candidate
        self.log.debug(f"Placement fallback with overlap for side {side}")
        return candidate

    def generate_one(
        self, seed: int, index: int, domain: Domain, shift: ShiftConfig
    ) -> DetectionSample:
        rng = np.random.default_rng([seed, index])
        target = domain == Domain.TARGET

        palette = SOURCE_BACKGROUND_PALETTE
        if target and len(shift.background_palette) > 0:
            palette = list(shift.background_palette)
        background = np.array(palette[int(rng.integers(0, len(palette)))], dtype=np.float64)
        texture = background_texture(
            self.height, self.width, self.texture_feature_sizes, rng, self.texture_amplitude
        )
        image = background[None, None, :] + texture[:, :, None]

        count = int(rng.integers(self.objects_per_image[0], self.objects_per_image[1] + 1))
        placed: List[Tuple[int, int, int]] = []
        labels: List[BoxLabel] = []
        for _ in range(count):
            class_id = int(rng.integers(1, self.num_classes + 1))
            side = self._object_side(rng, shift.scale_jitter if target else 0.0)
            x, y, s = self._place(rng, side, placed)
            placed.append((x, y, s))

            mask_img = Image.new("L", (self.width, self.height), 0)
            draw_shape(ImageDraw.Draw(mask_img), shape_for_class(class_id), x, y, s)
            mask = np.asarray(mask_img) > 127
            color = np.array(FOREGROUND_PALETTE[int(rng.integers(0, len(FOREGROUND_PALETTE)))])
            image[mask] = color

            labels.append(
                BoxLabel(class_id=class_id, box=(float(x), float(y), float(x + s), float(y + s)))
            )

        image = np.clip(image, 0.0, 1.0)
        if target:
            shift_seed = int(rng.integers(0, 2**31 - 1))
            image = apply_domain_shift(image, shift, shift_seed)

        # quantise exactly as PNG round-trips do so saved datasets reload bit-exact
        quantised = np.round(image * 255.0).astype(np.uint8)
        image32 = quantised.astype(np.float32) / np.float32(255.0)

        if target:
            return DetectionSample(
                image=image32,
                domain=domain,
                labels=None,
                held_out=HeldOutLabels(labels),
                seed=seed,
                index=index,
            )
        return DetectionSample(image=image32, domain=domain, labels=labels, seed=seed, index=index)

    def generate(
        self,
        n: int,
        domain: Domain,
        shift: ShiftConfig,
        seed: int,
        progress: bool = False,
    ) -> List[DetectionSample]:
        if n <= 0:
            raise ConfigError(f"n must be > 0, got {n}")
        indices = range(n)
        if progress:
            indices = tqdm(indices, desc=f"{domain.value} samples", leave=False)
        return [self.generate_one(seed, i, domain, shift) for i in indices]


def generate_dataset(
    n: int,
    image_size: Tuple[int, int],
    classes: int,
    objects_per_image: Tuple[int, int],
    shift: ShiftConfig,
    domain: Domain,
    seed: int,
    texture_feature_sizes: Tuple[int, ...] = (16, 4),
    texture_amplitude: float = 0.08,
    progress: bool = False,
) -> List[DetectionSample]:
    """Generate n samples of one domain. Deterministic given the arguments."""
    generator = ShapeDatasetGenerator(
        image_size,
        classes,
        objects_per_image,
        texture_feature_sizes=texture_feature_sizes,
        texture_amplitude=texture_amplitude,
    )
    return generator.generate(n, domain, shift, seed, progress=progress)


def generate_benchmark(
    cfg: DatasetConfig, progress: bool = False
) -> Dict[str, List[DetectionSample]]:
    """The three splits of a benchmark: source, target_train and target_eval."""
    log = get_logger()
    splits: Dict[str, List[DetectionSample]] = {}
    for split in ("source", "target_train", "target_eval"):
        domain = Domain.SOURCE if split == "source" else Domain.TARGET
        splits[split] = generate_dataset(
            cfg.split_size(split),
            cfg.image_size,
            cfg.num_classes,
            cfg.objects_per_image,
            cfg.shift,
            domain,
            cfg.split_seed(split),
            texture_feature_sizes=cfg.texture_feature_sizes,
            texture_amplitude=cfg.texture_amplitude,
            progress=progress,
        )
        log.info(f"Generated {len(splits[split])} {split} samples")
    return splits


def check_labels(samples: List[DetectionSample], num_classes: int) -> None:
    """Validate every label of every sample; raises ValueError on the first bad one."""
    for sample in samples:
        if sample.held_out is not None:
            sample.held_out.validate(sample.height, sample.width, num_classes)
        for label in sample.labels or []:
            label.validate(sample.height, sample.width, num_classes)
