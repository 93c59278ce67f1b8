"""
Dataset persistence: one PNG per sample plus a JSON manifest.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from common.config_reader import ConfigError
from common.logger import get_logger
from datagen.sample import BoxLabel, DetectionSample, Domain, HeldOutLabels
from datagen.shift import ShiftConfig

MANIFEST_NAME = "manifest.json"
IMAGE_DIR = "images"
MANIFEST_VERSION = 1


class DatasetExistsError(ConfigError):
    """Target directory already holds a dataset and overwrite was not requested."""


class DatasetMismatchError(ConfigError):
    """A stored dataset does not match the configuration that wants to use it."""


@dataclass
class DatasetManifest:
    split: str
    domain: Domain
    seed: int
    image_size: Tuple[int, int]
    num_classes: int
    shift: ShiftConfig
    samples: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "split": self.split,
            "domain": self.domain.value,
            "seed": self.seed,
            "image_size": list(self.image_size),
            "num_classes": self.num_classes,
            "shift": self.shift.to_dict(),
            "count": len(self.samples),
            "samples": self.samples,
        }

    @staticmethod
    def from_dict(data: dict) -> DatasetManifest:
        if data.get("version") != MANIFEST_VERSION:
            raise DatasetMismatchError(f"Unsupported manifest version {data.get('version')}")
        h, w = data["image_size"]
        return DatasetManifest(
            split=data["split"],
            domain=Domain(data["domain"]),
            seed=int(data["seed"]),
            image_size=(int(h), int(w)),
            num_classes=int(data["num_classes"]),
            shift=ShiftConfig.from_dict(data.get("shift", {})),
            samples=list(data["samples"]),
        )

    @property
    def count(self) -> int:
        return len(self.samples)

    def check_compatible(self, image_size: Tuple[int, int], num_classes: int) -> None:
        if tuple(self.image_size) != tuple(image_size):
            raise DatasetMismatchError(
                f"{self.split}: image_size {self.image_size} != configured {image_size}"
            )
        if self.num_classes != num_classes:
            raise DatasetMismatchError(
                f"{self.split}: num_classes {self.num_classes} != configured {num_classes}"
            )


def _image_name(index: int) -> str:
    return f"{IMAGE_DIR}/{index:06d}.png"


def save_dataset(
    samples: List[DetectionSample],
    directory: Union[str, Path],
    split: str,
    seed: int,
    num_classes: int,
    shift: ShiftConfig,
    force: bool = False,
) -> DatasetManifest:
    """Write samples and their manifest into `directory`.

    Raises DatasetExistsError when a manifest is already there and `force`
    is not set. Target labels are stored under "held_out_labels".
    """
    log = get_logger()
    out = Path(directory)
    if (out / MANIFEST_NAME).exists():
        if not force:
            raise DatasetExistsError(f"{out} already contains a dataset (use --force)")
        shutil.rmtree(out / IMAGE_DIR, ignore_errors=True)

    if not samples:
        raise ConfigError("Refusing to save an empty dataset")

    try:
        (out / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create {out}: {e}") from e

    first = samples[0]
    manifest = DatasetManifest(
        split=split,
        domain=first.domain,
        seed=seed,
        image_size=(first.height, first.width),
        num_classes=num_classes,
        shift=shift,
    )

    for sample in samples:
        name = _image_name(sample.index)
        pixels = np.round(sample.image * 255.0).astype(np.uint8)
        Image.fromarray(pixels).save(out / name, format="PNG")

        entry = {
            "file": name,
            "index": sample.index,
            "seed": sample.seed,
            "domain": sample.domain.value,
        }
        if sample.labels is not None:
            entry["labels"] = [label.to_dict() for label in sample.labels]
        elif sample.held_out is not None:
            entry["held_out_labels"] = sample.held_out.to_records()
        manifest.samples.append(entry)

    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")

    log.info(f"Wrote {manifest.count} {split} samples to {out}")
    return manifest


def read_manifest(directory: Union[str, Path]) -> DatasetManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"No dataset manifest at {path}")
    with open(path, "r", encoding="utf-8") as f:
        return DatasetManifest.from_dict(json.load(f))


def load_dataset(
    directory: Union[str, Path], limit: Optional[int] = None
) -> Tuple[DatasetManifest, List[DetectionSample]]:
    """Load a dataset written by save_dataset. Pixels reload bit-exact."""
    root = Path(directory)
    manifest = read_manifest(root)
    entries = manifest.samples if limit is None else manifest.samples[:limit]

    samples: List[DetectionSample] = []
    for entry in entries:
        with Image.open(root / entry["file"]) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        image = pixels.astype(np.float32) / np.float32(255.0)
        domain = Domain(entry["domain"])
        if domain == Domain.SOURCE:
            labels = [BoxLabel.from_dict(d) for d in entry.get("labels", [])]
            sample = DetectionSample(
                image=image, domain=domain, labels=labels, seed=entry.get("seed"), index=entry["index"]
            )
        else:
            hidden = [BoxLabel.from_dict(d) for d in entry.get("held_out_labels", [])]
            sample = DetectionSample(
                image=image,
                domain=domain,
                held_out=HeldOutLabels(hidden),
                seed=entry.get("seed"),
                index=entry["index"],
            )
        if (sample.height, sample.width) != tuple(manifest.image_size):
            raise DatasetMismatchError(
                f"{entry['file']}: shape {sample.image.shape[:2]} != {manifest.image_size}"
            )
        samples.append(sample)

    get_logger().info(f"Loaded {len(samples)} {manifest.split} samples from {root}")
    return manifest, samples
