"""
Detections interchange file: per-image lists of (class, score, box) as JSON.
"""

import json
from pathlib import Path
from typing import List, Sequence, Tuple, Union

from common.config_reader import ConfigError
from detector.detector import ScoredBox

DETECTIONS_VERSION = 1


def save_detections(
    path: Union[str, Path],
    detections: Sequence[Sequence[ScoredBox]],
    image_indices: Sequence[int],
    dataset: str = "",
) -> Path:
    if len(detections) != len(image_indices):
        raise ValueError("one detection list per image index required")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": DETECTIONS_VERSION,
        "dataset": dataset,
        "images": [
            {
                "index": int(index),
                "detections": [
                    {"class_id": d.class_id, "score": d.score, "box": list(d.box)} for d in dets
                ],
            }
            for index, dets in zip(image_indices, detections)
        ],
    }
    with open(out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    return out


def load_detections(path: Union[str, Path]) -> Tuple[List[int], List[List[ScoredBox]], str]:
    """Returns (image indices, per-image detections, dataset tag)."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != DETECTIONS_VERSION:
        raise ConfigError(f"{path}: unsupported detections file version {payload.get('version')}")
    indices: List[int] = []
    detections: List[List[ScoredBox]] = []
    for image in payload["images"]:
        indices.append(int(image["index"]))
        detections.append(
            [
                ScoredBox(
                    class_id=int(d["class_id"]),
                    score=float(d["score"]),
                    box=tuple(float(c) for c in d["box"]),
                )
                for d in image["detections"]
            ]
        )
    return indices, detections, payload.get("dataset", "")
