"""
Checkpoint files: torch.save dictionaries guarded by a detector config hash.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
import torch.nn as nn

from common.logger import get_logger

CHECKPOINT_FORMAT = 1


class CheckpointMismatchError(ValueError):
    """Checkpoint was written for a different detector configuration."""


def save_checkpoint(
    path: Union[str, Path],
    model: nn.Module,
    detector_hash: str,
    iteration: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write parameters keyed by module path plus the hash and iteration.

    `extra` carries optimizer, scheduler and RNG state for resumable runs.
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "detector_hash": detector_hash,
        "iteration": int(iteration),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    tmp = out.with_suffix(out.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(out)
    get_logger().info(f"Checkpoint saved: {out} (iteration {iteration})")
    return out


def read_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"No checkpoint at {p}")
    payload = torch.load(p, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatchError(f"{p} is not a checkpoint of format {CHECKPOINT_FORMAT}")
    return payload


def load_checkpoint(
    path: Union[str, Path], model: nn.Module, expected_hash: Optional[str] = None
) -> Dict[str, Any]:
    """Restore parameters into `model`; returns the whole payload."""
    payload = read_checkpoint(path)
    if expected_hash is not None and payload["detector_hash"] != expected_hash:
        raise CheckpointMismatchError(
            f"Checkpoint {path} was written for detector config "
            f"{payload['detector_hash'][:12]}, expected {expected_hash[:12]}"
        )
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise CheckpointMismatchError(f"Checkpoint {path} does not fit the model: {e}") from e
    return payload
