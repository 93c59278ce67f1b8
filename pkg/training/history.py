from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

LOSS_KEYS = ("L_det", "L_img", "L_ins", "total")


@dataclass
class HistoryRecord:
    iteration: int
    L_det: float
    L_img: float
    L_ins: float
    total: float
    lr: float
    map: Optional[float] = None
    test_loss: Optional[float] = None
    # largest |L_ins| of any single step in the interval
    max_abs_L_ins: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_dict(data: dict) -> HistoryRecord:
        return HistoryRecord(**{k: data[k] for k in HistoryRecord.__dataclass_fields__ if k in data})


class IntervalMeter:
    """Running sums of the loss breakdown between two history records."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.sums: Dict[str, float] = {k: 0.0 for k in LOSS_KEYS}
        self.peak_l_ins = 0.0
        self.steps = 0

    def add(self, breakdown: Dict[str, float]) -> None:
        for k in LOSS_KEYS:
            self.sums[k] += breakdown[k]
        self.peak_l_ins = max(self.peak_l_ins, abs(breakdown["L_ins"]))
        self.steps += 1

    def means(self) -> Dict[str, float]:
        n = max(1, self.steps)
        return {k: v / n for k, v in self.sums.items()}


class TrainHistory:
    """Line-delimited JSON history with strictly increasing iterations."""

    def __init__(self, path: Optional[Union[str, Path]] = None) -> None:
        self.path = Path(path) if path is not None else None
        self.records: List[HistoryRecord] = []

    def append(self, record: HistoryRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError(
                f"history iteration {record.iteration} not after {self.records[-1].iteration}"
            )
        for key in LOSS_KEYS:
            if not math.isfinite(getattr(record, key)):
                raise ValueError(f"non-finite {key} at iteration {record.iteration}")
        self.records.append(record)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.to_json() + "\n")

    @staticmethod
    def load(path: Union[str, Path], up_to: Optional[int] = None) -> TrainHistory:
        """Read a history file, keeping records up to iteration `up_to`.

        The file is rewritten without the dropped tail so a resumed run
        continues it without gaps or duplicates.
        """
        history = TrainHistory(path)
        p = Path(path)
        if not p.exists():
            return history
        with open(p, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    record = HistoryRecord.from_dict(json.loads(line))
                    if up_to is None or record.iteration <= up_to:
                        history.records.append(record)
        if up_to is not None:
            with open(p, "w", encoding="utf-8") as f:
                for record in history.records:
                    f.write(record.to_json() + "\n")
        return history

    def as_dicts(self) -> List[dict]:
        return [asdict(r) for r in self.records]
