"""
Metrics JSON and grid tables (CSV plus a rendered text version).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from training.ablation_mode import AblationMode

# Published ablation chain, shown as an annotation only.
REFERENCE_ABLATION = {
    AblationMode.BASELINE: 25.8,
    AblationMode.IMAGE_AL: 29.7,
    AblationMode.IMAGE_UA_AL: 30.8,
    AblationMode.UADAN_NO_UGCL: 31.5,
    AblationMode.UADAN: 32.7,
}
REFERENCE_NOTE = "reference, not desk-scale target"


def write_json(path: Union[str, Path], payload: dict) -> Path:
    """Deterministic JSON: sorted keys, no timestamps."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


@dataclass
class SummaryRow:
    label: str
    values: List[float]
    failures: int = 0
    reference: Optional[float] = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.values)) if self.values else math.nan

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if self.values else math.nan


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{100.0 * value:.2f}"


def write_table(
    rows: Sequence[SummaryRow],
    csv_path: Union[str, Path],
    txt_path: Union[str, Path],
    title: str,
    key_name: str,
    notes: Sequence[str] = (),
) -> str:
    """Write rows as CSV and as an aligned text table; returns the text."""
    csv_out = Path(csv_path)
    csv_out.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([key_name, "runs", "failures", "mAP_mean", "mAP_std", "mAP_median", "reference"])
        for row in rows:
            writer.writerow(
                [
                    row.label,
                    len(row.values),
                    row.failures,
                    _fmt(row.mean),
                    _fmt(row.std),
                    _fmt(row.median),
                    "" if row.reference is None else f"{row.reference:.1f}",
                ]
            )

    width = max([len(key_name)] + [len(r.label) for r in rows])
    lines = [title, "", f"{key_name:<{width}}  mAP (mean ± std)   median   runs  reference"]
    for row in rows:
        ref = "" if row.reference is None else f"{row.reference:.1f} ({REFERENCE_NOTE})"
        lines.append(
            f"{row.label:<{width}}  {_fmt(row.mean):>6} ± {_fmt(row.std):<6}   "
            f"{_fmt(row.median):>6}   {len(row.values):>4}  {ref}"
        )
        if row.failures:
            lines[-1] += f"  [{row.failures} failed]"
    lines.extend([""] + list(notes))
    text = "\n".join(lines) + "\n"
    Path(txt_path).write_text(text, encoding="utf-8")
    return text


def group_maps(outcomes: Sequence, key) -> Dict[object, SummaryRow]:
    """Collect mAP values of successful outcomes per key(outcome)."""
    rows: Dict[object, SummaryRow] = {}
    for outcome in outcomes:
        k = key(outcome)
        row = rows.setdefault(k, SummaryRow(label=str(k), values=[]))
        if outcome.ok:
            row.values.append(outcome.map)
        else:
            row.failures += 1
    return rows
