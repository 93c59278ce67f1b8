"""
Grid runner shared by train, ablate and sweep-xi: every cell goes through
the same `training.trainer.train` call and writes one isolated run directory.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from tqdm import tqdm

from cli.experiment import CODE_VERSION, ExperimentSpec, run_id
from cli.reports import write_json
from common.logger import get_logger, run_log, setup_logger, stop_logger
from training.ablation_mode import AblationMode
from training.trainer import TrainingData, train

METRICS_FILE = "metrics.json"


@dataclass(frozen=True)
class GridCell:
    mode: AblationMode
    xi: float
    seed: int

    @property
    def run_id(self) -> str:
        return run_id(self.mode, self.xi, self.seed)


@dataclass
class CellOutcome:
    cell: GridCell
    ok: bool
    map: float = 0.0
    final_map: float = 0.0
    max_abs_l_ins: float = 0.0
    error: Optional[str] = None
    run_dir: Optional[Path] = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.cell.run_id,
            "mode": self.cell.mode.value,
            "xi": self.cell.xi,
            "seed": self.cell.seed,
            "ok": self.ok,
            "mAP": self.map,
            "final_mAP": self.final_map,
            "max_abs_L_ins": self.max_abs_l_ins,
            "error": self.error,
        }


def run_cell(
    spec: ExperimentSpec,
    cell: GridCell,
    data: Optional[TrainingData] = None,
    resume: bool = False,
    raise_errors: bool = False,
    progress: bool = False,
) -> CellOutcome:
    """Train one (mode, xi, seed) cell and write its metrics JSON.

    With raise_errors unset a failure is logged and returned as an outcome
    so the surrounding grid keeps going.
    """
    log = get_logger()
    cfg = spec.train_config(seed=cell.seed, xi=cell.xi, mode=cell.mode)
    run_dir = spec.runs_root / cell.run_id
    peak = {"L_ins": 0.0}

    def track(_: int, breakdown: Dict[str, float]) -> None:
        peak["L_ins"] = max(peak["L_ins"], abs(breakdown["L_ins"]))

    try:
        with run_log(run_dir):
            result = train(cfg, run_dir, data=data, resume=resume, on_step=track, progress=progress)
    except Exception as e:
        if raise_errors:
            raise
        log.warning(f"Run {cell.run_id} failed: {type(e).__name__}: {e}")
        return CellOutcome(cell=cell, ok=False, error=f"{type(e).__name__}: {e}", run_dir=run_dir)

    # a resumed run only sees its own steps through `track`
    peak["L_ins"] = max([peak["L_ins"]] + [r.max_abs_L_ins for r in result.history.records])

    outcome = CellOutcome(
        cell=cell,
        ok=True,
        map=result.best_map,
        final_map=result.final_eval.map,
        max_abs_l_ins=peak["L_ins"],
        run_dir=run_dir,
    )
    write_json(
        run_dir / METRICS_FILE,
        {
            "run_id": cell.run_id,
            "config_hash": spec.config_hash(),
            "train_config_hash": cfg.config_hash(),
            "code_version": CODE_VERSION,
            "mode": cell.mode.value,
            "xi": cell.xi,
            "seed": cell.seed,
            "iterations": cfg.total_iters,
            "history": result.history.as_dicts(),
            "final_eval": result.final_eval.to_dict(),
            "final_mAP": result.final_eval.map,
            "best_mAP": result.best_map,
            "best_iteration": result.best_iteration,
            "max_abs_L_ins": peak["L_ins"],
            "target_label_reads": result.target_label_reads,
        },
    )
    return outcome


def _init_worker(log_path: str) -> None:
    # a forked child inherits handlers whose listener thread did not survive
    stop_logger()
    setup_logger(log_path)


def run_grid(spec: ExperimentSpec, cells: Sequence[GridCell]) -> List[CellOutcome]:
    """Run every cell, sequentially or in a process pool; outcomes keep cell order."""
    log = get_logger()
    log.info(f"Grid of {len(cells)} runs with {spec.workers} worker(s)")

    if spec.workers <= 1:
        data = TrainingData.load(spec.train_config())
        return [run_cell(spec, cell, data=data) for cell in tqdm(cells, desc="grid")]

    log_path = str(spec.output_root / "logs" / "uadan.log")
    outcomes: Dict[GridCell, CellOutcome] = {}
    with ProcessPoolExecutor(
        max_workers=spec.workers, initializer=_init_worker, initargs=(log_path,)
    ) as pool:
        futures = {pool.submit(run_cell, spec, cell): cell for cell in cells}
        for future in tqdm(as_completed(futures), total=len(futures), desc="grid"):
            cell = futures[future]
            try:
                outcomes[cell] = future.result()
            except Exception as e:
                log.warning(f"Worker for {cell.run_id} died: {e}")
                outcomes[cell] = CellOutcome(cell=cell, ok=False, error=str(e))
    return [outcomes[cell] for cell in cells]
