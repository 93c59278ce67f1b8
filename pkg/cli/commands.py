"""
Subcommand implementations. Each takes a loaded ExperimentSpec and returns
the payload it wrote, so tests can call them without going through argparse.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from cli.experiment import CODE_VERSION, ExperimentSpec
from cli.grid import METRICS_FILE, CellOutcome, GridCell, run_cell, run_grid
from cli.reports import REFERENCE_ABLATION, REFERENCE_NOTE, SummaryRow, group_maps, write_json, write_table
from common.config_reader import ConfigError
from common.logger import get_logger
from common.shape_dictionary import class_names
from datagen.dataset_io import MANIFEST_NAME, DatasetExistsError, load_dataset, save_dataset
from datagen.sample import DetectionSample
from datagen.shape_generator import check_labels, generate_benchmark
from datagen.shift import ShiftConfig
from detector.checkpoint import CheckpointMismatchError, load_checkpoint, read_checkpoint
from detector.detector import ScoredBox
from evaluation.detections_io import load_detections, save_detections
from evaluation.error_analysis import error_analysis
from evaluation.evaluator import evaluate
from evaluation.plots import plot_detections, plot_feature_projection, plot_loss_curves, plot_pr_curves
from evaluation.variance import class_variance, collect_instance_features
from training.ablation_mode import AblationMode
from training.history import TrainHistory
from training.network import UadanNetwork
from training.trainer import HISTORY_FILE

SPLITS = ("source", "target_train", "target_eval")
DETECTION_PLOT_IMAGES = 4
PathLike = Union[str, Path]


def cmd_gen(spec: ExperimentSpec, force: bool = False) -> Dict[str, int]:
    """Generate the three benchmark splits under `<out>/data`."""
    log = get_logger()
    spec.ensure_output()
    existing = [s for s in SPLITS if (spec.data_root / s / MANIFEST_NAME).exists()]
    if existing and not force:
        raise DatasetExistsError(
            f"{spec.data_root} already holds {', '.join(existing)} (use --force to overwrite)"
        )

    cfg = spec.dataset
    splits = generate_benchmark(cfg, progress=True)
    counts: Dict[str, int] = {}
    for split in SPLITS:
        samples = splits[split]
        check_labels(samples, cfg.num_classes)
        shift = ShiftConfig() if split == "source" else cfg.shift
        manifest = save_dataset(
            samples,
            spec.data_root / split,
            split,
            cfg.split_seed(split),
            cfg.num_classes,
            shift,
            force=force,
        )
        counts[split] = manifest.count
    log.info(f"Benchmark written to {spec.data_root}: {counts}")
    return counts


def cmd_train(spec: ExperimentSpec, resume: bool = False) -> CellOutcome:
    """One run with the spec's own mode, xi and seed; errors propagate."""
    spec.ensure_output()
    cell = GridCell(mode=spec.train.mode, xi=spec.train.xi, seed=spec.train.seed)
    return run_cell(spec, cell, resume=resume, raise_errors=True, progress=True)


def _write_grid(spec: ExperimentSpec, name: str, outcomes: Sequence[CellOutcome], extra: dict) -> None:
    write_json(
        spec.reports_root / f"{name}.json",
        {
            "config_hash": spec.config_hash(),
            "code_version": CODE_VERSION,
            "seeds": list(spec.seeds),
            "runs": [o.to_dict() for o in outcomes],
            **extra,
        },
    )


def cmd_ablate(spec: ExperimentSpec) -> List[SummaryRow]:
    """Every AblationMode over every seed; one table row per mode."""
    spec.ensure_output()
    xi = spec.train.xi
    cells = [GridCell(mode=m, xi=xi, seed=s) for m in AblationMode for s in spec.seeds]
    outcomes = run_grid(spec, cells)

    grouped = group_maps(outcomes, key=lambda o: o.cell.mode)
    rows = []
    for mode in AblationMode:
        row = grouped[mode]
        row.label = mode.value
        row.reference = REFERENCE_ABLATION.get(mode)
        rows.append(row)

    chain = " < ".join(f"{REFERENCE_ABLATION[m]:.1f}" for m in REFERENCE_ABLATION)
    names = " < ".join(m.value for m in REFERENCE_ABLATION)
    text = write_table(
        rows,
        spec.reports_root / "ablation.csv",
        spec.reports_root / "ablation.txt",
        title=f"Ablation over seeds {list(spec.seeds)} (xi={xi:g}, mAP x100 on target_eval)",
        key_name="mode",
        notes=[f"Reference ordering {names}: {chain} ({REFERENCE_NOTE})"],
    )
    _write_grid(spec, "ablation", outcomes, {"xi": xi})
    get_logger().info("\n" + text)
    return rows


def _best_xi_per_seed(outcomes: Sequence[CellOutcome]) -> Dict[str, Optional[float]]:
    best: Dict[str, Optional[float]] = {}
    for seed in sorted({o.cell.seed for o in outcomes}):
        done = [o for o in outcomes if o.cell.seed == seed and o.ok]
        # ties resolve to the smaller xi
        best[str(seed)] = max(done, key=lambda o: (o.map, -o.cell.xi)).cell.xi if done else None
    return best


def cmd_sweep_xi(spec: ExperimentSpec, xi_values: Optional[Sequence[float]] = None) -> List[SummaryRow]:
    """UaDAN over every (xi, seed); checks that the xi=0 runs never produce instance loss."""
    log = get_logger()
    spec.ensure_output()
    values = tuple(xi_values) if xi_values is not None else spec.xi_values
    cells = [GridCell(mode=AblationMode.UADAN, xi=xi, seed=s) for xi in values for s in spec.seeds]
    outcomes = run_grid(spec, cells)

    grouped = group_maps(outcomes, key=lambda o: o.cell.xi)
    rows = []
    for xi in values:
        row = grouped[xi]
        row.label = f"{xi:g}"
        rows.append(row)

    notes = []
    zero_runs = [o for o in outcomes if o.cell.xi == 0.0 and o.ok]
    zero_ok: Optional[bool] = None
    if zero_runs:
        peak = max(o.max_abs_l_ins for o in zero_runs)
        zero_ok = peak == 0.0
        notes.append(f"xi=0 instance loss identically zero: {'yes' if zero_ok else 'NO'} (max |L_ins| = {peak:g})")
        if not zero_ok:
            log.error(f"xi=0 runs produced instance loss up to {peak:g}")

    best = _best_xi_per_seed(outcomes)
    notes.append("best xi per seed: " + ", ".join(f"seed {s}: {x}" for s, x in best.items()))

    text = write_table(
        rows,
        spec.reports_root / "sweep_xi.csv",
        spec.reports_root / "sweep_xi.txt",
        title=f"xi sensitivity over seeds {list(spec.seeds)} (UaDAN, mAP x100 on target_eval)",
        key_name="xi",
        notes=notes,
    )
    _write_grid(
        spec,
        "sweep_xi",
        outcomes,
        {"xi_values": list(values), "xi0_instance_loss_zero": zero_ok, "best_xi_per_seed": best},
    )
    log.info("\n" + text)
    return rows


def _eval_name(checkpoint: Path) -> str:
    """Run id from `runs/<run id>/<name>.pt`, suffixed by the checkpoint name."""
    return f"{checkpoint.parent.name}_{checkpoint.stem}"


def _plot_detection_panels(
    det_path: Path,
    label: str,
    compare: Optional[PathLike],
    samples: Sequence[DetectionSample],
    names: Sequence[str],
    out: Path,
) -> Path:
    """Side-by-side boxes on the first target images, read back from the detection files."""
    shown = samples[:DETECTION_PLOT_IMAGES]
    panels: Dict[str, List[List[ScoredBox]]] = {}
    if compare is not None:
        ref_indices, ref_dets, _ = load_detections(compare)
        by_index = dict(zip(ref_indices, ref_dets))
        panels["source-only"] = [by_index[s.index] for s in shown]
    indices, stored, _ = load_detections(det_path)
    by_index = dict(zip(indices, stored))
    panels[label] = [by_index[s.index] for s in shown]
    return plot_detections(
        [s.image for s in shown], panels, [s.evaluation_labels() for s in shown], names, out
    )


def cmd_eval(
    spec: ExperimentSpec,
    checkpoint: PathLike,
    dataset_dir: Optional[PathLike] = None,
    compare: Optional[PathLike] = None,
) -> dict:
    """Evaluate a checkpoint; writes detections, metrics JSON and plots keyed by run id."""
    log = get_logger()
    spec.ensure_output()
    ckpt = Path(checkpoint)
    payload = read_checkpoint(ckpt)
    mode = AblationMode.parse(payload.get("mode", spec.train.mode.value))
    cfg = spec.train_config(
        seed=int(payload.get("seed", spec.train.seed)),
        xi=float(payload.get("xi", spec.train.xi)),
        mode=mode,
    )
    saved_hash = payload.get("network_hash")
    if saved_hash is not None and saved_hash != cfg.network_hash():
        raise CheckpointMismatchError(
            f"{ckpt} was trained with a different network shape than {spec.config_path or 'the defaults'}"
        )
    net = UadanNetwork(cfg)
    load_checkpoint(ckpt, net, cfg.detector.config_hash())
    detector = net.detector
    detector.eval()

    data_dir = Path(dataset_dir) if dataset_dir is not None else Path(cfg.target_eval_dir)
    manifest, samples = load_dataset(data_dir)
    manifest.check_compatible(cfg.detector.image_size, cfg.detector.num_classes)

    num_classes = cfg.detector.num_classes
    result, detections = evaluate(detector, samples, num_classes, progress=True)
    name = _eval_name(ckpt)
    out_dir = spec.reports_root / "eval"
    indices = [s.index for s in samples]
    det_path = save_detections(
        out_dir / f"{name}_detections.json", detections, indices, dataset=manifest.split
    )

    report: dict = {
        "run_id": name,
        "checkpoint": str(ckpt),
        "dataset": str(data_dir),
        "config_hash": spec.config_hash(),
        "code_version": CODE_VERSION,
        "mode": mode.value,
        "xi": cfg.xi,
        "seed": cfg.seed,
        "iteration": int(payload["iteration"]),
        "eval": result.to_dict(),
    }

    if compare is not None:
        ref_indices, ref_dets, _ = load_detections(compare)
        by_index = dict(zip(ref_indices, ref_dets))
        missing = [i for i in indices if i not in by_index]
        if missing:
            raise ConfigError(f"{compare} has no detections for images {missing[:5]}")
        analysis = error_analysis(
            [by_index[i] for i in indices],
            detections,
            [s.evaluation_labels() for s in samples],
            num_classes,
        )
        report["error_analysis"] = analysis.to_dict()
        report["compare"] = str(compare)

    features = collect_instance_features(detector, samples)
    try:
        report["variance"] = class_variance(features, seed=cfg.seed).to_dict()
    except ValueError as e:
        log.warning(f"Variance report skipped: {e}")
        report["variance"] = None

    names = class_names(num_classes)
    plot_pr_curves(result.curves, names, out_dir / f"{name}_pr.png", title=f"PR curves: {name}")
    plot_feature_projection(features, names, out_dir / f"{name}_features.png")
    _plot_detection_panels(det_path, name, compare, samples, names, out_dir / f"{name}_detections.png")
    history_path = ckpt.parent / HISTORY_FILE
    if history_path.exists():
        records = TrainHistory.load(history_path).as_dicts()
        plot_loss_curves(records, out_dir / f"{name}_loss.png", title=f"Losses: {ckpt.parent.name}")

    write_json(out_dir / f"{name}_eval.json", report)
    log.info(f"Eval {name}: mAP {result.map:.4f}")
    return report


def cmd_plot(spec: ExperimentSpec, run_dirs: Sequence[PathLike] = ()) -> List[Path]:
    """Loss curves (train and test) for the given runs, or every run under `<out>/runs`."""
    dirs = [Path(d) for d in run_dirs]
    if not dirs:
        if not spec.runs_root.exists():
            raise ConfigError(f"no runs under {spec.runs_root}")
        dirs = sorted(p for p in spec.runs_root.iterdir() if (p / HISTORY_FILE).exists())

    written: List[Path] = []
    for run_dir in dirs:
        history_path = run_dir / HISTORY_FILE
        if history_path.exists():
            records = TrainHistory.load(history_path).as_dicts()
        elif (run_dir / METRICS_FILE).exists():
            with open(run_dir / METRICS_FILE, "r", encoding="utf-8") as f:
                records = json.load(f)["history"]
        else:
            raise ConfigError(f"{run_dir} has no training history")
        if not records:
            get_logger().warning(f"{run_dir} has an empty history, nothing to plot")
            continue
        path = spec.reports_root / "plots" / f"{run_dir.name}_loss.png"
        written.append(plot_loss_curves(records, path, title=f"Losses: {run_dir.name}"))
    return written
