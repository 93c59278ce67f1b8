"""
Experiment specification: one YAML file with dataset, detector, training
and experiment sections, plus scalar CLI overrides.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, Union

from common.config_reader import ConfigError, ConfigReader, config_hash
from datagen.shape_generator import DatasetConfig
from detector.config import DetectorConfig
from training.ablation_mode import AblationMode
from training.train_config import TrainConfig

CODE_VERSION = "0.1.0"
OUTPUT_ROOT_ENV = "UADAN_OUTPUT_ROOT"
DEFAULT_CONFIG = "cfg/default.yaml"
DEFAULT_XI_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: DatasetConfig
    train: TrainConfig
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    xi_values: Tuple[float, ...] = DEFAULT_XI_GRID
    output_root: Path = field(default_factory=lambda: Path("output"))
    workers: int = 1
    config_path: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if any(xi < 0 for xi in self.xi_values):
            raise ConfigError("xi values must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def data_root(self) -> Path:
        return self.output_root / "data"

    @property
    def runs_root(self) -> Path:
        return self.output_root / "runs"

    @property
    def reports_root(self) -> Path:
        return self.output_root / "reports"

    def train_config(
        self,
        seed: Optional[int] = None,
        xi: Optional[float] = None,
        mode: Optional[AblationMode] = None,
    ) -> TrainConfig:
        """Training config of one run, reading datasets from the data root."""
        return self.train.with_data_root(self.data_root).with_overrides(seed=seed, xi=xi, mode=mode)

    def config_hash(self) -> str:
        return config_hash(
            {
                "dataset": self.dataset.to_dict(),
                "train": self.train.to_dict(),
                "seeds": list(self.seeds),
                "xi_values": list(self.xi_values),
            }
        )

    def ensure_output(self) -> Path:
        try:
            self.output_root.mkdir(parents=True, exist_ok=True)
            marker = self.output_root / ".write_check"
            marker.write_text("ok", encoding="utf-8")
            marker.unlink()
        except OSError as e:
            raise ConfigError(f"output directory {self.output_root} is not writable: {e}") from e
        return self.output_root

    @staticmethod
    def from_file(
        path: Union[str, Path, None] = DEFAULT_CONFIG,
        seed: Optional[int] = None,
        xi: Optional[float] = None,
        mode: Optional[str] = None,
        iters: Optional[int] = None,
        out: Optional[str] = None,
        workers: Optional[int] = None,
    ) -> ExperimentSpec:
        """Load a spec; scalar flags override the file, --out and the env var the output root."""
        reader = ConfigReader(path)
        if path is not None and reader.path is None:
            raise ConfigError(f"config file {path} not found")

        dataset = DatasetConfig.from_reader(reader.section("dataset"))
        detector = DetectorConfig.from_reader(
            reader.section("detector"), dataset.image_size, dataset.num_classes
        )
        train = TrainConfig.from_reader(reader.section("training"), detector)

        exp = reader.section("experiment")
        seeds = tuple(int(s) for s in exp.get_config_def("seeds", list, [0, 1, 2, 3, 4]))
        xi_values = tuple(float(x) for x in exp.get_config_def("xi_values", list, list(DEFAULT_XI_GRID)))
        output_root = exp.get_config_def("output_root", str, "output")
        n_workers = exp.get_config_def("workers", int, 1)

        if seed is not None:
            dataset = replace(dataset, seed=seed)
            seeds = (seed,)
        try:
            parsed_mode = AblationMode.parse(mode) if mode is not None else None
        except ValueError as e:
            raise ConfigError(str(e)) from e
        train = train.with_overrides(
            seed=seed if seed is not None else seeds[0], xi=xi, mode=parsed_mode, iters=iters
        )
        if xi is not None:
            xi_values = (xi,)

        root = out or os.environ.get(OUTPUT_ROOT_ENV) or output_root
        return ExperimentSpec(
            dataset=dataset,
            train=train,
            seeds=seeds,
            xi_values=xi_values,
            output_root=Path(root),
            workers=workers if workers is not None else n_workers,
            config_path=str(reader.path) if reader.path is not None else None,
        )


def run_id(mode: AblationMode, xi: float, seed: int) -> str:
    return f"{mode.value}_xi{xi:g}_seed{seed}"
