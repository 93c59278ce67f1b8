from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from common.config_reader import ConfigError, ConfigReader, config_hash
from detector.config import DetectorConfig
from training.ablation_mode import AblationMode
from training.detection_loss import SamplingConfig
from uncertainty.entropy import DetectionEntropyClasses, EntropyReduction


@dataclass(frozen=True)
class LrSchedule:
    """Two constant phases: lr1 for iters1 iterations, then lr2 for iters2."""

    lr1: float = 0.001
    iters1: int = 5000
    lr2: float = 0.0001
    iters2: int = 2000

    def __post_init__(self) -> None:
        if self.lr1 <= 0 or self.lr2 <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.iters1 < 0 or self.iters2 < 0 or self.iters1 + self.iters2 <= 0:
            raise ConfigError("schedule needs a positive iteration count")

    @property
    def total(self) -> int:
        return self.iters1 + self.iters2

    def factor(self, iteration: int) -> float:
        """Multiplier on lr1 at a 0-based iteration, for LambdaLR."""
        return 1.0 if iteration < self.iters1 else self.lr2 / self.lr1

    def rescaled(self, total: int) -> LrSchedule:
        """Same phase proportions over a different total."""
        if total <= 0:
            raise ConfigError(f"iteration budget must be > 0, got {total}")
        iters1 = int(round(total * self.iters1 / self.total))
        return replace(self, iters1=iters1, iters2=total - iters1)


@dataclass(frozen=True)
class TrainConfig:
    source_dir: str = "data/source"
    target_train_dir: str = "data/target_train"
    target_eval_dir: str = "data/target_eval"
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    xi: float = 0.5
    grl_lambda: float = 1.0
    seed: int = 0
    mode: AblationMode = AblationMode.UADAN
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    entropy_reduction: EntropyReduction = EntropyReduction.MEAN
    detection_entropy_classes: DetectionEntropyClasses = DetectionEntropyClasses.ALL
    instance_hidden: int = 256
    instance_dropout: float = 0.5
    history_interval: int = 100
    eval_interval: int = 500
    eval_limit: Optional[int] = None
    eval_score_threshold: float = 0.05
    test_loss_images: int = 50

    def __post_init__(self) -> None:
        for name in ("momentum", "weight_decay", "xi", "grl_lambda", "eval_score_threshold"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if self.momentum >= 1.0:
            raise ConfigError("momentum must be < 1")
        if self.history_interval < 1 or self.eval_interval < 1:
            raise ConfigError("history_interval and eval_interval must be >= 1")
        if self.instance_hidden < 1 or not 0.0 <= self.instance_dropout < 1.0:
            raise ConfigError("instance classifier shape invalid")
        if self.eval_limit is not None and self.eval_limit < 1:
            raise ConfigError("eval_limit must be >= 1")
        if self.test_loss_images < 0:
            raise ConfigError("test_loss_images must be >= 0")

    @property
    def total_iters(self) -> int:
        return self.schedule.total

    def with_overrides(
        self,
        seed: Optional[int] = None,
        xi: Optional[float] = None,
        mode: Optional[AblationMode] = None,
        iters: Optional[int] = None,
    ) -> TrainConfig:
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if xi is not None:
            cfg = replace(cfg, xi=xi)
        if mode is not None:
            cfg = replace(cfg, mode=mode)
        if iters is not None:
            cfg = replace(cfg, schedule=cfg.schedule.rescaled(iters))
        return cfg

    def with_data_root(self, root: Path) -> TrainConfig:
        return replace(
            self,
            source_dir=str(root / "source"),
            target_train_dir=str(root / "target_train"),
            target_eval_dir=str(root / "target_eval"),
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["entropy_reduction"] = self.entropy_reduction.value
        data["detection_entropy_classes"] = self.detection_entropy_classes.value
        return data

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def network_hash(self) -> str:
        """Hash of the fields that decide UadanNetwork parameter shapes."""
        return config_hash(
            {"detector": self.detector.config_hash(), "instance_hidden": self.instance_hidden}
        )

    @staticmethod
    def from_reader(reader: ConfigReader, detector: DetectorConfig) -> TrainConfig:
        d = TrainConfig()
        lr = reader.get_config_def("learning_rate", list, [0.001, 5000, 0.0001, 2000])
        if len(lr) != 4:
            raise ConfigError("learning_rate must be [lr1, iters1, lr2, iters2]")
        try:
            mode = AblationMode.parse(reader.get_config_def("mode", str, d.mode.value))
            reduction = EntropyReduction(
                reader.get_config_def("entropy_reduction", str, d.entropy_reduction.value)
            )
            classes = DetectionEntropyClasses(
                reader.get_config_def(
                    "detection_entropy_classes", str, d.detection_entropy_classes.value
                )
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

        return TrainConfig(
            source_dir=reader.get_config_def("source_dir", str, d.source_dir),
            target_train_dir=reader.get_config_def("target_train_dir", str, d.target_train_dir),
            target_eval_dir=reader.get_config_def("target_eval_dir", str, d.target_eval_dir),
            detector=detector,
            schedule=LrSchedule(float(lr[0]), int(lr[1]), float(lr[2]), int(lr[3])),
            momentum=reader.get_config_def("momentum", float, d.momentum),
            weight_decay=reader.get_config_def("weight_decay", float, d.weight_decay),
            xi=reader.get_config_def("xi", float, d.xi),
            grl_lambda=reader.get_config_def("grl_lambda", float, d.grl_lambda),
            seed=reader.get_config_def("seed", int, d.seed),
            mode=mode,
            sampling=SamplingConfig.from_reader(reader.section("sampling")),
            entropy_reduction=reduction,
            detection_entropy_classes=classes,
            instance_hidden=reader.get_config_def("instance_hidden", int, d.instance_hidden),
            instance_dropout=reader.get_config_def("instance_dropout", float, d.instance_dropout),
            history_interval=reader.get_config_def("history_interval", int, d.history_interval),
            eval_interval=reader.get_config_def("eval_interval", int, d.eval_interval),
            eval_limit=reader.get_config_def("eval_limit", int, None),
            eval_score_threshold=reader.get_config_def(
                "eval_score_threshold", float, d.eval_score_threshold
            ),
            test_loss_images=reader.get_config_def("test_loss_images", int, d.test_loss_images),
        )
