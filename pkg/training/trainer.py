"""
End-to-end adaptation training: one source and one target image per
iteration, one SGD step over detector and both domain classifiers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch.optim import SGD
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from common.logger import get_logger
from datagen.dataset_io import DatasetMismatchError, load_dataset
from datagen.sample import DetectionSample, Domain
from detector.backbone import image_to_tensor
from detector.checkpoint import CheckpointMismatchError, load_checkpoint, save_checkpoint
from evaluation.evaluator import EvalResult, evaluate
from training.history import HistoryRecord, IntervalMeter, TrainHistory
from training.network import UadanNetwork, compute_step_losses, supervised_loss
from training.train_config import TrainConfig

StepCallback = Callable[[int, Dict[str, float]], None]

LAST_CHECKPOINT = "last.pt"
BEST_CHECKPOINT = "best.pt"
FINAL_CHECKPOINT = "final.pt"
HISTORY_FILE = "history.jsonl"


class TrainingDivergedError(RuntimeError):
    pass


class UnsupervisedContractError(RuntimeError):
    pass


@dataclass
class TrainingData:
    source: List[DetectionSample]
    target_train: List[DetectionSample]
    target_eval: List[DetectionSample]

    @staticmethod
    def load(cfg: TrainConfig) -> TrainingData:
        size, classes = cfg.detector.image_size, cfg.detector.num_classes
        splits = []
        for directory in (cfg.source_dir, cfg.target_train_dir, cfg.target_eval_dir):
            manifest, samples = load_dataset(directory)
            manifest.check_compatible(size, classes)
            splits.append(samples)
        return TrainingData(*splits)

    def validate(self, cfg: TrainConfig) -> None:
        """Dataset and config must agree before any training happens."""
        expected = tuple(cfg.detector.image_size)
        for name, samples, domain in (
            ("source", self.source, Domain.SOURCE),
            ("target_train", self.target_train, Domain.TARGET),
            ("target_eval", self.target_eval, Domain.TARGET),
        ):
            if not samples:
                raise DatasetMismatchError(f"{name} split is empty")
            for s in samples:
                if s.domain != domain:
                    raise DatasetMismatchError(f"{name} contains a {s.domain.value} sample")
                if (s.height, s.width) != expected:
                    raise DatasetMismatchError(
                        f"{name} image {(s.height, s.width)} != detector image_size {expected}"
                    )

    def target_train_reads(self) -> int:
        return sum(s.held_out.reads for s in self.target_train if s.held_out is not None)


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    best_checkpoint: Optional[Path]
    history: TrainHistory
    final_eval: EvalResult
    best_map: float
    best_iteration: int
    target_label_reads: int


def sample_order(seed: int, epoch: int, stream: int, n: int) -> np.ndarray:
    """Permutation of one epoch; a pure function so resumed runs see the same order."""
    return np.random.default_rng([seed, epoch, stream]).permutation(n)


def build_optimizer(net: torch.nn.Module, cfg: TrainConfig) -> Tuple[SGD, LambdaLR]:
    """SGD with momentum; weight decay on weight tensors only, never on biases."""
    decay, no_decay = [], []
    for _, param in sorted(net.named_parameters(), key=lambda kv: kv[0]):
        (decay if param.dim() > 1 else no_decay).append(param)
    optimizer = SGD(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.schedule.lr1,
        momentum=cfg.momentum,
    )
    scheduler = LambdaLR(optimizer, lr_lambda=cfg.schedule.factor)
    return optimizer, scheduler


class Trainer:
    def __init__(
        self,
        cfg: TrainConfig,
        run_dir: Union[str, Path],
        data: Optional[TrainingData] = None,
        progress: bool = False,
    ) -> None:
        self.log = get_logger()
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.progress = progress
        self.data = data if data is not None else TrainingData.load(cfg)
        self.data.validate(cfg)

        torch.manual_seed(cfg.seed)
        torch.use_deterministic_algorithms(True, warn_only=True)
        self.net = UadanNetwork(cfg)
        self.optimizer, self.scheduler = build_optimizer(self.net, cfg)
        self.generator = torch.Generator().manual_seed(cfg.seed)
        self.detector_hash = cfg.detector.config_hash()
        self.iteration = 0
        self.best_map = -1.0
        self.best_iteration = 0

    def _pair(self, iteration: int) -> Tuple[DetectionSample, DetectionSample]:
        n_s, n_t = len(self.data.source), len(self.data.target_train)
        s = sample_order(self.cfg.seed, iteration // n_s, 0, n_s)[iteration % n_s]
        t = sample_order(self.cfg.seed, iteration // n_t, 1, n_t)[iteration % n_t]
        return self.data.source[int(s)], self.data.target_train[int(t)]

    def _state(self) -> dict:
        return {
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "sampling_rng": self.generator.get_state(),
            "best_map": self.best_map,
            "best_iteration": self.best_iteration,
            "train_config_hash": self.cfg.config_hash(),
            "network_hash": self.cfg.network_hash(),
            "mode": self.cfg.mode.value,
            "xi": self.cfg.xi,
            "seed": self.cfg.seed,
        }

    def _save(self, name: str) -> Path:
        return save_checkpoint(
            self.run_dir / name, self.net, self.detector_hash, self.iteration, self._state()
        )

    def _resume(self) -> TrainHistory:
        payload = load_checkpoint(self.run_dir / LAST_CHECKPOINT, self.net, self.detector_hash)
        if payload.get("train_config_hash") != self.cfg.config_hash():
            raise CheckpointMismatchError("last.pt was written by a different training config")
        self.optimizer.load_state_dict(payload["optimizer"])
        self.scheduler.load_state_dict(payload["scheduler"])
        torch.set_rng_state(payload["torch_rng"])
        self.generator.set_state(payload["sampling_rng"])
        self.iteration = int(payload["iteration"])
        self.best_map = float(payload["best_map"])
        self.best_iteration = int(payload["best_iteration"])
        self.log.info(f"Resumed {self.run_dir} at iteration {self.iteration}")
        return TrainHistory.load(self.run_dir / HISTORY_FILE, up_to=self.iteration)

    def train_step(
        self, source: DetectionSample, target: Optional[DetectionSample]
    ) -> Dict[str, float]:
        self.net.train()
        step = compute_step_losses(self.net, source, target, self.cfg, self.generator)
        bad = {k: v for k, v in step.breakdown.items() if not math.isfinite(v)}
        if bad:
            self.log.error(f"Loss diverged at iteration {self.iteration + 1}: {step.breakdown}")
            raise TrainingDivergedError(
                f"non-finite loss at iteration {self.iteration + 1} ({self.cfg.mode.value}): {bad}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        step.total.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.iteration += 1
        return step.breakdown

    @torch.no_grad()
    def test_loss(self) -> Optional[float]:
        """Mean supervised loss on target_eval, read through the evaluation path."""
        samples = self.data.target_eval[: self.cfg.test_loss_images]
        if not samples:
            return None
        detector = self.net.detector
        detector.eval()
        generator = torch.Generator().manual_seed(self.cfg.seed)
        total = 0.0
        for s in samples:
            image = image_to_tensor(s.image).to(detector.anchors.dtype)
            loss, _ = supervised_loss(detector, image, s.evaluation_labels(), self.cfg.sampling, generator)
            total += float(loss)
        detector.train()
        return total / len(samples)

    def run_eval(self) -> EvalResult:
        eval_set = self.data.target_eval
        if self.cfg.eval_limit is not None:
            eval_set = eval_set[: self.cfg.eval_limit]
        result, _ = evaluate(
            self.net.detector,
            eval_set,
            self.cfg.detector.num_classes,
            score_threshold=self.cfg.eval_score_threshold,
        )
        return result

    def train(self, resume: bool = False, on_step: Optional[StepCallback] = None) -> TrainResult:
        cfg = self.cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if resume and (self.run_dir / LAST_CHECKPOINT).exists():
            history = self._resume()
        else:
            (self.run_dir / HISTORY_FILE).unlink(missing_ok=True)
            history = TrainHistory(self.run_dir / HISTORY_FILE)

        reads_before = self.data.target_train_reads()
        total_iters = cfg.total_iters
        self.log.info(
            f"Training {cfg.mode.value} seed={cfg.seed} xi={cfg.xi} for {total_iters} iterations "
            f"({len(self.data.source)} source, {len(self.data.target_train)} target)"
        )

        meter = IntervalMeter()
        last_eval: Optional[EvalResult] = None
        tick = time.perf_counter()
        steps = range(self.iteration, total_iters)
        if self.progress:
            steps = tqdm(steps, desc=cfg.mode.value, initial=self.iteration, total=total_iters)

        for it in steps:
            source, target = self._pair(it)
            lr = self.optimizer.param_groups[0]["lr"]
            breakdown = self.train_step(source, target if cfg.mode.uses_target else None)
            meter.add(breakdown)
            if on_step is not None:
                on_step(self.iteration, breakdown)

            at_eval = self.iteration % cfg.eval_interval == 0 or self.iteration == total_iters
            at_record = at_eval or self.iteration % cfg.history_interval == 0
            if not at_record:
                continue

            record = HistoryRecord(
                iteration=self.iteration, lr=lr, max_abs_L_ins=meter.peak_l_ins, **meter.means()
            )
            elapsed = time.perf_counter() - tick
            self.log.info(
                f"it {self.iteration}: total {record.total:.4f} L_det {record.L_det:.4f} "
                f"L_img {record.L_img:.4f} L_ins {record.L_ins:.4f} lr {lr:g} "
                f"({elapsed / max(1, meter.steps):.3f} s/it)"
            )
            meter.reset()
            tick = time.perf_counter()

            if at_eval:
                last_eval = self.run_eval()
                record.map = last_eval.map
                record.test_loss = self.test_loss()
                if last_eval.map > self.best_map:
                    self.best_map = last_eval.map
                    self.best_iteration = self.iteration
                    self._save(BEST_CHECKPOINT)
            history.append(record)
            self._save(LAST_CHECKPOINT)

        reads = self.data.target_train_reads() - reads_before
        if reads != 0:
            raise UnsupervisedContractError(f"target_train labels were read {reads} times during training")

        if last_eval is None:
            last_eval = self.run_eval()
        final = self._save(FINAL_CHECKPOINT)
        best = self.run_dir / BEST_CHECKPOINT
        self.log.info(
            f"Finished {cfg.mode.value}: final mAP {last_eval.map:.4f}, "
            f"best {self.best_map:.4f} at iteration {self.best_iteration}"
        )
        return TrainResult(
            run_dir=self.run_dir,
            final_checkpoint=final,
            best_checkpoint=best if best.exists() else None,
            history=history,
            final_eval=last_eval,
            best_map=max(self.best_map, 0.0),
            best_iteration=self.best_iteration,
            target_label_reads=reads,
        )


def train(
    cfg: TrainConfig,
    run_dir: Union[str, Path],
    data: Optional[TrainingData] = None,
    resume: bool = False,
    on_step: Optional[StepCallback] = None,
    progress: bool = False,
) -> TrainResult:
    return Trainer(cfg, run_dir, data, progress=progress).train(resume=resume, on_step=on_step)
