"""Shared fixtures: tiny configs and datasets that train in well under a second per step."""

import os
from pathlib import Path

import numpy as np
import pytest
import torch

from datagen.sample import BoxLabel, DetectionSample, Domain
from datagen.shape_generator import DatasetConfig, generate_benchmark
from datagen.shift import ShiftConfig
from detector.config import DetectorConfig
from training.detection_loss import SamplingConfig
from training.train_config import LrSchedule, TrainConfig
from training.trainer import TrainingData

REPO_ROOT = Path(__file__).resolve().parent.parent
SMOKE_CONFIG = REPO_ROOT / "cfg" / "smoke.yaml"


def pytest_collection_modifyitems(config, items):
    if os.environ.get("UADAN_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set UADAN_RUN_SLOW=1 to run desk-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


TINY_SHIFT = ShiftConfig(
    hue_shift=0.3,
    noise_std=0.05,
    blur_radius=0.8,
    scale_jitter=0.2,
    background_palette=((0.2, 0.24, 0.32),),
)


@pytest.fixture
def tiny_detector_cfg() -> DetectorConfig:
    return DetectorConfig(
        image_size=(32, 32),
        num_classes=3,
        stride=4,
        channels=8,
        instance_dim=16,
        train_top_k=16,
        test_top_k=16,
    )


@pytest.fixture
def tiny_dataset_cfg() -> DatasetConfig:
    return DatasetConfig(
        image_size=(32, 32),
        num_classes=3,
        objects_per_image=(1, 2),
        n_source=6,
        n_target_train=6,
        n_target_eval=4,
        seed=0,
        shift=TINY_SHIFT,
    )


@pytest.fixture
def tiny_train_cfg(tiny_detector_cfg) -> TrainConfig:
    return TrainConfig(
        detector=tiny_detector_cfg,
        schedule=LrSchedule(lr1=0.001, iters1=6, lr2=0.0001, iters2=2),
        sampling=SamplingConfig(rpn_batch=16, rcnn_batch=8),
        instance_hidden=16,
        history_interval=2,
        eval_interval=4,
        test_loss_images=2,
    )


@pytest.fixture
def tiny_data(tiny_dataset_cfg) -> TrainingData:
    splits = generate_benchmark(tiny_dataset_cfg)
    return TrainingData(splits["source"], splits["target_train"], splits["target_eval"])


@pytest.fixture
def labelled_sample() -> DetectionSample:
    rng = np.random.default_rng(3)
    image = rng.random((32, 32, 3)).astype(np.float32)
    labels = [BoxLabel(class_id=2, box=(4.0, 4.0, 16.0, 16.0))]
    return DetectionSample(image=image, domain=Domain.SOURCE, labels=labels, index=0)


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    yield
