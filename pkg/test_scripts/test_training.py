"""Detection loss, step assembly per mode, the training loop and its files."""

import json
import math
from dataclasses import replace

import pytest
import torch

from datagen.dataset_io import DatasetMismatchError
from datagen.sample import BoxLabel
from adaptation.grl import grl
from adaptation.losses import image_tda_loss
from detector.backbone import image_to_tensor
from detector.config import DetectorConfig
from detector.rcnn import DetectionSet
from detector.rpn import EPS, ProposalMap
from training import trainer as trainer_module
from training.ablation_mode import AblationMode
from training.detection_loss import MissingLabelsError, SamplingConfig, detection_loss, match_anchors
from training.history import HistoryRecord, IntervalMeter, TrainHistory
from training.network import UadanNetwork, compute_step_losses, supervised_loss
from training.train_config import LrSchedule, TrainConfig
from training.trainer import (
    FINAL_CHECKPOINT,
    HISTORY_FILE,
    LAST_CHECKPOINT,
    TrainingData,
    TrainingDivergedError,
    build_optimizer,
    sample_order,
    train,
)

GT = [BoxLabel(class_id=2, box=(1.0, 1.0, 9.0, 9.0))]
ANCHOR = torch.tensor([[[[0.0, 0.0, 8.0, 8.0]]]])


def _single_anchor_map(p: float, deltas) -> ProposalMap:
    return ProposalMap(
        objectness=torch.tensor([[[p]]], dtype=torch.float64),
        box_deltas=torch.tensor([[[deltas]]], dtype=torch.float64),
    )


def _detections(logits, deltas, boxes) -> DetectionSet:
    logits = torch.tensor(logits, dtype=torch.float64)
    boxes = torch.tensor(boxes, dtype=torch.float64)
    return DetectionSet(
        class_logits=logits,
        class_dist=torch.softmax(logits, dim=1),
        box_deltas=torch.tensor(deltas, dtype=torch.float64),
        refined_boxes=boxes,
        source_boxes=boxes,
    )


def _state_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_missing_labels_rejected(labelled_sample, tiny_detector_cfg):
    pm = _single_anchor_map(0.5, [0.0, 0.0, 0.0, 0.0])
    det = _detections([[0.0, 0.0, 0.0, 0.0]], [[0.0] * 4], [[1.0, 1.0, 9.0, 9.0]])
    with pytest.raises(MissingLabelsError):
        detection_loss(pm, ANCHOR, det, None)

    detector = UadanNetwork(TrainConfig(detector=tiny_detector_cfg)).detector
    image = image_to_tensor(labelled_sample.image)
    with pytest.raises(MissingLabelsError):
        supervised_loss(detector, image, None, SamplingConfig())


def test_single_anchor_hand_computed_loss():
    pm = _single_anchor_map(0.7, [0.1, 0.3, -0.2, 2.0])
    det = _detections([[0.0, 0.0, 0.0, 0.0]], [[0.0] * 4], [[1.0, 1.0, 9.0, 9.0]])
    loss = detection_loss(pm, ANCHOR, det, GT)
    assert float(loss.rpn_cls) == pytest.approx(-math.log(0.7), rel=1e-9)
    assert float(loss.rpn_reg) == pytest.approx(1.535625, rel=1e-9)
    assert float(loss.rcnn_cls) == pytest.approx(math.log(4), rel=1e-9)
    assert float(loss.rcnn_reg) == pytest.approx(0.0, abs=1e-12)
    assert float(loss.total) == pytest.approx(-math.log(0.7) + 1.535625 + math.log(4), rel=1e-9)


def test_perfect_predictions_give_near_zero_loss():
    # exact regression targets for anchor (0, 0, 8, 8) onto (1, 1, 9, 9)
    pm = _single_anchor_map(1.0 - EPS, [0.125, 0.125, 0.0, 0.0])
    det = _detections([[-20.0, -20.0, 20.0, -20.0]], [[0.0] * 4], [[1.0, 1.0, 9.0, 9.0]])
    loss = detection_loss(pm, ANCHOR, det, GT)
    assert float(loss.total) < 1e-5


def test_best_anchor_is_always_positive():
    anchors = torch.tensor([[0.0, 0.0, 4.0, 4.0], [20.0, 20.0, 30.0, 30.0]])
    gt = torch.tensor([[0.0, 0.0, 12.0, 12.0]])
    labels, matched = match_anchors(anchors, gt, pos_iou=0.5, neg_iou=0.3)
    assert labels.tolist() == [1, 0]
    assert matched[0] == 0


def test_zero_init_losses_are_chance(labelled_sample):
    cfg = TrainConfig(
        detector=DetectorConfig(image_size=(32, 32), channels=8, instance_dim=16, head_init_std=0.0)
    )
    detector = UadanNetwork(cfg).detector
    image = image_to_tensor(labelled_sample.image)
    out = detector(image, extra_boxes=torch.tensor([list(labelled_sample.labels[0].box)]))
    loss = detection_loss(out.proposal_map, detector.anchors, out.detections, labelled_sample.labels)
    assert float(loss.rpn_cls) == pytest.approx(math.log(2), rel=1e-5)
    assert float(loss.rcnn_cls) == pytest.approx(math.log(4), rel=1e-5)


@pytest.mark.parametrize("mode", list(AblationMode))
def test_step_losses_follow_mode(mode, tiny_train_cfg, tiny_data):
    cfg = replace(tiny_train_cfg, mode=mode, xi=1.0)
    net = UadanNetwork(cfg)
    step = compute_step_losses(
        net, tiny_data.source[0], tiny_data.target_train[0], cfg, torch.Generator().manual_seed(0)
    )
    assert math.isfinite(step.breakdown["total"])
    assert step.breakdown["L_det"] > 0
    assert (step.breakdown["L_img"] > 0) == (mode.image_term is not None)
    assert (step.breakdown["L_ins"] > 0) == (mode.instance_term is not None)
    assert (step.target_output is None) == (mode == AblationMode.BASELINE)
    assert tiny_data.target_train[0].held_out.reads == 0


def test_non_baseline_mode_needs_target(tiny_train_cfg, tiny_data):
    cfg = replace(tiny_train_cfg, mode=AblationMode.IMAGE_AL)
    with pytest.raises(ValueError):
        compute_step_losses(UadanNetwork(cfg), tiny_data.source[0], None, cfg)


def _detector_grads(mode: AblationMode, cfg: TrainConfig, data: TrainingData) -> dict:
    cfg = replace(cfg, mode=mode, xi=0.0)
    torch.manual_seed(11)
    net = UadanNetwork(cfg)
    step = compute_step_losses(
        net, data.source[1], data.target_train[2], cfg, torch.Generator().manual_seed(5)
    )
    step.total.backward()
    return {name: p.grad.clone() for name, p in net.detector.named_parameters() if p.grad is not None}


def test_zero_xi_leaves_detector_gradients_untouched(tiny_train_cfg, tiny_data):
    gated = _detector_grads(AblationMode.UADAN, tiny_train_cfg, tiny_data)
    image_only = _detector_grads(AblationMode.IMAGE_UA_AL, tiny_train_cfg, tiny_data)
    assert gated.keys() == image_only.keys()
    for name in gated:
        assert torch.equal(gated[name], image_only[name]), name


def test_zero_xi_instance_loss_stays_zero(tmp_path, tiny_train_cfg, tiny_data):
    cfg = replace(
        tiny_train_cfg,
        xi=0.0,
        mode=AblationMode.UADAN,
        schedule=LrSchedule(lr1=0.001, iters1=400, lr2=0.0001, iters2=100),
        history_interval=100,
        eval_interval=500,
    )
    seen = []

    def check(iteration, breakdown):
        assert breakdown["L_ins"] == 0.0
        seen.append(iteration)

    train(cfg, tmp_path / "xi0", data=tiny_data, on_step=check)
    assert len(seen) == 500


def test_sample_order_is_pure():
    a = sample_order(3, 1, 0, 10)
    assert sorted(a.tolist()) == list(range(10))
    assert a.tolist() == sample_order(3, 1, 0, 10).tolist()
    assert a.tolist() != sample_order(3, 2, 0, 10).tolist()


def test_training_is_deterministic(tmp_path, tiny_train_cfg, tiny_data):
    first = train(tiny_train_cfg, tmp_path / "a", data=tiny_data)
    second = train(tiny_train_cfg, tmp_path / "b", data=tiny_data)
    assert first.history.as_dicts() == second.history.as_dicts()
    assert first.final_eval.map == second.final_eval.map
    a = torch.load(first.final_checkpoint, weights_only=False)["state_dict"]
    b = torch.load(second.final_checkpoint, weights_only=False)["state_dict"]
    assert _state_equal(a, b)


def test_training_never_reads_target_train_labels(tmp_path, tiny_train_cfg, tiny_data):
    result = train(tiny_train_cfg, tmp_path / "run", data=tiny_data)
    assert result.target_label_reads == 0
    assert tiny_data.target_train_reads() == 0
    assert [r.iteration for r in result.history.records] == [2, 4, 6, 8]
    assert result.history.records[1].map is not None
    assert (tmp_path / "run" / HISTORY_FILE).exists()
    assert (tmp_path / "run" / FINAL_CHECKPOINT).exists()


class _Interrupt(RuntimeError):
    pass


def test_resume_matches_uninterrupted_run(tmp_path, tiny_train_cfg, tiny_data):
    reference = train(tiny_train_cfg, tmp_path / "ref", data=tiny_data)

    def stop_at_five(iteration, _):
        if iteration == 5:
            raise _Interrupt()

    with pytest.raises(_Interrupt):
        train(tiny_train_cfg, tmp_path / "cut", data=tiny_data, on_step=stop_at_five)
    assert (tmp_path / "cut" / LAST_CHECKPOINT).exists()

    resumed = train(tiny_train_cfg, tmp_path / "cut", data=tiny_data, resume=True)
    assert [r.iteration for r in resumed.history.records] == [2, 4, 6, 8]
    assert resumed.history.as_dicts() == reference.history.as_dicts()
    a = torch.load(reference.final_checkpoint, weights_only=False)["state_dict"]
    b = torch.load(resumed.final_checkpoint, weights_only=False)["state_dict"]
    assert _state_equal(a, b)


def test_nan_loss_aborts_training(tmp_path, monkeypatch, tiny_train_cfg, tiny_data):
    original = trainer_module.compute_step_losses

    def poisoned(*args, **kwargs):
        step = original(*args, **kwargs)
        step.breakdown["L_det"] = float("nan")
        return step

    monkeypatch.setattr(trainer_module, "compute_step_losses", poisoned)
    with pytest.raises(TrainingDivergedError):
        train(tiny_train_cfg, tmp_path / "nan", data=tiny_data)


def test_dataset_mismatch_rejected(tmp_path, tiny_train_cfg, tiny_data):
    swapped = TrainingData(tiny_data.target_train, tiny_data.target_train, tiny_data.target_eval)
    with pytest.raises(DatasetMismatchError):
        train(tiny_train_cfg, tmp_path / "x", data=swapped)

    bigger = replace(tiny_train_cfg, detector=replace(tiny_train_cfg.detector, image_size=(64, 64)))
    with pytest.raises(DatasetMismatchError):
        train(bigger, tmp_path / "y", data=tiny_data)


def test_schedule_rescale_and_factor():
    schedule = LrSchedule(0.001, 5000, 0.0001, 2000).rescaled(70)
    assert (schedule.iters1, schedule.iters2) == (50, 20)
    assert schedule.factor(49) == 1.0
    assert schedule.factor(50) == pytest.approx(0.1)
    cfg = TrainConfig().with_overrides(iters=70, xi=0.25, mode=AblationMode.IMAGE_AL)
    assert cfg.total_iters == 70
    assert cfg.xi == 0.25 and cfg.mode == AblationMode.IMAGE_AL
    assert cfg.config_hash() != TrainConfig().config_hash()


def test_optimizer_skips_decay_on_biases(tiny_train_cfg):
    net = UadanNetwork(tiny_train_cfg)
    optimizer, scheduler = build_optimizer(net, tiny_train_cfg)
    decay, no_decay = optimizer.param_groups
    assert decay["weight_decay"] == tiny_train_cfg.weight_decay
    assert no_decay["weight_decay"] == 0.0
    assert all(p.dim() > 1 for p in decay["params"])
    assert all(p.dim() == 1 for p in no_decay["params"])
    assert len(decay["params"]) + len(no_decay["params"]) == len(list(net.parameters()))
    assert scheduler.get_last_lr()[0] == pytest.approx(0.001)


def test_history_validation(tmp_path):
    path = tmp_path / "h.jsonl"
    history = TrainHistory(path)
    for it in (2, 4, 6):
        history.append(HistoryRecord(iteration=it, L_det=1.0, L_img=0.0, L_ins=0.0, total=1.0, lr=0.001))
    with pytest.raises(ValueError):
        history.append(HistoryRecord(iteration=6, L_det=1.0, L_img=0.0, L_ins=0.0, total=1.0, lr=0.001))
    with pytest.raises(ValueError):
        history.append(
            HistoryRecord(iteration=8, L_det=float("nan"), L_img=0.0, L_ins=0.0, total=1.0, lr=0.001)
        )

    truncated = TrainHistory.load(path, up_to=4)
    assert [r.iteration for r in truncated.records] == [2, 4]
    assert [r.iteration for r in TrainHistory.load(path).records] == [2, 4]


def test_baseline_overfits_one_image(labelled_sample):
    cfg = TrainConfig(
        detector=DetectorConfig(image_size=(32, 32), channels=16, instance_dim=32, train_top_k=32),
        mode=AblationMode.BASELINE,
    )
    torch.manual_seed(0)
    net = UadanNetwork(cfg)
    optimizer, _ = build_optimizer(net, replace(cfg, weight_decay=0.0))
    generator = torch.Generator().manual_seed(0)
    losses = []
    for _ in range(200):
        step = compute_step_losses(net, labelled_sample, None, cfg, generator)
        optimizer.zero_grad()
        step.total.backward()
        optimizer.step()
        losses.append(step.breakdown["L_det"])
    assert sum(losses[-10:]) / 10 < 0.5 * sum(losses[:10]) / 10


def test_detection_loss_falls_early(tmp_path, tiny_train_cfg, tiny_data):
    cfg = replace(
        tiny_train_cfg,
        mode=AblationMode.BASELINE,
        schedule=LrSchedule(lr1=0.01, iters1=90, lr2=0.001, iters2=10),
        history_interval=1,
        eval_interval=1000,
    )
    train(cfg, tmp_path / "run", data=tiny_data)
    with open(tmp_path / "run" / HISTORY_FILE, "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    l_det = {r["iteration"]: r["L_det"] for r in records}
    assert sorted(l_det) == list(range(1, 101))
    first = [l_det[i] for i in (1, 2, 3)]
    around_ten = [l_det[i] for i in range(8, 13)]
    assert sum(around_ten) / len(around_ten) < sum(first) / len(first)


def _image_domain_loss(net: UadanNetwork, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    features_s = net.detector.backbone(source)
    features_t = net.detector.backbone(target)
    return image_tda_loss(net.image_classifier(grl(features_s)), net.image_classifier(grl(features_t)))


@pytest.mark.parametrize(("part", "rises"), [("image_classifier", False), ("backbone", True)])
def test_one_step_minimax(part, rises, tiny_train_cfg, tiny_data):
    detector = replace(tiny_train_cfg.detector, head_init_std=0.1)
    net = UadanNetwork(replace(tiny_train_cfg, detector=detector, mode=AblationMode.IMAGE_AL)).double()
    source = image_to_tensor(tiny_data.source[0].image).double()
    target = image_to_tensor(tiny_data.target_train[0].image).double()
    module = net.image_classifier if part == "image_classifier" else net.detector.backbone
    optimizer = torch.optim.SGD(module.parameters(), lr=1e-3)

    before = _image_domain_loss(net, source, target)
    optimizer.zero_grad()
    before.backward()
    optimizer.step()
    with torch.no_grad():
        after = _image_domain_loss(net, source, target)
    # the classifier descends on L_img; the reversed gradient makes the backbone ascend
    assert (float(after) > float(before)) == rises
    assert float(after) != float(before)


def test_network_hash_tracks_parameter_shapes(tiny_train_cfg):
    base = tiny_train_cfg.network_hash()
    assert replace(tiny_train_cfg, xi=0.1, seed=7, mode=AblationMode.BASELINE).network_hash() == base
    assert replace(tiny_train_cfg, instance_hidden=32).network_hash() != base
    wider = replace(tiny_train_cfg.detector, channels=16)
    assert replace(tiny_train_cfg, detector=wider).network_hash() != base


def test_interval_meter_keeps_instance_loss_peak():
    meter = IntervalMeter()
    for l_ins in (-0.3, 0.1):
        meter.add({"L_det": 1.0, "L_img": 0.2, "L_ins": l_ins, "total": 1.2})
    assert meter.peak_l_ins == pytest.approx(0.3)
    assert meter.means()["L_ins"] == pytest.approx(-0.1)
    meter.reset()
    assert meter.peak_l_ins == 0.0

    # records written before the field existed still load
    old = {"iteration": 2, "L_det": 1.0, "L_img": 0.0, "L_ins": 0.0, "total": 1.0, "lr": 0.001}
    assert HistoryRecord.from_dict(old).max_abs_L_ins == 0.0
