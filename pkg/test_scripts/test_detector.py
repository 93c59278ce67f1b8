"""Backbone, RPN, ROI pooling, RCNN head and checkpoints."""

import math

import numpy as np
import pytest
import torch

from common.config_reader import ConfigError
from detector.backbone import Backbone, image_to_tensor
from detector.box_ops import clip_boxes, decode, encode, generate_anchors, valid_boxes
from detector.checkpoint import CheckpointMismatchError, load_checkpoint, save_checkpoint
from detector.config import DetectorConfig
from detector.detector import ScoredBox, TwoStageDetector, postprocess
from detector.rcnn import DetectionSet, RCNNHead
from detector.roi_pool import DegenerateRoiError, roi_pool
from detector.rpn import ProposalMap, RPNHead, select_proposals


def _iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def test_forward_shapes(tiny_detector_cfg):
    det = TwoStageDetector(tiny_detector_cfg)
    image = torch.rand(1, 3, 32, 32)
    extra = torch.tensor([[4.0, 4.0, 16.0, 16.0]])
    out = det(image, extra_boxes=extra)

    assert out.features.shape == (8, 8, 8)
    assert out.proposal_map.objectness.shape == (8, 8, 3)
    assert out.proposal_map.box_deltas.shape == (8, 8, 3, 4)
    p = out.num_proposals
    assert 1 <= p <= tiny_detector_cfg.train_top_k
    assert out.instance_features.shape == (p + 1, 16)
    assert out.detections.class_dist.shape == (p + 1, 4)
    assert torch.equal(out.roi_boxes[-1], extra[0])


def test_backbone_rejects_wrong_shape(tiny_detector_cfg):
    backbone = Backbone(tiny_detector_cfg)
    with pytest.raises(ConfigError):
        backbone(torch.rand(1, 3, 16, 32))
    with pytest.raises(ConfigError):
        image_to_tensor(np.zeros((32, 32)))


def test_backbone_is_deterministic(tiny_detector_cfg):
    backbone = Backbone(tiny_detector_cfg)
    image = torch.rand(1, 3, 32, 32)
    assert torch.equal(backbone(image), backbone(image.clone()))


def test_config_rejects_bad_stride():
    with pytest.raises(ConfigError):
        DetectorConfig(image_size=(30, 30), stride=4)
    with pytest.raises(ConfigError):
        DetectorConfig(stride=3)


def test_rcnn_head_gradient_matches_finite_differences():
    head = RCNNHead(DetectorConfig(image_size=(32, 32), instance_dim=6, head_init_std=0.5)).double()
    boxes = torch.tensor([[2.0, 2.0, 10.0, 10.0], [5.0, 5.0, 20.0, 25.0]], dtype=torch.float64)
    features = torch.randn(2, 6, dtype=torch.float64, requires_grad=True)

    def fn(x):
        return head(x, boxes, (32, 32)).class_dist

    assert torch.autograd.gradcheck(fn, (features,), eps=1e-6, atol=1e-5)


def test_zero_init_heads_are_uninformative():
    cfg = DetectorConfig(image_size=(32, 32), channels=8, instance_dim=16, head_init_std=0.0)
    det = TwoStageDetector(cfg)
    out = det(torch.rand(1, 3, 32, 32))

    assert torch.allclose(out.proposal_map.objectness, torch.full((8, 8, 3), 0.5))
    dist = out.detections.class_dist
    assert torch.allclose(dist, torch.full_like(dist, 0.25))
    assert torch.allclose(out.detections.refined_boxes, out.roi_boxes)


def test_anchor_centres():
    anchors = generate_anchors((2, 3), 8, (8, 16))
    assert anchors.shape == (2, 3, 2, 4)
    assert anchors[1, 2, 0].tolist() == [16.0, 8.0, 24.0, 16.0]
    assert anchors[0, 0, 1].tolist() == [-4.0, -4.0, 12.0, 12.0]


def test_zero_deltas_decode_to_anchors():
    anchors = generate_anchors((4, 4), 8, (8, 16, 24)).reshape(-1, 4)
    assert torch.allclose(decode(anchors, torch.zeros_like(anchors)), anchors)


def test_encode_decode_inverse():
    ref = torch.tensor([[0.0, 0.0, 8.0, 8.0], [10.0, 4.0, 30.0, 12.0]], dtype=torch.float64)
    target = torch.tensor([[1.0, 1.0, 9.0, 9.0], [12.0, 2.0, 26.0, 20.0]], dtype=torch.float64)
    assert torch.allclose(decode(ref, encode(ref, target)), target)


def test_clip_and_valid_boxes():
    boxes = torch.tensor([[-4.0, -2.0, 40.0, 10.0], [5.0, 5.0, 5.0, 9.0]])
    clipped = clip_boxes(boxes, (32, 32))
    assert clipped[0].tolist() == [0.0, 0.0, 32.0, 10.0]
    assert valid_boxes(clipped).tolist() == [True, False]


def _flat_map(u: int, v: int, r: int, dtype=torch.float32) -> ProposalMap:
    return ProposalMap(
        objectness=torch.full((u, v, r), 0.1, dtype=dtype),
        box_deltas=torch.zeros((u, v, r, 4), dtype=dtype),
    )


def test_select_proposals_keeps_dominant_anchor():
    pm = _flat_map(4, 4, 1)
    pm.objectness[2, 1, 0] = 0.9
    anchors = generate_anchors((4, 4), 8, (8,))
    proposals = select_proposals(pm, anchors, top_k=1, nms_iou=0.7, image_size=(32, 32))
    assert len(proposals) == 1
    assert proposals.boxes[0].tolist() == [8.0, 16.0, 16.0, 24.0]
    assert proposals.grid_origin[0].tolist() == [2, 1, 0]
    assert float(proposals.scores[0]) == pytest.approx(0.9)


def test_select_proposals_suppresses_overlapping_pair():
    pm = _flat_map(1, 1, 2)
    pm.objectness[0, 0, 0] = 0.8
    pm.objectness[0, 0, 1] = 0.6
    # 8x8 and 10x10 squares on the same centre overlap at IoU 0.64
    anchors = generate_anchors((1, 1), 32, (8, 10))
    kept = select_proposals(pm, anchors, top_k=5, nms_iou=0.5, image_size=(32, 32))
    assert len(kept) == 1
    assert kept.grid_origin[0].tolist() == [0, 0, 0]
    both = select_proposals(pm, anchors, top_k=5, nms_iou=0.7, image_size=(32, 32))
    assert len(both) == 2


def test_select_proposals_rejects_bad_arguments():
    pm = _flat_map(2, 2, 1)
    anchors = generate_anchors((2, 2), 8, (8,))
    with pytest.raises(ValueError):
        select_proposals(pm, anchors, top_k=0, nms_iou=0.5, image_size=(16, 16))
    with pytest.raises(ValueError):
        select_proposals(pm, anchors, top_k=1, nms_iou=0.0, image_size=(16, 16))


def test_select_proposals_matches_greedy_oracle():
    gen = torch.Generator().manual_seed(4)
    u, v, r, stride = 8, 8, 3, 4
    pm = ProposalMap(
        objectness=torch.rand((u, v, r), generator=gen, dtype=torch.float64) * 0.98 + 0.01,
        box_deltas=torch.randn((u, v, r, 4), generator=gen, dtype=torch.float64) * 0.2,
    )
    anchors = generate_anchors((u, v), stride, (8, 16, 24), dtype=torch.float64)
    top_k, thr = 20, 0.5
    got = select_proposals(pm, anchors, top_k, thr, image_size=(32, 32))

    boxes = clip_boxes(decode(anchors.reshape(-1, 4), pm.box_deltas.reshape(-1, 4)), (32, 32))
    scores = pm.objectness.reshape(-1)
    order = sorted(range(len(scores)), key=lambda i: -float(scores[i]))
    kept = []
    for i in order:
        b = boxes[i].tolist()
        if not (b[2] > b[0] and b[3] > b[1]):
            continue
        if all(_iou(b, boxes[j].tolist()) <= thr for j in kept):
            kept.append(i)
        if len(kept) == top_k:
            break

    expected_origin = [[i // (v * r), (i // r) % v, i % r] for i in kept]
    assert got.grid_origin.tolist() == expected_origin
    assert torch.allclose(got.boxes, boxes[kept])


def test_roi_pool_identity_and_constant():
    grid = torch.arange(16, dtype=torch.float32).view(1, 4, 4)
    assert torch.equal(roi_pool(grid, (0, 0, 4, 4), 4), grid)

    constant = torch.full((2, 6, 6), 3.5)
    pooled = roi_pool(constant, (1.0, 1.0, 5.0, 4.0), 3)
    assert pooled.shape == (2, 3, 3)
    assert torch.all(pooled == 3.5)


def test_roi_pool_bins_follow_floor_ceil_ranges():
    gen = torch.Generator().manual_seed(1)
    grid = torch.randn((10, 10), generator=gen)
    # covers rows 1..5 and columns 2..8
    box = (2.0, 1.0, 9.0, 6.0)
    m = 3
    pooled = roi_pool(grid, box, m)
    region = grid[1:6, 2:9]
    rows, cols = region.shape
    for i in range(m):
        r0, r1 = math.floor(i * rows / m), math.ceil((i + 1) * rows / m)
        for j in range(m):
            c0, c1 = math.floor(j * cols / m), math.ceil((j + 1) * cols / m)
            assert float(pooled[i, j]) == float(region[r0:r1, c0:c1].max())


def test_roi_pool_scales_by_stride():
    grid = torch.arange(16, dtype=torch.float32).view(4, 4)
    pooled = roi_pool(grid, (8.0, 8.0, 16.0, 16.0), 1, stride=4)
    assert float(pooled[0, 0]) == 15.0


def test_roi_pool_degenerate_box():
    grid = torch.zeros((4, 4))
    with pytest.raises(DegenerateRoiError, match="degenerate ROI"):
        roi_pool(grid, (3.0, 1.0, 3.0, 2.0), 2)
    with pytest.raises(DegenerateRoiError):
        roi_pool(grid, (10.0, 10.0, 12.0, 12.0), 2)


def test_class_distribution_rows_on_simplex():
    cfg = DetectorConfig(image_size=(32, 32), instance_dim=8, head_init_std=1.0)
    head = RCNNHead(cfg)
    features = torch.randn(1000, 8) * 3.0
    boxes = torch.tensor([[0.0, 0.0, 8.0, 8.0]]).expand(1000, 4)
    dist = head(features, boxes, (32, 32)).class_dist
    assert torch.all(dist >= 0)
    assert torch.allclose(dist.sum(dim=1), torch.ones(1000), atol=1e-5)


def test_background_dominant_detector_emits_nothing(tiny_detector_cfg):
    det = TwoStageDetector(tiny_detector_cfg)
    with torch.no_grad():
        det.rcnn.classifier.weight.zero_()
        det.rcnn.classifier.bias.copy_(torch.tensor([10.0, 0.0, 0.0, 0.0]))
    image = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
    assert det.detect(image) == []
    assert det.training


def test_postprocess_thresholds_and_suppresses():
    dist = torch.tensor(
        [
            [0.05, 0.90, 0.03, 0.02],
            [0.10, 0.80, 0.05, 0.05],
            [0.10, 0.05, 0.80, 0.05],
            [0.70, 0.10, 0.10, 0.10],
        ]
    )
    boxes = torch.tensor(
        [[0.0, 0.0, 10.0, 10.0], [1.0, 0.0, 10.0, 10.0], [1.0, 0.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]]
    )
    detections = DetectionSet(
        class_logits=torch.log(dist),
        class_dist=dist,
        box_deltas=torch.zeros(4, 4),
        refined_boxes=boxes,
        source_boxes=boxes,
    )
    result = postprocess(detections, score_threshold=0.5, nms_iou=0.5)
    assert len(result) == 2
    assert result[0] == ScoredBox(class_id=1, score=pytest.approx(0.9), box=(0.0, 0.0, 10.0, 10.0))
    assert result[1].class_id == 2
    assert result[1].score == pytest.approx(0.8)


def test_rpn_head_outputs_probabilities(tiny_detector_cfg):
    head = RPNHead(tiny_detector_cfg)
    pm = head(torch.randn(1, 8, 8, 8))
    assert pm.grid_shape == (8, 8, 3)
    assert torch.all((pm.objectness > 0) & (pm.objectness < 1))


def test_checkpoint_round_trip(tmp_path, tiny_detector_cfg):
    det = TwoStageDetector(tiny_detector_cfg)
    path = save_checkpoint(tmp_path / "ckpt.pt", det, tiny_detector_cfg.config_hash(), 12, {"mode": "UaDAN"})

    fresh = TwoStageDetector(tiny_detector_cfg)
    payload = load_checkpoint(path, fresh, tiny_detector_cfg.config_hash())
    assert payload["iteration"] == 12
    assert payload["mode"] == "UaDAN"
    for key, value in det.state_dict().items():
        assert torch.equal(value, fresh.state_dict()[key])

    other = DetectorConfig(image_size=(32, 32), channels=16, instance_dim=16)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, TwoStageDetector(other), other.config_hash())
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt", fresh)


def test_checkpoint_shape_mismatch_without_hash(tmp_path, tiny_detector_cfg):
    path = save_checkpoint(tmp_path / "ckpt.pt", TwoStageDetector(tiny_detector_cfg), "any", 1)
    other = DetectorConfig(image_size=(32, 32), channels=16, instance_dim=16)
    with pytest.raises(CheckpointMismatchError, match="does not fit"):
        load_checkpoint(path, TwoStageDetector(other))
