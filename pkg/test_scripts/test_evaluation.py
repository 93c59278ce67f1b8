"""IoU, AP, dataset evaluation, error analysis and feature variance."""

import itertools
import json

import numpy as np
import pytest

from common.config_reader import ConfigError
from datagen.sample import BoxLabel, DetectionSample, Domain
from detector.detector import ScoredBox, TwoStageDetector
from evaluation.detections_io import load_detections, save_detections
from evaluation.error_analysis import error_analysis
from evaluation.evaluator import evaluate, evaluate_detections
from evaluation.metrics import ap_from_flags, average_precision, greedy_match, iou
from evaluation.variance import class_variance, collect_instance_features


def _random_box(rng: np.random.Generator, size: float = 40.0):
    x1, y1 = rng.uniform(0, size - 8, 2)
    w, h = rng.uniform(4, 16, 2)
    return (float(x1), float(y1), float(x1 + w), float(y1 + h))


def _oracle_ap(det_boxes, det_scores, gt_boxes, thr=0.5):
    """Precision/recall at every cut-off of the ranked list, then the upper envelope."""
    order = sorted(range(len(det_scores)), key=lambda i: -det_scores[i])
    if not gt_boxes:
        return None if not det_boxes else 0.0
    points = []
    for k in range(1, len(order) + 1):
        taken = set()
        tp = 0
        for d in order[:k]:
            candidates = [
                (iou(det_boxes[d], g), -j) for j, g in enumerate(gt_boxes) if j not in taken
            ]
            candidates = [c for c in candidates if c[0] >= thr]
            if candidates:
                taken.add(-max(candidates)[1])
                tp += 1
        points.append((tp / len(gt_boxes), tp / k))
    ap, prev_recall = 0.0, 0.0
    for k, (recall, _) in enumerate(points):
        envelope = max(p for _, p in points[k:])
        ap += (recall - prev_recall) * envelope
        prev_recall = recall
    return ap


def test_iou_values():
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 2, 2), (2, 0, 4, 2)) == 0.0
    with pytest.raises(ValueError, match="degenerate box"):
        iou((0, 0, 0, 2), (0, 0, 2, 2))


def test_ap_edge_cases():
    box = (0.0, 0.0, 10.0, 10.0)
    assert average_precision([box], [0.9], [box]) == 1.0
    assert average_precision([], [], []) is None
    assert average_precision([], [], [box]) == 0.0
    assert average_precision([box], [0.9], []) == 0.0
    assert ap_from_flags([True, False, True], 2) == pytest.approx(0.5 + 0.5 * 2 / 3)


def test_greedy_match_prefers_highest_iou():
    gt = [(0.0, 0.0, 10.0, 10.0), (1.0, 0.0, 11.0, 10.0)]
    matches = greedy_match([(1.0, 0.0, 11.0, 10.0), (0.0, 0.0, 10.0, 10.0)], [0.9, 0.8], gt)
    assert matches == [(0, 1), (1, 0)]


def test_ap_matches_cutoff_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        gt = [_random_box(rng) for _ in range(int(rng.integers(0, 5)))]
        dets = [_random_box(rng) for _ in range(int(rng.integers(0, 7)))]
        # jitter some ground truth into detections so true positives occur
        for g in gt:
            if rng.random() < 0.6:
                dets.append(tuple(c + float(rng.normal(0, 0.4)) for c in g))
        scores = [float(s) for s in rng.random(len(dets))]
        got = average_precision(dets, scores, gt)
        expected = _oracle_ap(dets, scores, gt)
        if expected is None:
            assert got is None
        else:
            assert abs(got - expected) < 1e-10


def test_tied_scores_are_order_independent():
    gt = [(0.0, 0.0, 10.0, 10.0), (20.0, 20.0, 26.0, 26.0)]
    dets = [(0.0, 0.0, 10.0, 10.0), (20.0, 20.0, 26.0, 26.0), (40.0, 40.0, 48.0, 48.0)]
    scores = [0.5, 0.5, 0.5]
    values = {
        average_precision([dets[i] for i in perm], scores, gt)
        for perm in itertools.permutations(range(3))
    }
    assert len(values) == 1


def _labels(*boxes, class_id=1):
    return [BoxLabel(class_id=class_id, box=b) for b in boxes]


def test_evaluate_perfect_and_empty():
    gt = [_labels((0.0, 0.0, 10.0, 10.0)), _labels((5.0, 5.0, 15.0, 15.0), class_id=2)]
    perfect = [
        [ScoredBox(1, 0.9, (0.0, 0.0, 10.0, 10.0))],
        [ScoredBox(2, 0.8, (5.0, 5.0, 15.0, 15.0))],
    ]
    result = evaluate_detections(perfect, gt, num_classes=3)
    assert result.map == 1.0
    assert result.per_class_ap[3] is None
    assert result.counts[1].tp == 1 and result.counts[1].fp == 0 and result.counts[1].fn == 0

    empty = evaluate_detections([[], []], gt, num_classes=3)
    assert empty.map == 0.0
    assert empty.counts[2].fn == 1


def test_evaluate_counts_and_threshold():
    gt = [_labels((0.0, 0.0, 10.0, 10.0))]
    dets = [
        [
            ScoredBox(1, 0.9, (0.0, 0.0, 10.0, 10.0)),
            ScoredBox(1, 0.7, (30.0, 30.0, 40.0, 40.0)),
            ScoredBox(1, 0.01, (50.0, 50.0, 60.0, 60.0)),
        ]
    ]
    result = evaluate_detections(dets, gt, num_classes=1)
    assert result.counts[1].to_dict() == {"tp": 1, "fp": 1, "fn": 0, "gt": 1}
    assert result.map == 1.0
    assert 1 in result.curves
    with pytest.raises(ValueError):
        evaluate_detections(dets, [], num_classes=1)


class _OracleModel:
    """Reports every ground-truth box of a sample with full confidence."""

    def __init__(self, samples):
        self.by_image = {id(s.image): s.labels for s in samples}

    def detect(self, image, score_threshold=None):
        return [ScoredBox(label.class_id, 1.0, label.box) for label in self.by_image[id(image)]]


def test_evaluate_with_model():
    rng = np.random.default_rng(0)
    samples = [
        DetectionSample(
            image=rng.random((16, 16, 3)).astype(np.float32),
            domain=Domain.SOURCE,
            labels=_labels((1.0, 1.0, 8.0, 8.0), class_id=i + 1),
            index=i,
        )
        for i in range(3)
    ]
    result, detections = evaluate(_OracleModel(samples), samples, num_classes=3)
    assert result.map == 1.0
    assert len(detections) == 3
    assert result.to_dict()["mAP"] == 1.0


def test_error_analysis_hand_case():
    gt = [_labels((0.0, 0.0, 10.0, 10.0), (20.0, 0.0, 30.0, 10.0), (0.0, 20.0, 10.0, 30.0))]
    source = [[ScoredBox(1, 0.9, (0.0, 0.0, 10.0, 10.0)), ScoredBox(1, 0.9, (20.0, 0.0, 30.0, 10.0))]]
    adapted = [[ScoredBox(1, 0.9, (20.0, 0.0, 30.0, 10.0)), ScoredBox(1, 0.9, (0.0, 20.0, 10.0, 30.0))]]
    report = error_analysis(source, adapted, gt, num_classes=1)
    assert report.recovered_tp_rate == 1.0
    assert report.induced_fn_rate == 0.5
    assert report.both_matched == 1
    assert report.total_gt == 3
    assert not report.recovered_undefined


def test_error_analysis_self_comparison_and_undefined_rates():
    gt = [_labels((0.0, 0.0, 10.0, 10.0))]
    dets = [[ScoredBox(1, 0.9, (0.0, 0.0, 10.0, 10.0))]]
    same = error_analysis(dets, dets, gt, num_classes=1)
    assert same.recovered_tp_rate == 0.0 and same.recovered_undefined
    assert same.induced_fn_rate == 0.0 and not same.induced_undefined

    nothing = error_analysis([[]], [[]], gt, num_classes=1)
    assert nothing.induced_undefined
    with pytest.raises(ValueError):
        error_analysis(dets, [], gt, num_classes=1)


def test_error_analysis_set_identities():
    rng = np.random.default_rng(5)
    for _ in range(50):
        gt, src, ada = [], [], []
        for _ in range(3):
            boxes = [_random_box(rng, 80.0) for _ in range(int(rng.integers(1, 4)))]
            gt.append(_labels(*boxes, class_id=int(rng.integers(1, 3))))
            src.append([ScoredBox(lab.class_id, 0.9, lab.box) for lab in gt[-1] if rng.random() < 0.5])
            ada.append([ScoredBox(lab.class_id, 0.9, lab.box) for lab in gt[-1] if rng.random() < 0.5])
        r = error_analysis(src, ada, gt, num_classes=2)
        assert r.both_matched + r.recovered_count == r.adapted_matched
        assert r.both_matched + r.induced_count == r.source_matched
        assert r.source_missed == r.total_gt - r.source_matched


def test_class_variance_two_tight_clusters():
    features = [
        (np.array([0.0, 0.0]), 1),
        (np.array([0.0, 0.0]), 1),
        (np.array([2.0, 0.0]), 2),
        (np.array([2.0, 0.0]), 2),
    ]
    report = class_variance(features)
    assert (report.sigma_w2, report.sigma_b2) == (0.0, 1.0)
    assert report.counts == {1: 2, 2: 2}


def test_class_variance_decomposes_total():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n_classes = int(rng.integers(2, 5))
        features = [
            (rng.normal(size=4) + c, c)
            for c in range(1, n_classes + 1)
            for _ in range(int(rng.integers(1, 20)))
        ]
        report = class_variance(features)
        x = np.stack([v for v, _ in features])
        total = float(np.mean(np.sum((x - x.mean(axis=0)) ** 2, axis=1)))
        assert abs(report.sigma_total2 - total) < 1e-9


def test_class_variance_single_class_and_cap():
    with pytest.raises(ValueError, match="between-class variance undefined"):
        class_variance([(np.zeros(2), 1), (np.ones(2), 1)])
    rng = np.random.default_rng(2)
    features = [(rng.normal(size=3), 1 + i % 2) for i in range(30)]
    assert class_variance(features, per_class_cap=5, seed=3).counts == {1: 5, 2: 5}


def test_collect_instance_features(tiny_detector_cfg, labelled_sample):
    detector = TwoStageDetector(tiny_detector_cfg)
    features = collect_instance_features(detector, [labelled_sample], iou_threshold=0.0)
    assert features
    assert all(v.shape == (16,) and c == 2 for v, c in features)
    assert detector.training


def test_detections_file_round_trip(tmp_path):
    dets = [[ScoredBox(1, 0.75, (0.0, 1.5, 10.0, 12.25))], []]
    path = save_detections(tmp_path / "d.json", dets, [4, 9], dataset="target_eval")
    indices, loaded, dataset = load_detections(path)
    assert indices == [4, 9]
    assert loaded == dets
    assert dataset == "target_eval"

    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    payload["version"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_detections(tmp_path / "bad.json")
