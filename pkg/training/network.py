"""
The full adaptation network and the per-step loss assembly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from adaptation.domain_classifiers import ImageDomainClassifier, InstanceDomainClassifier
from adaptation.grl import grl
from adaptation.losses import (
    LossComponents,
    image_tda_loss,
    image_ua_adv_loss,
    instance_tda_loss,
    instance_ua_loss,
    instance_ug_loss,
    total_loss,
)
from datagen.sample import BoxLabel, DetectionSample
from detector.backbone import image_to_tensor
from detector.detector import DetectorOutput, TwoStageDetector
from training.ablation_mode import AdversarialTerm
from training.detection_loss import MissingLabelsError, SamplingConfig, detection_loss, labels_to_tensors
from training.train_config import TrainConfig
from uncertainty.entropy import instance_entropies, proposal_entropy_map
from uncertainty.gate import GateConfig


class UadanNetwork(nn.Module):
    """Detector plus the image-level and instance-level domain classifiers."""

    def __init__(self, cfg: TrainConfig) -> None:
        super().__init__()
        self.detector = TwoStageDetector(cfg.detector)
        self.image_classifier = ImageDomainClassifier(
            cfg.detector.channels, init_std=cfg.detector.head_init_std
        )
        self.instance_classifier = InstanceDomainClassifier(
            cfg.detector.instance_dim,
            hidden=cfg.instance_hidden,
            dropout=cfg.instance_dropout,
            init_std=cfg.detector.head_init_std,
        )


@dataclass
class StepResult:
    total: torch.Tensor
    breakdown: Dict[str, float]
    source_output: DetectorOutput
    target_output: Optional[DetectorOutput]


def supervised_loss(
    detector: TwoStageDetector,
    image: torch.Tensor,
    labels: Optional[List[BoxLabel]],
    sampling: SamplingConfig,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, DetectorOutput]:
    """Detection loss of one labelled image. RCNN rows are proposals then GT boxes."""
    if labels is None:
        raise MissingLabelsError()
    gt_boxes, _ = labels_to_tensors(labels, image.dtype)
    out = detector(image, extra_boxes=gt_boxes)
    loss = detection_loss(
        out.proposal_map, detector.anchors, out.detections, labels, sampling, generator
    )
    return loss.total, out


def compute_step_losses(
    net: UadanNetwork,
    source: DetectionSample,
    target: Optional[DetectionSample],
    cfg: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> StepResult:
    """Forward one source and one target image and assemble the mode's loss.

    Target samples are used as images only; their labels are never read.
    Baseline mode never forwards the target image.
    """
    mode = cfg.mode
    detector = net.detector
    dtype = detector.anchors.dtype

    img_s = image_to_tensor(source.image).to(dtype)
    l_det, out_s = supervised_loss(detector, img_s, source.labels, cfg.sampling, generator)
    components = LossComponents(det=l_det)

    out_t: Optional[DetectorOutput] = None
    if mode.uses_target:
        if target is None:
            raise ValueError(f"{mode.value} needs a target image every step")
        out_t = detector(image_to_tensor(target.image).to(dtype))

        if mode.image_term is not None:
            pred_s = net.image_classifier(grl(out_s.features, cfg.grl_lambda))
            pred_t = net.image_classifier(grl(out_t.features, cfg.grl_lambda))
            if mode.image_term == AdversarialTerm.TDA:
                components.img_tda = image_tda_loss(pred_s, pred_t)
            else:
                components.img_ua = image_ua_adv_loss(
                    proposal_entropy_map(out_s.proposal_map).detach(),
                    pred_s,
                    proposal_entropy_map(out_t.proposal_map).detach(),
                    pred_t,
                )

        if mode.instance_term is not None:
            n_s, n_t = out_s.num_proposals, out_t.num_proposals
            ins_s = net.instance_classifier(grl(out_s.instance_features[:n_s], cfg.grl_lambda))
            ins_t = net.instance_classifier(grl(out_t.instance_features[:n_t], cfg.grl_lambda))
            dist_s = out_s.detections.class_dist[:n_s]
            dist_t = out_t.detections.class_dist[:n_t]

            if mode.instance_term == AdversarialTerm.TDA:
                components.ins_tda = instance_tda_loss(ins_s, ins_t)
            elif mode.instance_term == AdversarialTerm.UA:
                components.ins_ua = instance_ua_loss(
                    dist_s, ins_s, dist_t, ins_t, cfg.detection_entropy_classes
                )
            else:
                components.ins_ug = instance_ug_loss(
                    dist_s,
                    _instance_entropy(out_s, cfg),
                    ins_s,
                    dist_t,
                    _instance_entropy(out_t, cfg),
                    ins_t,
                    GateConfig(cfg.xi),
                    cfg.detection_entropy_classes,
                )

    total, breakdown = total_loss(mode, components)
    return StepResult(total=total, breakdown=breakdown, source_output=out_s, target_output=out_t)


def _instance_entropy(out: DetectorOutput, cfg: TrainConfig) -> torch.Tensor:
    em = proposal_entropy_map(out.proposal_map).detach()
    return instance_entropies(
        em,
        out.proposals.boxes,
        cfg.detector.roi_size,
        cfg.detector.stride,
        cfg.entropy_reduction,
    )
