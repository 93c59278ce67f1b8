"""
Adversarial domain losses at image and instance level, and their combination.

Every variant goes through `_weighted_domain_bce` so uniform, entropy
weighted and gated losses differ only in their weights. Weights are always
detached: gradients never flow into the entropy computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import torch
import torch.nn.functional as F

from detector.rcnn import DetectionSet
from training.ablation_mode import AblationMode, AdversarialTerm
from uncertainty.entropy import DetectionEntropyClasses, detection_entropy
from uncertainty.gate import GateConfig, gate_weights

Detections = Union[DetectionSet, torch.Tensor]


def _class_dist(det: Detections) -> torch.Tensor:
    return det.class_dist if isinstance(det, DetectionSet) else det


def _domain_bce(pred: torch.Tensor, label: int) -> torch.Tensor:
    return F.binary_cross_entropy(pred, torch.full_like(pred, float(label)), reduction="none")


def _weighted_mean(weights: torch.Tensor, pred: torch.Tensor, label: int) -> torch.Tensor:
    if weights.shape != pred.shape:
        raise ValueError(
            f"weight shape {tuple(weights.shape)} != prediction shape {tuple(pred.shape)}"
        )
    if pred.numel() == 0:
        return pred.new_zeros(())
    return (weights.detach() * _domain_bce(pred, label)).mean()


def _weighted_domain_bce(
    weights_s: torch.Tensor, pred_s: torch.Tensor, weights_t: torch.Tensor, pred_t: torch.Tensor
) -> torch.Tensor:
    """mean(w_s * BCE(o_s, 0)) + mean(w_t * BCE(o_t, 1)); an empty side adds 0."""
    return _weighted_mean(weights_s, pred_s, 0) + _weighted_mean(weights_t, pred_t, 1)


def _check_image_shapes(pred_s: torch.Tensor, pred_t: torch.Tensor) -> None:
    if pred_s.shape != pred_t.shape:
        raise ValueError(
            f"source map {tuple(pred_s.shape)} and target map {tuple(pred_t.shape)} differ"
        )


def image_tda_loss(pred_s: torch.Tensor, pred_t: torch.Tensor) -> torch.Tensor:
    """Uniform-weight image-level adversarial loss over (U, V) prediction maps."""
    _check_image_shapes(pred_s, pred_t)
    return _weighted_domain_bce(torch.ones_like(pred_s), pred_s, torch.ones_like(pred_t), pred_t)


def image_ua_adv_loss(
    entropy_s: torch.Tensor, pred_s: torch.Tensor, entropy_t: torch.Tensor, pred_t: torch.Tensor
) -> torch.Tensor:
    """Image-level loss weighted per location by proposal entropy."""
    _check_image_shapes(pred_s, pred_t)
    return _weighted_domain_bce(entropy_s, pred_s, entropy_t, pred_t)


def instance_tda_loss(pred_s: torch.Tensor, pred_t: torch.Tensor) -> torch.Tensor:
    return _weighted_domain_bce(torch.ones_like(pred_s), pred_s, torch.ones_like(pred_t), pred_t)


def instance_ua_loss(
    det_s: Detections,
    pred_s: torch.Tensor,
    det_t: Detections,
    pred_t: torch.Tensor,
    classes: DetectionEntropyClasses = DetectionEntropyClasses.ALL,
) -> torch.Tensor:
    """Instance-level loss weighted by detection entropy, no curriculum gate."""
    w_s = detection_entropy(_class_dist(det_s).detach(), classes)
    w_t = detection_entropy(_class_dist(det_t).detach(), classes)
    return _weighted_domain_bce(w_s, pred_s, w_t, pred_t)


def instance_ug_loss(
    det_s: Detections,
    e_ins_s: torch.Tensor,
    pred_s: torch.Tensor,
    det_t: Detections,
    e_ins_t: torch.Tensor,
    pred_t: torch.Tensor,
    cfg: GateConfig,
    classes: DetectionEntropyClasses = DetectionEntropyClasses.ALL,
) -> torch.Tensor:
    """Detection-entropy weights, zeroed where instance entropy is not below xi."""
    w_s = gate_weights(
        detection_entropy(_class_dist(det_s).detach(), classes), e_ins_s.detach(), cfg
    )
    w_t = gate_weights(
        detection_entropy(_class_dist(det_t).detach(), classes), e_ins_t.detach(), cfg
    )
    return _weighted_domain_bce(w_s, pred_s, w_t, pred_t)


@dataclass
class LossComponents:
    """Candidate loss terms of one step; only those the mode selects are read."""

    det: torch.Tensor
    img_tda: Optional[torch.Tensor] = None
    img_ua: Optional[torch.Tensor] = None
    ins_tda: Optional[torch.Tensor] = None
    ins_ua: Optional[torch.Tensor] = None
    ins_ug: Optional[torch.Tensor] = None

    def pick_image(self, term: AdversarialTerm) -> Optional[torch.Tensor]:
        return {AdversarialTerm.TDA: self.img_tda, AdversarialTerm.UA: self.img_ua}.get(term)

    def pick_instance(self, term: AdversarialTerm) -> Optional[torch.Tensor]:
        return {
            AdversarialTerm.TDA: self.ins_tda,
            AdversarialTerm.UA: self.ins_ua,
            AdversarialTerm.UG: self.ins_ug,
        }[term]


def total_loss(mode: AblationMode, components: LossComponents) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Sum of the terms `mode` activates plus a float breakdown for logging.

    Breakdown keys are L_det, L_img, L_ins and total; inactive terms report 0.
    """
    total = components.det
    l_img = 0.0
    l_ins = 0.0

    if mode.image_term is not None:
        term = components.pick_image(mode.image_term)
        if term is None:
            raise ValueError(f"{mode.value} needs the {mode.image_term.value} image term")
        total = total + term
        l_img = float(term.detach())

    if mode.instance_term is not None:
        term = components.pick_instance(mode.instance_term)
        if term is None:
            raise ValueError(f"{mode.value} needs the {mode.instance_term.value} instance term")
        total = total + term
        l_ins = float(term.detach())

    breakdown = {
        "L_det": float(components.det.detach()),
        "L_img": l_img,
        "L_ins": l_ins,
        "total": float(total.detach()),
    }
    return total, breakdown
