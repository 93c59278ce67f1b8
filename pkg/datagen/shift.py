"""Synthetic domain shift: hue rotation, blur, sensor noise, palette and scale changes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

from common.config_reader import ConfigError, ConfigReader

Color = Tuple[float, float, float]


@dataclass(frozen=True)
class ShiftConfig:
    """Parameters of the source -> target shift. All zeros is the identity.

    hue_shift is a fraction of the hue circle; blur_radius is the Gaussian
    sigma in pixels; scale_jitter is the relative object-size jitter applied
    at generation time; a non-empty background_palette replaces the source
    backgrounds.
    """

    hue_shift: float = 0.0
    noise_std: float = 0.0
    blur_radius: float = 0.0
    background_palette: Tuple[Color, ...] = field(default_factory=tuple)
    scale_jitter: float = 0.0

    def __post_init__(self) -> None:
        for name in ("hue_shift", "noise_std", "blur_radius", "scale_jitter"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"ShiftConfig.{name} must be finite, got {value}")
        if self.noise_std < 0:
            raise ConfigError("ShiftConfig.noise_std must be >= 0")
        if self.blur_radius < 0:
            raise ConfigError("ShiftConfig.blur_radius must be >= 0")
        if self.scale_jitter < 0:
            raise ConfigError("ShiftConfig.scale_jitter must be >= 0")
        for color in self.background_palette:
            if len(color) != 3 or not all(0.0 <= c <= 1.0 for c in color):
                raise ConfigError(f"Palette color {color} must be 3 values in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return (
            self.hue_shift == 0.0
            and self.noise_std == 0.0
            and self.blur_radius == 0.0
            and self.scale_jitter == 0.0
            and len(self.background_palette) == 0
        )

    def to_dict(self) -> dict:
        return {
            "hue_shift": self.hue_shift,
            "noise_std": self.noise_std,
            "blur_radius": self.blur_radius,
            "background_palette": [list(c) for c in self.background_palette],
            "scale_jitter": self.scale_jitter,
        }

    @staticmethod
    def from_dict(data: dict) -> ShiftConfig:
        palette: List[Color] = [
            (float(c[0]), float(c[1]), float(c[2]))
            for c in data.get("background_palette", []) or []
        ]
        return ShiftConfig(
            hue_shift=float(data.get("hue_shift", 0.0)),
            noise_std=float(data.get("noise_std", 0.0)),
            blur_radius=float(data.get("blur_radius", 0.0)),
            background_palette=tuple(palette),
            scale_jitter=float(data.get("scale_jitter", 0.0)),
        )

    @staticmethod
    def from_reader(reader: ConfigReader) -> ShiftConfig:
        return ShiftConfig.from_dict(reader.config or {})


def apply_domain_shift(image: np.ndarray, shift: ShiftConfig, seed: int) -> np.ndarray:
    """Apply the photometric part of a shift to an (H, W, 3) image in [0, 1].

    Palette and scale changes happen during generation; this covers hue,
    blur and noise. The zero shift returns an exact copy.
    """
    if (
        shift.hue_shift == 0.0
        and shift.blur_radius == 0.0
        and shift.noise_std == 0.0
    ):
        return image.copy()

    out = image.astype(np.float64)

    if shift.hue_shift != 0.0:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + shift.hue_shift, 1.0)
        out = hsv_to_rgb(hsv)

    if shift.blur_radius > 0.0:
        # blur spatially only, never across channels
        out = gaussian_filter(out, sigma=(shift.blur_radius, shift.blur_radius, 0.0), mode="nearest")

    if shift.noise_std > 0.0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, shift.noise_std, size=out.shape)

    return np.clip(out, 0.0, 1.0).astype(image.dtype)
