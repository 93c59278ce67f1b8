"""Generates perlin noise textures for image backgrounds"""

from typing import List

import numpy as np


def fade(t: np.ndarray) -> np.ndarray:
    """Original smoothing from Perlin"""
    return ((6.0 * t - 15.0) * t + 10.0) * t * t * t


def lerp(t: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear interpolation"""
    return x1 + t * (x2 - x1)


def perlin_noise(height: int, width: int, g: int, rng: np.random.Generator) -> np.ndarray:
    """Generate perlin noise

    Args:
        height (int): rows of the noise
        width (int): columns of the noise
        g (int): "feature size" of the noise, i.e. the outer grid size
        rng (np.random.Generator): source of the gradient angles

    Returns:
        np.ndarray: noise map of shape (height, width), roughly in [-1, 1]
    """
    angles = rng.random((height // g + 2, width // g + 2)) * 2 * np.pi
    grad_y = np.sin(angles)
    grad_x = np.cos(angles)

    ys = np.arange(height)[:, None].repeat(width, axis=1)
    xs = np.arange(width)[None, :].repeat(height, axis=0)
    cell_y = ys // g
    cell_x = xs // g
    off_y = (ys - cell_y * g) / g
    off_x = (xs - cell_x * g) / g

    def corner(dy: int, dx: int) -> np.ndarray:
        gy = grad_y[cell_y + dy, cell_x + dx]
        gx = grad_x[cell_y + dy, cell_x + dx]
        return (off_y - dy) * gy + (off_x - dx) * gx

    top = lerp(fade(off_x), corner(0, 0), corner(0, 1))
    bottom = lerp(fade(off_x), corner(1, 0), corner(1, 1))
    return lerp(fade(off_y), top, bottom)


def background_texture(
    height: int,
    width: int,
    feature_sizes: List[int],
    rng: np.random.Generator,
    amplitude: float = 0.08,
) -> np.ndarray:
    """Sum of octaves scaled into [-amplitude, amplitude], shape (height, width)."""
    maps = [perlin_noise(height, width, max(1, g), rng) for g in feature_sizes]
    noise = np.sum(np.array(maps), axis=0)
    peak = np.max(np.abs(noise))
    if peak > 0:
        noise = noise / peak
    return noise * amplitude
