"""Illuminant-space augmentation: resample the light inside a chromaticity disc."""
from dataclasses import dataclass

import numpy as np

from .imaging import Chromaticity, Illuminant, LinearImage

MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class AugmentConfig:
    radius: float = 0.05
    samples_per_image: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.radius < 0.2:
            raise ValueError(f"augmentation radius must be in [0, 0.2), got {self.radius}")
        if self.samples_per_image < 0:
            raise ValueError("samples_per_image must be >= 0")


def sample_illuminant(center, cfg, rng):
    """Area-uniform draw from the disc of radius ``cfg.radius`` around ``center``.

    Draws falling outside the open chromaticity triangle are redrawn; after
    ``MAX_REJECTIONS`` failures the center is returned.
    """
    r0, g0 = center
    if cfg.radius == 0:
        return Chromaticity(r0, g0)
    for _ in range(MAX_REJECTIONS):
        u, v = rng.random(2)
        rho = cfg.radius * np.sqrt(u)
        phi = 2.0 * np.pi * v
        r = r0 + rho * np.cos(phi)
        g = g0 + rho * np.sin(phi)
        if r > 0 and g > 0 and r + g < 1:
            return Chromaticity(float(r), float(g))
    return Chromaticity(r0, g0)


def relight(image, old, new):
    """Von Kries relight: scale channels by new/old, both G-normalized."""
    old = old if isinstance(old, Illuminant) else Illuminant(old)
    new = new if isinstance(new, Illuminant) else Illuminant(new)
    if np.array_equal(old.rgb / old.rgb[1], new.rgb / new.rgb[1]):
        return image
    gain = new.g_normalized() / old.g_normalized()
    return LinearImage(image.pixels * gain, image.black_level, image.saturation_level)
