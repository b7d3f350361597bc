"""Linear RAW images, illuminants and the preprocessing chain.

Pixels are held as ``(height, width, 3)`` float64 arrays. A pixel mask is a
boolean ``(height, width)`` array where ``True`` marks an excluded pixel.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SAT_FRACTION = 0.98
DARK_FRACTION = 0.02
WORKING_SIZE = 64


class DataError(ValueError):
    """Input data violates a documented invariant."""


class Chromaticity(NamedTuple):
    r: float
    g: float

    @property
    def b(self):
        return 1.0 - self.r - self.g

    def is_valid(self):
        return (np.isfinite(self.r) and np.isfinite(self.g) and self.r > 0
                and self.g > 0 and self.r + self.g < 1)


@dataclass(frozen=True, eq=False)
class Illuminant:
    """RGB response of a neutral surface under the scene light."""

    rgb: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64).reshape(-1)
        if rgb.shape != (3,):
            raise DataError(f"illuminant needs 3 components, got {rgb.shape}")
        if not np.all(np.isfinite(rgb)) or np.any(rgb <= 0):
            raise DataError(f"illuminant components must be finite and > 0: {rgb.tolist()}")
        rgb.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)

    @classmethod
    def from_chromaticity(cls, r, g):
        return cls(unit(np.array([r, g, 1.0 - r - g])))

    @property
    def chromaticity(self):
        s = self.rgb.sum()
        return Chromaticity(float(self.rgb[0] / s), float(self.rgb[1] / s))

    def unit(self):
        return Illuminant(unit(self.rgb))

    def g_normalized(self):
        return self.rgb / self.rgb[1]

    def __repr__(self):
        return f"Illuminant(rgb={self.rgb.tolist()})"


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class LinearImage:
    pixels: np.ndarray
    black_level: np.ndarray = field(default_factory=lambda: np.zeros(3))
    saturation_level: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DataError(f"expected an HxWx3 raster, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or np.any(px < 0):
            raise DataError("pixel intensities must be finite and non-negative")
        bl = np.broadcast_to(np.asarray(self.black_level, dtype=np.float64), (3,)).copy()
        if not np.all(np.isfinite(bl)) or np.any(bl < 0):
            raise DataError(f"invalid black level {bl.tolist()}")
        sat = float(self.saturation_level)
        if not np.isfinite(sat) or sat <= 0:
            raise DataError(f"invalid saturation level {sat}")
        px.setflags(write=False)
        bl.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "black_level", bl)
        object.__setattr__(self, "saturation_level", sat)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def with_pixels(self, pixels):
        return LinearImage(pixels, self.black_level, self.saturation_level)


def subtract_black_level(image):
    if np.any(image.black_level >= image.saturation_level):
        raise DataError(
            f"black level {image.black_level.tolist()} is not below "
            f"saturation {image.saturation_level}")
    if not np.any(image.black_level):
        return image
    px = np.maximum(image.pixels - image.black_level, 0.0)
    return LinearImage(px, np.zeros(3), image.saturation_level - float(image.black_level.max()))


def clip_extremes(image, sat_fraction=SAT_FRACTION, dark_fraction=DARK_FRACTION):
    """Mask saturated pixels plus the darkest ``dark_fraction`` of the rest.

    Darkness is ranked by channel sum; ties go to the lower row-major index.
    At least one pixel always survives.
    """
    if not 0 <= dark_fraction < 1:
        raise ValueError(f"dark_fraction must be in [0, 1), got {dark_fraction}")
    if not 0 < sat_fraction <= 1:
        raise ValueError(f"sat_fraction must be in (0, 1], got {sat_fraction}")
    flat = image.pixels.reshape(-1, 3)
    masked = np.any(flat >= sat_fraction * image.saturation_level, axis=1)
    remaining = np.flatnonzero(~masked)
    if remaining.size == 0:
        # everything saturated: keep the least saturated pixel
        masked[:] = True
        masked[int(np.argmin(flat.max(axis=1)))] = False
    else:
        n_dark = int(np.floor(dark_fraction * remaining.size + 1e-9))
        if n_dark:
            sums = flat[remaining].sum(axis=1)
            cut = np.partition(sums, n_dark - 1)[n_dark - 1]
            below = np.flatnonzero(sums < cut)
            ties = np.flatnonzero(sums == cut)[:n_dark - below.size]
            masked[remaining[below]] = True
            masked[remaining[ties]] = True
    return masked.reshape(image.height, image.width)


def _overlap_matrix(n_out, n_in):
    """Row i holds the overlap length of output cell i with each input cell."""
    edges = np.arange(n_out + 1, dtype=np.float64) * n_in / n_out
    k = np.arange(n_in, dtype=np.float64)
    lo = np.maximum(edges[:-1, None], k[None, :])
    hi = np.minimum(edges[1:, None], k[None, :] + 1)
    w = np.clip(hi - lo, 0.0, None)
    w[w < 1e-12] = 0.0
    return w


def _box_sums(values, ay, ax):
    # values: (H, W, C) -> (n_out_y, n_out_x, C)
    chans = np.ascontiguousarray(np.moveaxis(values, -1, 0))
    return np.moveaxis(ay @ chans @ np.ascontiguousarray(ax.T), 0, -1)


def resize_with_mask(image, mask, size=WORKING_SIZE):
    """Area-weighted resize that ignores masked pixels; returns (image, mask).

    Output values are divided by the saturation level. An output pixel whose
    footprint is fully masked takes the plain footprint average and stays
    masked in the returned mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (image.height, image.width):
        raise ValueError(f"mask shape {mask.shape} does not match image")
    if image.height == size and image.width == size:
        # identity footprint: each output pixel is its own source pixel
        return LinearImage(image.pixels / image.saturation_level, np.zeros(3), 1.0), mask.copy()
    ay = _overlap_matrix(size, image.height)
    ax = _overlap_matrix(size, image.width)
    keep = (~mask).astype(np.float64)[..., None]
    num = _box_sums(image.pixels * keep, ay, ax)
    den = _box_sums(keep, ay, ax)[..., 0]
    empty = den <= 0
    out = np.empty_like(num)
    full = ~empty
    out[full] = num[full] / den[full, None]
    if empty.any():
        area = np.outer(ay.sum(axis=1), ax.sum(axis=1))
        plain = _box_sums(image.pixels, ay, ax) / area[..., None]
        out[empty] = plain[empty]
    out /= image.saturation_level
    return LinearImage(out, np.zeros(3), 1.0), empty


def resize_to_64(image, mask):
    return resize_with_mask(image, mask, WORKING_SIZE)[0]


def preprocess(image, sat_fraction=SAT_FRACTION, dark_fraction=DARK_FRACTION,
               size=WORKING_SIZE):
    """Black level, clipping and resize in one call; returns (image, mask)."""
    image = subtract_black_level(image)
    mask = clip_extremes(image, sat_fraction, dark_fraction)
    return resize_with_mask(image, mask, size)


def _as_vector(v):
    if isinstance(v, Illuminant):
        return v.rgb
    return np.asarray(v, dtype=np.float64).reshape(-1)


def angular_error(a, b):
    """Angle between two RGB vectors in degrees.

    Evaluated as atan2(|a x b|, a . b), which equals the clamped arccos of the
    normalized dot product but keeps full precision near zero.
    """
    a = _as_vector(a)
    b = _as_vector(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not (np.isfinite(na) and np.isfinite(nb)) or na == 0 or nb == 0:
        raise DataError("angular error needs finite nonzero vectors")
    a = a / na
    b = b / nb
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))))


def angular_errors(a, b):
    """Row-wise ``angular_error`` for two (n, 3) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DataError("angular error needs nonzero vectors")
    a = a / na[:, None]
    b = b / nb[:, None]
    cross = np.linalg.norm(np.cross(a, b), axis=1)
    return np.degrees(np.arctan2(cross, np.einsum("ij,ij->i", a, b)))
