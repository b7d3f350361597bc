"""Sparse chromaticity features of a preprocessed image."""
import numpy as np

from . import kernels
from .imaging import DataError, LinearImage

FEATURE_ORDER = ("r_max", "g_max", "r_mean", "g_mean", "r_b", "g_b", "r_d", "g_d")
N_FEATURES = len(FEATURE_ORDER)


def extract_features(image, mask=None):
    """Eight chromaticities: channel maxima, channel means, brightest and darkest pixel.

    Statistics run over unmasked pixels only. Brightest/darkest are ranked by
    channel sum with ties resolved to the lowest row-major index; zero-sum
    pixels are never chosen as darkest.
    """
    px = image.pixels if isinstance(image, LinearImage) else np.asarray(image, dtype=np.float64)
    px = np.ascontiguousarray(px.reshape(-1, 3), dtype=np.float64)
    if mask is None:
        valid = np.ones(px.shape[0], dtype=np.bool_)
    else:
        valid = np.ascontiguousarray(~np.asarray(mask, dtype=bool).reshape(-1))
        if valid.size != px.shape[0]:
            raise ValueError("mask does not match image size")
    out = kernels.features(px, valid)
    if np.isnan(out[0]):
        raise DataError("no unmasked pixel with a positive channel sum")
    return out


def features_to_dict(vec):
    return dict(zip(FEATURE_ORDER, (float(v) for v in vec)))
