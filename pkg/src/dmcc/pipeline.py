"""Inference path shared by training, evaluation and the CLI."""
from dataclasses import dataclass

import numpy as np

from . import nn
from .calibration import map_image
from .features import extract_features
from .imaging import (DARK_FRACTION, SAT_FRACTION, WORKING_SIZE, Illuminant, angular_errors,
                      clip_extremes, resize_with_mask, subtract_black_level)


@dataclass(frozen=True)
class PreprocessConfig:
    sat_fraction: float = SAT_FRACTION
    dark_fraction: float = DARK_FRACTION
    size: int = WORKING_SIZE

    def to_dict(self):
        return {"sat_fraction": self.sat_fraction, "dark_fraction": self.dark_fraction,
                "size": self.size}


def prepare(image, pre=PreprocessConfig(), sensor_map=None):
    """Black level, optional sensor mapping, clipping and resize -> (image, mask)."""
    image = subtract_black_level(image)
    if sensor_map is not None:
        image = map_image(sensor_map, image)
    mask = clip_extremes(image, pre.sat_fraction, pre.dark_fraction)
    return resize_with_mask(image, mask, pre.size)


def featurize(image, pre=PreprocessConfig(), sensor_map=None):
    return extract_features(*prepare(image, pre, sensor_map))


def estimate(model, image, pre=PreprocessConfig()):
    """Model estimate for one raw image as a unit-norm Illuminant."""
    rg = nn.forward_batch(model, featurize(image, pre))
    return Illuminant(nn.chroma_to_rgb(rg)[0])


def evaluate_model(model, dataset, pre=PreprocessConfig()):
    """Per-entry angular errors (degrees) of ``model`` on ``dataset``."""
    if len(dataset) == 0:
        return [], np.zeros(0)
    X = np.stack([featurize(e.load_image(), pre) for e in dataset])
    pred = nn.chroma_to_rgb(nn.forward_batch(model, X))
    truth = np.stack([e.illuminant.rgb for e in dataset])
    return [e.id for e in dataset], angular_errors(pred, truth)


def evaluate_baseline(estimator, dataset, pre=PreprocessConfig(), **kwargs):
    ids, errs = [], []
    for e in dataset:
        small, mask = prepare(e.load_image(), pre)
        est = estimator(small, mask, **kwargs)
        ids.append(e.id)
        errs.append(angular_errors(est.rgb[None], e.illuminant.rgb[None])[0])
    return ids, np.asarray(errs)
