"""Dual-mapping color constancy: cross-sensor illuminant estimation from one D65 white point."""
from ._accel import USE_NUMBA, backend
from .augment import AugmentConfig, relight, sample_illuminant
from .calibration import SensorMap, calibrate_diagonal, calibrate_full, map_illuminant, map_image
from .features import FEATURE_ORDER, extract_features
from .imaging import (Chromaticity, DataError, Illuminant, LinearImage, angular_error,
                      clip_extremes, preprocess, resize_to_64, subtract_black_level)
from .metrics import (ErrorSummary, baseline_gray_world, baseline_shades_of_gray,
                      baseline_white_patch, summarize)
from .nn import Architecture, DivergenceError, MlpModel, forward, he_init
from .trainer import TrainingConfig, build_training_set, train

__version__ = "0.1.0"
