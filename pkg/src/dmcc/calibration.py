"""Sensor-to-sensor mapping from D65 white points.

A diagonal map scales each channel by the ratio of the two sensors'
G-normalized white points. The full 3x3 variant is a least-squares fit over
corresponding illuminant pairs.
"""
from dataclasses import dataclass

import numpy as np

from .imaging import DataError, Illuminant, LinearImage

DET_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SensorMap:
    kind: str
    matrix: np.ndarray
    source_white: np.ndarray = None
    target_white: np.ndarray = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise DataError("sensor map must be a finite 3x3 matrix")
        if self.kind == "diagonal":
            if np.any(m[~np.eye(3, dtype=bool)] != 0):
                raise DataError("diagonal sensor map has off-diagonal entries")
            if np.any(np.diag(m) <= 0):
                raise DataError("diagonal entries must be positive")
        elif self.kind == "full":
            if abs(np.linalg.det(m)) <= DET_TOL:
                raise DataError("full sensor map is singular")
        else:
            raise DataError(f"unknown sensor map kind {self.kind!r}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        for name in ("source_white", "target_white"):
            w = getattr(self, name)
            if w is not None:
                object.__setattr__(self, name, np.asarray(w, dtype=np.float64).copy())

    @classmethod
    def identity(cls):
        return cls("diagonal", np.eye(3))

    @classmethod
    def diagonal(cls, entries):
        return cls("diagonal", np.diag(np.asarray(entries, dtype=np.float64)))

    def fingerprint(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


def _white(w):
    w = np.asarray(w.rgb if isinstance(w, Illuminant) else w, dtype=np.float64).reshape(-1)
    if w.shape != (3,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DataError(f"white point must have 3 positive components, got {w.tolist()}")
    return w


def calibrate_diagonal(source, target):
    s = _white(source)
    t = _white(target)
    ratio = (t / t[1]) / (s / s[1])
    return SensorMap("diagonal", np.diag(ratio), s, t)


def calibrate_full(source_samples, target_samples):
    """Least-squares M minimizing sum ||M s_i - t_i||^2."""
    S = np.atleast_2d(np.asarray(source_samples, dtype=np.float64))
    T = np.atleast_2d(np.asarray(target_samples, dtype=np.float64))
    if S.shape != T.shape or S.ndim != 2 or S.shape[1] != 3:
        raise DataError("need matching (n, 3) sample arrays")
    if S.shape[0] < 3:
        raise DataError("need at least 3 sample pairs")
    if np.linalg.matrix_rank(S) < 3:
        raise DataError("source samples are rank deficient")
    # rows: s_i^T M^T = t_i^T
    mt, *_ = np.linalg.lstsq(S, T, rcond=None)
    return SensorMap("full", mt.T)


def map_image(m, image):
    if m.kind == "diagonal":
        px = image.pixels * np.diag(m.matrix)
    else:
        px = np.maximum(image.pixels @ m.matrix.T, 0.0)
    return LinearImage(px, image.black_level, image.saturation_level)


def map_illuminant(m, ell):
    rgb = m.matrix @ (ell.rgb if isinstance(ell, Illuminant) else np.asarray(ell, dtype=np.float64))
    if np.any(rgb <= 0):
        raise DataError(f"mapped illuminant has non-positive components: {rgb.tolist()}")
    return Illuminant(rgb / np.linalg.norm(rgb))
