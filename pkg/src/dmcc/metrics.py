"""Angular-error summary statistics and the classical statistical estimators."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .imaging import DataError, Illuminant, LinearImage

QUANTILE_RULE = "linear-interp"


@dataclass(frozen=True)
class ErrorSummary:
    n: int
    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float

    def to_dict(self):
        d = asdict(self)
        d["quantile_rule"] = QUANTILE_RULE
        return d


def summarize(errors):
    """Mean, median, trimean and best/worst quartile means of angular errors.

    Quartiles interpolate linearly between closest ranks. The best/worst 25%
    sets hold the ceil(n/4) smallest/largest values.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if e.size == 0:
        raise DataError("cannot summarize an empty error list")
    if not np.all(np.isfinite(e)) or e[0] < 0:
        raise DataError("errors must be finite and non-negative")
    q1, q2, q3 = np.quantile(e, [0.25, 0.5, 0.75], method="linear")
    k = math.ceil(e.size / 4)
    return ErrorSummary(
        n=int(e.size),
        mean=float(e.mean()),
        median=float(q2),
        trimean=float((q1 + 2 * q2 + q3) / 4),
        best25=float(e[:k].mean()),
        worst25=float(e[-k:].mean()),
    )


def _valid_pixels(image, mask):
    px = image.pixels if isinstance(image, LinearImage) else np.asarray(image, dtype=np.float64)
    px = px.reshape(-1, 3)
    if mask is not None:
        px = px[~np.asarray(mask, dtype=bool).reshape(-1)]
    if px.shape[0] == 0:
        raise DataError("no unmasked pixels")
    return px


def _as_illuminant(est):
    if not np.all(est > 0):
        raise DataError(f"estimate has a non-positive channel: {est.tolist()}")
    return Illuminant(est / np.linalg.norm(est))


def baseline_gray_world(image, mask=None):
    return _as_illuminant(_valid_pixels(image, mask).mean(axis=0))


def baseline_white_patch(image, mask=None):
    return _as_illuminant(_valid_pixels(image, mask).max(axis=0))


def baseline_shades_of_gray(image, mask=None, p=6.0):
    if p < 1:
        raise ValueError(f"Minkowski order must be >= 1, got {p}")
    px = _valid_pixels(image, mask)
    # scale by the channel max first so large p does not overflow
    top = px.max(axis=0)
    if np.any(top <= 0):
        raise DataError("a channel is zero everywhere")
    est = top * np.mean((px / top) ** p, axis=0) ** (1.0 / p)
    return _as_illuminant(est)


BASELINES = {
    "gray-world": baseline_gray_world,
    "white-patch": baseline_white_patch,
    "shades-of-gray": baseline_shades_of_gray,
}
