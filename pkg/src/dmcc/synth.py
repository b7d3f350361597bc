"""Synthetic two-sensor worlds.

Scenes are grids of flat reflectance patches lit by one illuminant drawn near
a daylight-like arc in a canonical RGB space. Each sensor is a 3x3 transform
out of that space: ``pixel = T @ (reflectance * illuminant * exposure) + noise``.
This is a stand-in distribution for testing, not a radiometric model.

When both transforms are diagonal and noise is zero the target image is built
as ``D * source`` directly, so the two sensors are related exactly by the true
map up to storage rounding. The default map diag(2, 1, 0.5) uses powers of two
so even the float32 quantization keeps that relation exact.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import SensorMap
from .dataset import Dataset, Entry
from .imaging import Illuminant, LinearImage

DAYLIGHT_ARC = ((0.46, 0.39), (0.40, 0.375), (1 / 3, 1 / 3), (0.29, 0.30), (0.26, 0.27))
SOURCE_DIAG = (0.6, 1.0, 0.8)
TRUE_DIAG = (2.0, 1.0, 0.5)


def _diag(v):
    return np.diag(v).tolist()


@dataclass
class SyntheticWorldConfig:
    scene_count: int = 500
    patches_per_scene: int = 64
    image_size: int = 64
    illuminant_anchors: list = field(default_factory=lambda: [list(a) for a in DAYLIGHT_ARC])
    jitter_radius: float = 0.02
    source_transform: list = field(default_factory=lambda: _diag(SOURCE_DIAG))
    target_transform: list = field(
        default_factory=lambda: _diag(np.multiply(TRUE_DIAG, SOURCE_DIAG)))
    observation_noise_sigma: float = 0.0
    reflectance_range: tuple = (0.05, 0.95)
    exposure_range: tuple = (0.35, 0.8)
    saturation: float = 1.0
    test_fraction: float = 0.2
    quantize: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        side = math.isqrt(self.patches_per_scene)
        if side * side != self.patches_per_scene or side < 1:
            raise ValueError("patches_per_scene must be a positive perfect square")
        if self.image_size < side:
            raise ValueError("image_size smaller than the patch grid")
        if self.scene_count < 1:
            raise ValueError("scene_count must be >= 1")
        if self.observation_noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")
        if len(self.illuminant_anchors) < 1:
            raise ValueError("need at least one illuminant anchor")
        for name in ("source_transform", "target_transform"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != (3, 3) or abs(np.linalg.det(m)) < 1e-12:
                raise ValueError(f"{name} must be an invertible 3x3 matrix")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["reflectance_range"] = list(self.reflectance_range)
        d["exposure_range"] = list(self.exposure_range)
        return d

    @classmethod
    def perturbed(cls, **overrides):
        """Diagonal world plus off-diagonal crosstalk (|x| <= 0.05) and sensor noise."""
        target = np.diag(np.multiply(TRUE_DIAG, SOURCE_DIAG))
        target += np.array([[0.0, 0.05, -0.03],
                            [0.04, 0.0, 0.05],
                            [-0.05, 0.03, 0.0]])
        kw = dict(target_transform=target.tolist(), observation_noise_sigma=0.005)
        kw.update(overrides)
        return cls(**kw)

    @property
    def is_exact_diagonal(self):
        s = np.asarray(self.source_transform)
        t = np.asarray(self.target_transform)
        off = ~np.eye(3, dtype=bool)
        return (self.observation_noise_sigma == 0 and not s[off].any() and not t[off].any())


def _arc_point(anchors, t):
    """Point at arc-length fraction ``t`` along the polyline through ``anchors``."""
    a = np.asarray(anchors, dtype=np.float64)
    if len(a) == 1:
        return a[0]
    seg = np.linalg.norm(np.diff(a, axis=0), axis=1)
    pos = t * seg.sum()
    k = min(int(np.searchsorted(np.cumsum(seg), pos)), len(seg) - 1)
    start = pos - (np.cumsum(seg)[k] - seg[k])
    return a[k] + (a[k + 1] - a[k]) * (start / seg[k])


@dataclass
class Scene:
    reflectances: np.ndarray  # (patches, 3)
    illuminant: np.ndarray    # canonical rgb, max component 1
    exposure: float


def sample_scene(cfg, rng):
    lo, hi = cfg.reflectance_range
    refl = rng.uniform(lo, hi, size=(cfg.patches_per_scene, 3))
    center = _arc_point(cfg.illuminant_anchors, rng.random())
    for _ in range(1000):
        rho = cfg.jitter_radius * math.sqrt(rng.random())
        phi = 2 * math.pi * rng.random()
        r = center[0] + rho * math.cos(phi)
        g = center[1] + rho * math.sin(phi)
        if r > 0 and g > 0 and r + g < 1:
            break
    else:
        r, g = center
    ill = np.array([r, g, 1.0 - r - g])
    ill /= ill.max()
    exposure = rng.uniform(*cfg.exposure_range)
    return Scene(refl, ill, float(exposure))


def render_canonical(scene, size):
    side = math.isqrt(scene.reflectances.shape[0])
    edges = np.linspace(0, size, side + 1).round().astype(int)
    cell = np.repeat(np.arange(side), np.diff(edges))
    idx = cell[:, None] * side + cell[None, :]
    return scene.reflectances[idx] * (scene.illuminant * scene.exposure)


def _quantize(px, on):
    return px.astype(np.float32).astype(np.float64) if on else px


def generate_world(cfg=None):
    """Returns (source Dataset, target Dataset, true SensorMap, (source white, target white))."""
    cfg = cfg or SyntheticWorldConfig()
    S = np.asarray(cfg.source_transform, dtype=np.float64)
    T = np.asarray(cfg.target_transform, dtype=np.float64)
    exact = cfg.is_exact_diagonal
    if exact:
        true_map = SensorMap("diagonal", np.diag(np.diag(T) / np.diag(S)))
    else:
        true_map = SensorMap("full", T @ np.linalg.inv(S))
    white_s = S @ np.ones(3)
    white_t = T @ np.ones(3)

    root = np.random.SeedSequence(cfg.rng_seed)
    split_rng, *scene_seeds = [np.random.default_rng(s) for s in root.spawn(cfg.scene_count + 1)]
    n_test = int(round(cfg.test_fraction * cfg.scene_count))
    test_ids = set(split_rng.permutation(cfg.scene_count)[:n_test].tolist())

    src, tgt = [], []
    sigma = cfg.observation_noise_sigma
    for i, rng in enumerate(scene_seeds):
        scene = sample_scene(cfg, rng)
        x = render_canonical(scene, cfg.image_size)
        ys = x @ S.T
        if sigma:
            ys = ys + rng.normal(0.0, sigma, ys.shape)
        ys = _quantize(np.maximum(ys, 0.0), cfg.quantize)
        if exact:
            yt = _quantize(ys * np.diag(true_map.matrix), cfg.quantize)
        else:
            yt = x @ T.T
            if sigma:
                yt = yt + rng.normal(0.0, sigma, yt.shape)
            yt = _quantize(np.maximum(yt, 0.0), cfg.quantize)
        split = "test" if i in test_ids else "train"
        sid = f"scene{i:05d}"
        src.append(Entry(sid, Illuminant(_unit(S @ scene.illuminant)), "source", split,
                         LinearImage(ys, np.zeros(3), cfg.saturation)))
        tgt.append(Entry(sid, Illuminant(_unit(T @ scene.illuminant)), "target", split,
                         LinearImage(yt, np.zeros(3), cfg.saturation)))
    return (Dataset(src, "source", white_s), Dataset(tgt, "target", white_t), true_map,
            (white_s, white_t))


def _unit(v):
    return v / np.linalg.norm(v)
