"""Tiny MLP mapping 8 chromaticity features to an illuminant chromaticity.

Hidden layers use ReLU; the 2-unit linear head is clamped to [0.001, 0.998]
and rescaled when r+g would exceed 0.999, so b = 1 - r - g stays positive.
Loss is the angular error in radians plus an L1 penalty on every parameter.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .features import FEATURE_ORDER
from .imaging import Chromaticity, Illuminant

DEFAULT_L1 = 1e-5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class DivergenceError(FloatingPointError):
    """Non-finite values appeared in the network."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 8
    hidden_width: int = 11
    hidden_layers: int = 5
    output_dim: int = 2

    def __post_init__(self):
        if min(self.input_dim, self.hidden_width, self.output_dim) < 1 or self.hidden_layers < 0:
            raise ValueError(f"invalid architecture {self}")
        if self.output_dim != 2:
            raise ValueError("the output head predicts (r, g); output_dim must be 2")

    @property
    def sizes(self):
        return np.array([self.input_dim] + [self.hidden_width] * self.hidden_layers
                        + [self.output_dim], dtype=np.int64)

    @property
    def param_count(self):
        s = self.sizes
        return int(sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1)))

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_width": self.hidden_width,
                "hidden_layers": self.hidden_layers, "output_dim": self.output_dim,
                "activation": "relu", "param_count": self.param_count}


@dataclass(eq=False)
class MlpModel:
    arch: Architecture
    layers: list  # [(weights (n_out, n_in) float32, biases (n_out,) float32), ...]
    feature_order: tuple = FEATURE_ORDER
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.arch.sizes
        if len(self.layers) != len(sizes) - 1:
            raise ValueError(f"expected {len(sizes) - 1} layers, got {len(self.layers)}")
        fixed = []
        for l, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float32)
            b = np.asarray(b, dtype=np.float32)
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")
            fixed.append((w, b))
        self.layers = fixed
        if len(self.feature_order) != self.arch.input_dim:
            raise ValueError("feature_order length does not match input_dim")
        self.feature_order = tuple(self.feature_order)

    @property
    def param_count(self):
        return sum(w.size + b.size for w, b in self.layers)

    def theta(self):
        """Parameters as one flat float64 vector (kernel layout)."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers]).astype(np.float64)

    @classmethod
    def from_theta(cls, arch, theta, feature_order=FEATURE_ORDER, meta=None):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != arch.param_count:
            raise ValueError(f"expected {arch.param_count} parameters, got {theta.size}")
        layers = [(w.astype(np.float32), b.astype(np.float32))
                  for w, b in kernels._unpack(theta, arch.sizes)]
        return cls(arch, layers, feature_order, dict(meta or {}))

    @classmethod
    def constant(cls, chroma, arch=Architecture()):
        """All-zero network whose output bias is ``chroma`` (a fixed estimator)."""
        model = cls.from_theta(arch, np.zeros(arch.param_count))
        model.layers[-1] = (model.layers[-1][0], np.asarray(chroma, dtype=np.float32))
        return model


def he_init(arch=Architecture(), rng=None):
    """Weights ~ N(0, sqrt(2/fan_in)), biases zero."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    sizes = arch.sizes
    layers = []
    for l in range(len(sizes) - 1):
        std = math.sqrt(2.0 / sizes[l])
        w = rng.normal(0.0, std, size=(sizes[l + 1], sizes[l]))
        layers.append((w, np.zeros(sizes[l + 1])))
    return MlpModel(arch, layers)


def predict_theta(theta, sizes, X):
    """Clamped (r, g) predictions for a feature matrix, from a flat parameter vector."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out = kernels.forward_batch(np.ascontiguousarray(theta, dtype=np.float64), sizes, X)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite network output")
    return out


def forward_batch(model, X):
    return predict_theta(model.theta(), model.arch.sizes, X)


def forward(model, x):
    r, g = forward_batch(model, x)[0]
    return Chromaticity(float(r), float(g))


def chroma_to_rgb(rg):
    """(n, 2) chromaticities -> (n, 3) unit RGB vectors."""
    rg = np.atleast_2d(rg)
    rgb = np.column_stack([rg, 1.0 - rg.sum(axis=1)])
    return rgb / np.linalg.norm(rgb, axis=1, keepdims=True)


def _labels(ell):
    if isinstance(ell, Illuminant):
        ell = ell.rgb
    return np.ascontiguousarray(np.atleast_2d(ell), dtype=np.float64)


def loss_and_grad(theta, sizes, X, L, lam=DEFAULT_L1):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    loss, grad = kernels.loss_grad(np.ascontiguousarray(theta, dtype=np.float64), sizes, X,
                                   _labels(L), float(lam))
    return float(loss), grad


def loss(model, x, ell, lam=DEFAULT_L1):
    return loss_and_grad(model.theta(), model.arch.sizes, x, ell, lam)[0]


def backward(model, x, ell, lam=DEFAULT_L1):
    return loss_and_grad(model.theta(), model.arch.sizes, x, ell, lam)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state, theta, grad, lr):
    """One bias-corrected Adam update; ``theta`` and ``state`` change in place."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError("Adam shapes do not match")
    state.t += 1
    kernels.adam_update(theta, state.m, state.v, grad, state.t, lr,
                        state.beta1, state.beta2, state.eps)
    return theta, state


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    if total_steps <= 0:
        return lr_max
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
