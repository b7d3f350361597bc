"""Dual-mapped training set construction and the MLP training loop."""
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .augment import AugmentConfig, relight, sample_illuminant
from .calibration import map_illuminant
from .features import extract_features
from .imaging import DataError, Illuminant, angular_errors
from .pipeline import PreprocessConfig, prepare

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 10000
    learning_rate: float = 7e-3
    lr_min: float = 0.0
    l1_lambda: float = 1e-5
    early_stopping_patience: Optional[int] = None
    validation_fraction: float = 0.1
    rng_seed: int = 0
    arch: nn.Architecture = field(default_factory=nn.Architecture)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.learning_rate <= 0 or self.lr_min < 0 or self.l1_lambda < 0:
            raise ValueError("learning rates must be positive and l1_lambda >= 0")
        if not 0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5]")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ValueError("early_stopping_patience must be >= 1")


@dataclass
class DatasetSplit:
    train_ids: list
    train_x: np.ndarray  # (n, 8) features
    train_y: np.ndarray  # (n, 3) unit illuminants
    val_ids: list
    val_x: np.ndarray
    val_y: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def n_train(self):
        return len(self.train_ids)


@dataclass
class TrainReport:
    train_loss: list      # index 0 is the untrained model
    val_error: list       # mean angular error in degrees, same indexing
    best_epoch: int
    best_val_error: float
    final_lr: float
    seconds: float
    steps: int
    backend: str = ""

    def to_dict(self):
        return asdict(self)


def build_training_set(source, sensor_map, aug=AugmentConfig(), validation_fraction=0.1,
                       pre=PreprocessConfig()):
    """Map source images and labels through ``sensor_map``, augment, featurize.

    Validation entries are chosen before augmentation and are never augmented.
    Each entry draws from its own rng stream, so results do not depend on which
    other entries failed.
    """
    entries = list(source)
    n = len(entries)
    root = np.random.SeedSequence(aug.rng_seed)
    split_seq, *entry_seqs = root.spawn(n + 1)
    n_val = int(round(validation_fraction * n))
    if validation_fraction > 0 and n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    val_idx = set(np.random.default_rng(split_seq).permutation(n)[:n_val].tolist())

    tr_ids, tr_x, tr_y, va_ids, va_x, va_y = [], [], [], [], [], []
    failures = {}
    for i, entry in enumerate(entries):
        try:
            small, mask = prepare(entry.load_image(), pre, sensor_map)
            label = map_illuminant(sensor_map, entry.illuminant)
            feats = extract_features(small, mask)
        except (DataError, ValueError, OSError) as exc:
            failures[entry.id] = str(exc)
            log.warning("skipping %s: %s", entry.id, exc)
            continue
        if i in val_idx:
            va_ids.append(entry.id)
            va_x.append(feats)
            va_y.append(label.rgb)
            continue
        tr_ids.append(entry.id)
        tr_x.append(feats)
        tr_y.append(label.rgb)
        rng = np.random.default_rng(entry_seqs[i])
        center = label.chromaticity
        for k in range(aug.samples_per_image):
            c = sample_illuminant(center, aug, rng)
            new = Illuminant.from_chromaticity(c.r, c.g)
            tr_ids.append(f"{entry.id}#aug{k}")
            tr_x.append(extract_features(relight(small, label, new), mask))
            tr_y.append(new.rgb)
    if n and len(failures) > MAX_FAILURE_FRACTION * n:
        raise DataError(f"{len(failures)} of {n} entries failed preprocessing: "
                        + "; ".join(f"{k}: {v}" for k, v in list(failures.items())[:5]))

    def arr(rows, width):
        return np.asarray(rows, dtype=np.float64).reshape(-1, width)

    return DatasetSplit(tr_ids, arr(tr_x, 8), arr(tr_y, 3), va_ids, arr(va_x, 8), arr(va_y, 3),
                        failures)


def _mean_error(theta, sizes, X, Y):
    pred = nn.chroma_to_rgb(nn.predict_theta(theta, sizes, X))
    return float(angular_errors(pred, Y).mean())


def train(split, cfg=TrainingConfig(), progress=None):
    """Mini-batch Adam with cosine-annealed learning rate; keeps the best validation epoch.

    Validation runs on the float32-rounded parameters that would be saved, so
    the returned model reproduces ``best_val_error`` exactly. When the split has
    no validation entries the training set stands in for it.
    """
    from ._accel import backend

    if split.n_train == 0:
        raise DataError("training split is empty")
    arch = cfg.arch
    sizes = arch.sizes
    rng = np.random.default_rng(cfg.rng_seed)
    init = nn.he_init(arch, rng)
    # start the head at the mean label so outputs begin inside the clamp range;
    # a clamped head has zero gradient and would never recover
    y = split.train_y
    init.layers[-1] = (init.layers[-1][0], (y[:, :2] / y.sum(axis=1, keepdims=True)).mean(axis=0))
    theta = init.theta()
    state = nn.AdamState.zeros(theta.size)
    X, Y = split.train_x, split.train_y
    vx, vy = (split.val_x, split.val_y) if len(split.val_ids) else (X, Y)
    n = X.shape[0]
    bs = cfg.batch_size
    per_epoch = math.ceil(n / bs)
    total = cfg.epochs * per_epoch
    lam = cfg.l1_lambda

    start = time.perf_counter()
    best_theta = theta.astype(np.float32).astype(np.float64)
    best_err = _mean_error(best_theta, sizes, vx, vy)
    best_epoch = 0
    losses = [nn.loss_and_grad(theta, sizes, X, Y, lam)[0]]
    val_errors = [best_err]
    step = 0
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        running = 0.0
        for b in range(per_epoch):
            idx = perm[b * bs:(b + 1) * bs]
            lr = nn.cosine_lr(step, total, cfg.learning_rate, cfg.lr_min)
            loss, grad = nn.loss_and_grad(theta, sizes, X[idx], Y[idx], lam)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise nn.DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            nn.adam_step(state, theta, grad, lr)
            running += loss * idx.size
            step += 1
        snapshot = theta.astype(np.float32).astype(np.float64)
        err = _mean_error(snapshot, sizes, vx, vy)
        losses.append(running / n)
        val_errors.append(err)
        if err < best_err:
            best_err, best_theta, best_epoch = err, snapshot, epoch
        if progress is not None:
            progress(epoch, running / n, err)
        if (cfg.early_stopping_patience is not None
                and epoch - best_epoch >= cfg.early_stopping_patience):
            break
    elapsed = time.perf_counter() - start
    model = nn.MlpModel.from_theta(arch, best_theta,
                                   meta={"seed": cfg.rng_seed, "best_epoch": best_epoch})
    report = TrainReport(losses, val_errors, best_epoch, best_err, lr, elapsed, step, backend())
    return model, report
