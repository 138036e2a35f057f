"""Optimization loop: Adam, plateau learning-rate decay, batching.

Batches average per-sample losses rather than padding variable-length
sequences into a single tensor; at desk scale this is fast enough and
avoids masked batch-norm subtleties.  Everything is seeded, so a run is
bitwise reproducible on one platform given (model seed, train config,
corpus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidConfigError, NonFiniteGradientError, TrainingDivergedError
from .metrics import evaluate_corpus
from .model import CharacterModel
from .tensor import ParameterSet, Value, backward
from .trajectory import Trajectory, prepare


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    lr_decay_factor: float = 0.01
    plateau_patience: int = 3
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    early_stop_val_ar: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise InvalidConfigError(
                f"lr_decay_factor must be in (0, 1), got {self.lr_decay_factor}"
            )
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.plateau_patience < 1:
            raise InvalidConfigError(f"plateau_patience must be >= 1, got {self.plateau_patience}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "lr_decay_factor": self.lr_decay_factor,
            "plateau_patience": self.plateau_patience,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "grad_clip": self.grad_clip,
            "early_stop_val_ar": self.early_stop_val_ar,
        }

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise InvalidConfigError("train config must be a JSON object")
        known = set(TrainConfig().to_dict())
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(**data)


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params: ParameterSet):
        self.step = 0
        self.m = {path: np.zeros_like(v.data) for path, v in params.items()}
        self.v = {path: np.zeros_like(v.data) for path, v in params.items()}


def adam_step(params: ParameterSet, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update from the gradients currently held."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for path, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(path)
        m = state.m[path]
        v = state.v[path]
        m += (1.0 - cfg.beta1) * (g - m)
        v += (1.0 - cfg.beta2) * (g * g - v)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clip_gradients(params: ParameterSet, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= factor
    return norm


class PlateauSchedule:
    """Decay the learning rate when the tracked metric stops improving.

    After ``patience`` consecutive epochs without a new best value the rate
    is multiplied by ``factor`` and the counter restarts.
    """

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.stale = 0

    def update(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_ar: float
    lr: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "val_ar": self.val_ar, "lr": self.lr}


@dataclass
class TrainResult:
    history: list[EpochRecord]
    adam: AdamState

    def history_dicts(self) -> list[dict]:
        return [r.to_dict() for r in self.history]


def _batch_losses(model: CharacterModel, feats: list[np.ndarray], targets: list, mode: str) -> list[Value]:
    if model.config.decoder == "fc":
        logits = model.class_logits_batch(feats, mode)
        return [T.cross_entropy(lg, t) for lg, t in zip(logits, targets)]
    from .ctc import ctc_loss

    frame_logits = model.frame_logits_batch(feats, mode)
    return [
        ctc_loss(T.log_softmax(lg, axis=1), t) for lg, t in zip(frame_logits, targets)
    ]


def _targets_for(model: CharacterModel, corpus: Sequence[Trajectory]):
    if model.config.decoder == "fc":
        index = {label: i for i, label in enumerate(model.labels)}
        missing = sorted({t.label for t in corpus} - set(index))
        if missing:
            raise InvalidConfigError(f"corpus labels not in model vocabulary: {missing[:5]}")
        return [index[t.label] for t in corpus]
    index = {ch: i + 1 for i, ch in enumerate(model.labels)}
    targets = []
    for t in corpus:
        missing = sorted(set(t.label) - set(index))
        if missing:
            raise InvalidConfigError(f"corpus characters not in model alphabet: {missing}")
        targets.append([index[ch] for ch in t.label])
    return targets


def train(
    model: CharacterModel,
    train_corpus: list[Trajectory],
    val_corpus: list[Trajectory],
    cfg: TrainConfig,
    checkpoint_path=None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the epoch loop; returns per-epoch history.

    On a non-finite loss the model is rolled back to the end of the last
    completed epoch (also saved to ``checkpoint_path`` when given) and
    ``TrainingDivergedError`` is raised.
    """
    if not train_corpus or not val_corpus:
        raise InvalidConfigError("training needs non-empty train and validation corpora")
    mode = "character" if model.config.decoder == "fc" else "ctc"
    features = [prepare(t).matrix for t in train_corpus]
    targets = _targets_for(model, train_corpus)

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(model.params)
    schedule = PlateauSchedule(cfg.lr, cfg.lr_decay_factor, cfg.plateau_patience)
    history: list[EpochRecord] = []
    last_good = {k: v.copy() for k, v in model.state_arrays().items()}

    def save_rolling(epoch: int) -> None:
        if checkpoint_path is not None:
            from .checkpoint import checkpoint_save

            checkpoint_save(
                model, checkpoint_path, adam=adam,
                metadata={"epoch": epoch, "seed": cfg.seed,
                          "history": [r.to_dict() for r in history]},
            )

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_corpus))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model.params.zero_grad()
            losses = _batch_losses(
                model, [features[i] for i in batch], [targets[i] for i in batch], T.TRAIN
            )
            loss = T.scale(T.add_n(losses), 1.0 / len(losses))
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                model.load_state_arrays(last_good)
                save_rolling(epoch - 1)
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch}; rolled back to epoch {epoch - 1}"
                )
            backward(loss)
            clip_gradients(model.params, cfg.grad_clip)
            adam_step(model.params, adam, schedule.lr, cfg)
            epoch_loss += loss_val * len(batch)
        epoch_loss /= len(order)

        val_ar = evaluate_corpus(model, val_corpus, mode).ar
        lr_used = schedule.lr
        schedule.update(val_ar)
        history.append(EpochRecord(epoch, epoch_loss, val_ar, lr_used))
        if log:
            log(f"epoch {epoch}: loss {epoch_loss:.4f} val_ar {val_ar:.4f} lr {lr_used:g}")
        last_good = {k: v.copy() for k, v in model.state_arrays().items()}
        save_rolling(epoch)
        if cfg.early_stop_val_ar is not None and val_ar >= cfg.early_stop_val_ar:
            break
    return TrainResult(history, adam)
