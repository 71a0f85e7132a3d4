"""Loss, Adam, augmentation, and the epoch/fit loops.

Defaults follow the experimental recipe: 50 epochs, learning rate 0.005,
batch size 16, Adam with (0.9, 0.999) betas, categorical cross-entropy,
and random rotation / scaling / horizontal flip / vertical flip
augmentation on the training split.

Every random decision (shuffling, augmentation draws, initialization)
comes from streams derived from the run seed, so a (seed, config, data)
triple reproduces bitwise-identical logs and checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Parameter, Tape, backward
from .data import Sample
from .metrics import EvalResult, evaluate_predictions
from .network import (
    BackboneConfig,
    NetworkParams,
    gsnet_forward,
    network_init,
    predict,
    validate_variant,
)
from .tensor import Tensor, softmax_lastaxis


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 0.005
    batch_size: int = 16
    seed: int = 0
    augment: bool = True
    input_hw: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[Parameter]) -> "AdamState":
        return cls(
            m={p.id: np.zeros_like(p.value) for p in params},
            v={p.id: np.zeros_like(p.value) for p in params},
        )


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    """Mean -log softmax(logits)[label], via log-sum-exp for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise ValueError("labels must lie in {0, 1, 2}")
    high = logits.max(axis=1, keepdims=True)
    lse = high[:, 0] + np.log(np.exp(logits - high).sum(axis=1))
    picked = logits[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


def cross_entropy_node(tape: Tape, logits: Node, labels) -> Node:
    """Loss as a tape operation; gradient is (softmax - onehot) / batch."""
    labels = np.asarray(labels)
    value = cross_entropy_loss(logits.value, labels)
    probs = softmax_lastaxis(logits.value)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    n = len(labels)
    return tape.record(value, (logits,), lambda g: (float(g) * (probs - onehot) / n,))


def adam_step(params: list[Parameter], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update; reads each parameter's .grad."""
    state.t += 1
    correct1 = 1.0 - cfg.beta1 ** state.t
    correct2 = 1.0 - cfg.beta2 ** state.t
    for p in params:
        g = p.grad
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for {p.id}")
        m = state.m[p.id]
        v = state.v[p.id]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.value -= cfg.lr * (m / correct1) / (np.sqrt(v / correct2) + cfg.eps)


# ---------------------------------------------------------------------------
# Augmentation: rotation, isotropic scale about the center, then flips.
# Nearest-neighbor resampling, zero fill outside the source frame.
# ---------------------------------------------------------------------------

ROTATION_RANGE_DEG = 15.0
SCALE_RANGE = (0.9, 1.1)


def apply_augment(data: np.ndarray, angle_deg: float, scale: float,
                  hflip: bool, vflip: bool) -> np.ndarray:
    n, h, w, k = data.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = yy - cy, xx - cx
    src_x = np.rint((cos_t * dx + sin_t * dy) / scale + cx).astype(np.int64)
    src_y = np.rint((cos_t * dy - sin_t * dx) / scale + cy).astype(np.int64)
    valid = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    out = np.zeros_like(data)
    out[:, valid] = data[:, src_y[valid], src_x[valid], :]
    if hflip:
        out = out[:, :, ::-1, :]
    if vflip:
        out = out[:, ::-1, :, :]
    return np.ascontiguousarray(out)


def augment(img: Tensor, rng) -> Tensor:
    """Randomly transformed copy of a single [1, h, w, 1] image."""
    return Tensor(augment_raw(img.data, rng))


def augment_raw(data: np.ndarray, rng) -> np.ndarray:
    angle = rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG)
    scale = rng.uniform(*SCALE_RANGE)
    hflip = rng.random() < 0.5
    vflip = rng.random() < 0.5
    return apply_augment(data, angle, scale, hflip, vflip)


# ---------------------------------------------------------------------------
# Epoch loop and fit.
# ---------------------------------------------------------------------------

def _batches(count: int, batch_size: int):
    for start in range(0, count, batch_size):
        yield range(start, min(start + batch_size, count))


def train_epoch(params: NetworkParams, samples: list[Sample], cfg: TrainConfig,
                state: AdamState, rng, variant: str) -> tuple[float, float]:
    """One pass over the training split; returns (mean loss, accuracy)."""
    if not samples:
        raise ValueError("training split is empty")
    all_params = params.parameters()
    order = rng.permutation(len(samples))
    loss_sum = 0.0
    correct = 0
    for batch in _batches(len(samples), cfg.batch_size):
        chosen = [samples[order[i]] for i in batch]
        images = []
        for sample in chosen:
            data = sample.image.data
            if cfg.augment:
                data = augment_raw(data, rng)
            images.append(data)
        batch_x = np.concatenate(images, axis=0)
        labels = np.array([s.label for s in chosen])
        tape = Tape()
        logits, _ = gsnet_forward(tape, tape.input(batch_x), params, variant)
        loss = cross_entropy_node(tape, logits, labels)
        if not np.isfinite(loss.value):
            raise ValueError("non-finite training loss; try a lower learning rate")
        backward(tape, loss, params=all_params)
        adam_step(all_params, state, cfg)
        loss_sum += float(loss.value) * len(chosen)
        correct += int((logits.value.argmax(axis=1) == labels).sum())
    return loss_sum / len(samples), correct / len(samples)


def _split_accuracy(params: NetworkParams, samples: list[Sample],
                    variant: str, batch_size: int) -> float:
    correct = 0
    for batch in _batches(len(samples), batch_size):
        chosen = [samples[i] for i in batch]
        batch_x = np.concatenate([s.image.data for s in chosen], axis=0)
        tape = Tape()
        logits, _ = gsnet_forward(tape, tape.input(batch_x), params, variant)
        preds, _ = predict(logits.value)
        correct += int((preds == np.array([s.label for s in chosen])).sum())
    return correct / len(samples)


@dataclass
class FitResult:
    params: NetworkParams          # values restored from the best epoch
    variant: str
    best_epoch: int
    best_val_acc: float
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_acc"]
        for epoch, train_loss, train_acc, val_acc in self.rows:
            lines.append(f"{epoch},{train_loss:.6f},{train_acc:.6f},{val_acc:.6f}")
        return "\n".join(lines) + "\n"


def fit(cfg: TrainConfig, splits: dict[str, list[Sample]], variant: str,
        backbone_config: BackboneConfig | None = None) -> FitResult:
    """Train for cfg.epochs and keep the checkpoint with the best validation
    accuracy (earliest epoch on ties)."""
    validate_variant(variant)
    train_samples = splits.get("train", [])
    val_samples = splits.get("val", [])
    if not train_samples:
        raise ValueError("train split is empty")
    if not val_samples:
        raise ValueError("val split is empty")
    config = backbone_config or BackboneConfig(input_hw=cfg.input_hw)
    params = network_init(config, include_gsam=variant != "baseline", seed=cfg.seed)
    state = AdamState.for_params(params.parameters())
    rng = np.random.default_rng([cfg.seed, 2])
    rows = []
    best_val = -1.0
    best_epoch = 0
    best_values: dict[str, np.ndarray] = {}
    for epoch in range(1, cfg.epochs + 1):
        train_loss, train_acc = train_epoch(params, train_samples, cfg, state, rng, variant)
        val_acc = _split_accuracy(params, val_samples, variant, cfg.batch_size)
        rows.append((epoch, train_loss, train_acc, val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_values = {p.id: p.value.copy() for p in params.parameters()}
    best_params = network_init(config, include_gsam=variant != "baseline", seed=cfg.seed)
    for p in best_params.parameters():
        p.value[...] = best_values[p.id]
    return FitResult(params=best_params, variant=variant, best_epoch=best_epoch,
                     best_val_acc=best_val, rows=rows)


def evaluate_model(params: NetworkParams, variant: str, samples: list[Sample],
                   batch_size: int = 16) -> EvalResult:
    """Full metric sweep (accuracy, macro F1, macro AUC, confusion) on a split."""
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    probs_all = []
    preds_all = []
    for batch in _batches(len(samples), batch_size):
        chosen = [samples[i] for i in batch]
        batch_x = np.concatenate([s.image.data for s in chosen], axis=0)
        tape = Tape()
        logits, _ = gsnet_forward(tape, tape.input(batch_x), params, variant)
        preds, probs = predict(logits.value)
        probs_all.append(probs)
        preds_all.append(preds)
    labels = np.array([s.label for s in samples])
    return evaluate_predictions(np.concatenate(probs_all), np.concatenate(preds_all), labels)
