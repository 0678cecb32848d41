"""MSE loss, Adam, and the seeded mini-batch training loop."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Encoded
from .numerics import ConfigError, ShapeError, Tape, Tensor, make_rng, mean, mul, sub

# stream tags for make_rng(seed, tag, ...)
_SHUFFLE, _DROPOUT = 1, 2


class TrainingError(RuntimeError):
    pass


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("empty batch")
    r = sub(pred, target)
    return mean(mul(r, r), axis=0)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict[str, Tensor], lr: float = 1e-3, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, lr=lr, **kw)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One in-place Adam update. Missing gradients count as zero."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True
    patience: int | None = None
    clip_norm: float | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path: str | Path, timings: bool = False) -> None:
        """Columns epoch, train_loss, val_loss, seconds.

        ``seconds`` is written as 0 unless ``timings`` is set, which keeps
        the file byte-reproducible for a fixed seed.
        """
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                sec = self.seconds[i] if timings else 0.0
                w.writerow([i + 1, repr(tr), repr(va), repr(sec)])


ForwardFn = Callable[[Encoded, bool, "np.random.Generator | None"], Tensor]


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale


def evaluate_loss(forward: ForwardFn, enc: Encoded, batch_size: int = 256) -> float:
    total, n = 0.0, len(enc)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        part = enc.subset(idx)
        r = forward(part, False, None).data - part.y
        total += float((r * r).sum())
    return total / n


def train(forward: ForwardFn, params: dict[str, Tensor], train_data: Encoded,
          val_data: Encoded | None, cfg: TrainConfig) -> tuple[dict[str, Tensor], TrainHistory]:
    """Fit ``params`` in place with Adam on MSE.

    Epoch ``e`` visits the training rows in the order
    ``make_rng(seed, 1, e).permutation(n)``; the dropout stream for batch
    ``b`` is ``make_rng(seed, 2, e, b)``. With a validation split the
    parameters of the best-validation epoch are restored at the end.
    """
    cfg.validate()
    n = len(train_data)
    if n == 0:
        raise ConfigError("empty training split")
    has_val = val_data is not None and len(val_data) > 0
    for p in params.values():
        p.requires_grad = True
    state = AdamState.fresh(params, lr=cfg.learning_rate)
    hist = TrainHistory()
    best = (math.inf, None)
    stale = 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, _SHUFFLE, epoch).permutation(n) if cfg.shuffle else np.arange(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = train_data.subset(order[start:start + cfg.batch_size])
            for p in params.values():
                p.grad = None
            with Tape() as tape:
                loss = mse_loss(forward(batch, True, make_rng(cfg.seed, _DROPOUT, epoch, b)), batch.y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            tape.backward(loss)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if cfg.clip_norm is not None:
                _clip(grads, cfg.clip_norm)
            adam_step(params, grads, state)
            running += value * len(batch)
        hist.train_loss.append(running / n)
        val = evaluate_loss(forward, val_data) if has_val else math.nan
        hist.val_loss.append(val)
        hist.seconds.append(time.perf_counter() - t0)

        if has_val:
            if val < best[0]:
                best = (val, {k: p.data.copy() for k, p in params.items()})
                hist.best_epoch = epoch + 1
                stale = 0
            else:
                stale += 1
                if cfg.patience is not None and stale >= cfg.patience:
                    break

    if has_val and best[1] is not None:
        for k, p in params.items():
            p.data = best[1][k]
    for p in params.values():
        p.requires_grad = False
        p.grad = None
    return params, hist
