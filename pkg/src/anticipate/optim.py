"""Adam optimisation and the mini-batch training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, NumericError
from .data import VideoSample
from .fa_block import Variant
from .model import (LOSS_EXPONENT_MODES, ModelParams, anticipation_loss,
                    forward_video, save_checkpoint)


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the reference recipe."""

    epochs: int = 40
    batch_size: int = 10
    learning_rate: float = 1e-4
    seed: int = 0
    variant: Variant = Variant.FINAL
    dropout: float = 0.5
    d: int = 256
    n_objects: int = 9
    loss_exponent: str = "intent"
    precision: int = 32
    clip_norm: float | None = None
    checkpoint_every: int = 10

    def __post_init__(self):
        self.variant = Variant(self.variant)

    @property
    def hidden(self) -> int:
        return 2 * self.d

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.d < 1 or self.n_objects < 1:
            raise ValueError("epochs, batch_size, d and n_objects must be positive")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.loss_exponent not in LOSS_EXPONENT_MODES:
            raise ValueError(f"loss_exponent must be one of {LOSS_EXPONENT_MODES}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")


class Adam:
    """Standard bias-corrected Adam over a model's named parameters."""

    def __init__(self, params: ModelParams, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named()}

    def step(self) -> None:
        """Apply one update from the gradients stored on the parameters."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, tensor in self.params.named():
            if tensor.grad is None:
                raise ContractError(f"adam step: parameter {name} has no gradient")
            g = tensor.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            tensor.data = tensor.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, t in params.named():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, t in params.named():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_seconds: float


def train(dataset: list[VideoSample], config: TrainConfig,
          out_dir: str | Path | None = None,
          params: ModelParams | None = None,
          log=None) -> tuple[ModelParams, list[EpochStats]]:
    """Algorithmic core of a training run.

    Shuffles the dataset each epoch with the seeded generator, runs
    forward/loss/backward per video, averages gradients over the batch,
    and applies Adam. Writes train_log.csv and periodic checkpoints when
    out_dir is given. A non-finite loss aborts with a diagnostic.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    config.validate()
    for sample in dataset:
        if sample.d != config.d or sample.max_objects > config.n_objects:
            raise ValueError(
                f"sample {sample.video_id!r} has d={sample.d}, N={sample.max_objects}; "
                f"config expects d={config.d}, N<={config.n_objects}")

    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams.initialise(config.d, config.variant, rng, dtype=config.dtype)
    optimizer = Adam(params, lr=config.learning_rate)
    history: list[EpochStats] = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            params.zero_grads()
            for sample in batch:
                probs = forward_video(sample, params, training=True,
                                      dropout_rate=config.dropout, rng=rng)
                loss = anticipation_loss(probs, sample.positive, sample.tau,
                                         sample.fps, config.loss_exponent)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss {value} at epoch {epoch}, video {sample.video_id!r}; "
                        "check feature scaling or the loss-exponent mode")
                losses.append(value)
                ad.backward(ad.scale(loss, 1.0 / len(batch)))
            if config.clip_norm is not None:
                clip_gradients(params, config.clip_norm)
            optimizer.step()
        stats = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)),
                           wall_seconds=time.perf_counter() - t0)
        history.append(stats)
        if log is not None:
            log(f"epoch {stats.epoch:3d}  mean_loss {stats.mean_loss:.6f}  "
                f"wall {stats.wall_seconds:.2f}s")
        if out_path is not None and (epoch % config.checkpoint_every == 0
                                     or epoch == config.epochs):
            save_checkpoint(out_path / f"checkpoint_epoch{epoch:03d}.bin",
                            params, max_objects=config.n_objects)

    if out_path is not None:
        save_checkpoint(out_path / "checkpoint.bin", params, max_objects=config.n_objects)
        write_loss_log(out_path / "train_log.csv", history)
    return params, history


def write_loss_log(path: str | Path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "wall_seconds"])
        for row in history:
            writer.writerow([row.epoch, repr(row.mean_loss), f"{row.wall_seconds:.3f}"])
