"""MSE training with Adam and random-pixel training-set reduction.

Instead of visiting all ``W*H`` pixels of every training cube, each epoch
draws ``n = ceil(W*H / r)`` distinct pixels per cube uniformly at random
(a fresh draw per epoch), where ``r`` is the reduction factor.  Validation
and test evaluation always use every pixel.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dataio import DatasetSplit, HsiCube
from .model import ModelWeights, decode_pixel, encode_pixel, save_checkpoint

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "sample_positions",
    "sample_pixels",
    "mse_loss",
    "EpochStats",
    "TrainResult",
    "train",
    "evaluate",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    batch_pixels: int = 4096
    reduction_factor: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_pixels < 1:
            raise ValueError("batch_pixels must be positive")
        if self.reduction_factor < 1:
            raise ValueError("reduction_factor must be at least 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")


@dataclass
class AdamState:
    """First/second moment estimates mirroring a fixed parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[T.Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list[T.Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, from the params' ``grad`` slots."""
    if len(params) != len(state.m):
        raise ValueError(f"optimizer state tracks {len(state.m)} arrays, got {len(params)}")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for i, p in enumerate(params):
        if p.grad is None:
            raise T.GraphError(f"parameter {i} has no gradient; run backward first")
        g = p.grad
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def pixels_per_epoch(height: int, width: int, reduction_factor: int) -> int:
    if reduction_factor < 1:
        raise ValueError("reduction_factor must be at least 1")
    return max(1, math.ceil(height * width / reduction_factor))


def sample_positions(height: int, width: int, reduction_factor: int, rng) -> np.ndarray:
    """Flat indices of ``ceil(W*H/r)`` distinct pixels, uniform without replacement."""
    n = pixels_per_epoch(height, width, reduction_factor)
    return rng.choice(height * width, size=n, replace=False)


def sample_pixels(cube: HsiCube, reduction_factor: int, rng) -> np.ndarray:
    """Spectra of a fresh random pixel subset of ``cube``, shape ``(n, C)``."""
    positions = sample_positions(cube.height, cube.width, reduction_factor, rng)
    return cube.pixels()[positions]


def mse_loss(pred: T.Tensor, target) -> T.Tensor:
    """Mean squared difference over all elements; differentiable."""
    target = target if isinstance(target, T.Tensor) else T.Tensor(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = T.sub(pred, target)
    return T.mean_all(T.mul(diff, diff))


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_psnr_db: float
    seconds: float

    def line(self) -> str:
        return (f"{self.epoch},{self.train_mse:.12g},"
                f"{self.val_psnr_db:.6f},{self.seconds:.3f}")


@dataclass
class TrainResult:
    weights: ModelWeights
    log: list[EpochStats] = field(default_factory=list)
    best_val_psnr: float = float("-inf")
    best_epoch: int = 0


def train(split: DatasetSplit, weights: ModelWeights, cfg: TrainConfig,
          checkpoint_path=None, log_path=None) -> TrainResult:
    """Optimize ``weights`` on the split's training cubes.

    Per epoch and cube the sampled pixels are consumed in batches of at
    most ``batch_pixels``; each batch is one forward/backward/Adam step.
    The epoch log records mean training MSE and full-pixel validation
    PSNR.  The returned (and checkpointed) weights are the ones with the
    best validation PSNR seen, ties going to the earlier epoch.  Given
    identical inputs, config and seed, everything except the timing column
    is reproduced exactly.
    """
    if not split.train:
        raise ValueError("training split is empty")
    if not split.val:
        raise ValueError("validation split is empty")
    bands = weights.config.bands
    for cube in list(split.train) + list(split.val):
        if cube.bands != bands:
            raise ValueError(f"dataset has {cube.bands} bands, model expects {bands}")

    rng = np.random.default_rng(cfg.seed)
    params = weights.tensors()
    state = AdamState.for_params(params)
    result = TrainResult(weights=weights.copy())
    log_fh = open(log_path, "a", encoding="ascii") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            sq_sum = 0.0
            n_seen = 0
            for cube in split.train:
                spectra = sample_pixels(cube, cfg.reduction_factor, rng)
                for start in range(0, spectra.shape[0], cfg.batch_pixels):
                    batch = spectra[start:start + cfg.batch_pixels]
                    weights.zero_grad()
                    with T.Graph() as graph:
                        recon = decode_pixel(encode_pixel(batch, weights), weights)
                        loss = mse_loss(recon, batch)
                    graph.backward(loss)
                    adam_step(params, state, cfg)
                    sq_sum += loss.item() * batch.shape[0]
                    n_seen += batch.shape[0]
            train_mse = sq_sum / n_seen
            val_psnr = evaluate(split.val, weights)
            stats = EpochStats(epoch, train_mse, val_psnr,
                               time.perf_counter() - t0)
            result.log.append(stats)
            if log_fh:
                log_fh.write(stats.line() + "\n")
                log_fh.flush()
            if val_psnr > result.best_val_psnr:
                result.best_val_psnr = val_psnr
                result.best_epoch = epoch
                result.weights = weights.copy()
            if (checkpoint_path and cfg.checkpoint_every
                    and epoch % cfg.checkpoint_every == 0):
                save_checkpoint(result.weights, checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(result.weights, checkpoint_path)
    return result


def evaluate(cubes: list[HsiCube], weights: ModelWeights) -> float:
    """Mean full-pixel reconstruction PSNR over ``cubes`` (never subsampled)."""
    from .metrics import psnr
    from .model import forward_image

    if not cubes:
        raise ValueError("cannot evaluate an empty dataset")
    scores = []
    for cube in cubes:
        _, recon = forward_image(cube, weights)
        scores.append(psnr(recon, cube))
    return float(np.mean(scores))
