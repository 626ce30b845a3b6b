"""Distortion metrics and experiment tables.

PSNR is computed per image over all ``H*W*C`` elements and averaged
across images where a dataset-level figure is needed.  Identical inputs
map to an infinite PSNR, rendered as the text ``inf`` in tables and
compared as greater than any finite value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataio import DatasetSplit, HsiCube
from .model import (ModelConfig, cr_of, derive_config, flops_estimate,
                    format_cr, init_weights, load_checkpoint, param_count)

__all__ = [
    "RDPoint",
    "psnr",
    "rd_sweep",
    "complexity_report",
    "render_rd_table",
    "render_complexity_table",
    "checkpoint_name",
]

RD_COLUMNS = "label,gamma,cr,psnr_db"
COMPLEXITY_COLUMNS = "label,gamma,cr,flops,params"


@dataclass
class RDPoint:
    """One (compression ratio, reconstruction quality) pair."""

    cr: Fraction
    psnr_db: float
    gamma: int
    label: str


def psnr(a: HsiCube, b: HsiCube, peak: float = 1.0) -> float:
    """``10 * log10(peak^2 / MSE)`` over every element, in decibels."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if a.data.shape != b.data.shape:
        raise T.ShapeError(f"psnr: cube shapes {a.data.shape} and {b.data.shape} differ")
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def checkpoint_name(gamma: int) -> str:
    return f"hycot_g{gamma}.hycw"


def rd_sweep(split: DatasetSplit, base_config: ModelConfig, gammas: list[int],
             train_config=None, checkpoint_dir=None, load_only: bool = False,
             label: str = "hycot") -> list[RDPoint]:
    """Rate-distortion points for one model per latent width.

    Trains a fresh model per gamma (or loads ``checkpoint_dir`` files when
    ``load_only``), evaluates full-pixel PSNR on the test cubes, and
    returns points sorted by ascending compression ratio.
    """
    from .training import evaluate, train

    if not gammas:
        raise ValueError("gammas must be non-empty")
    for gamma in gammas:
        if not 1 <= gamma <= base_config.bands:
            raise ValueError(f"gamma {gamma} outside [1, {base_config.bands}]")
    if load_only:
        if checkpoint_dir is None:
            raise ValueError("load_only needs a checkpoint_dir")
        missing = [g for g in gammas
                   if not (Path(checkpoint_dir) / checkpoint_name(g)).exists()]
        if missing:
            raise FileNotFoundError(
                "missing checkpoints for gamma "
                + ", ".join(str(g) for g in sorted(missing))
            )
    if not split.test:
        raise ValueError("test split is empty")

    points = []
    for gamma in gammas:
        config = derive_config(base_config, latent_channels=gamma)
        if load_only:
            weights = load_checkpoint(Path(checkpoint_dir) / checkpoint_name(gamma))
        else:
            if train_config is None:
                raise ValueError("training an rd sweep needs a train_config")
            path = (Path(checkpoint_dir) / checkpoint_name(gamma)
                    if checkpoint_dir else None)
            weights = train(split, init_weights(config), train_config,
                            checkpoint_path=path).weights
        points.append(RDPoint(cr=cr_of(config),
                              psnr_db=evaluate(split.test, weights),
                              gamma=gamma, label=label))
    points.sort(key=lambda p: p.cr)
    return points


def complexity_report(configs: list[ModelConfig], height: int, width: int,
                      label: str = "hycot") -> list[tuple]:
    """``(label, gamma, cr, flops, params)`` rows, sorted by ascending CR."""
    rows = [(label, cfg.latent_channels, cr_of(cfg),
             flops_estimate(cfg, height, width), param_count(cfg))
            for cfg in configs]
    rows.sort(key=lambda row: row[2])
    return rows


def _fmt_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def render_rd_table(points: list[RDPoint]) -> str:
    lines = [RD_COLUMNS]
    for p in points:
        lines.append(f"{p.label},{p.gamma},{format_cr(p.cr)},{_fmt_psnr(p.psnr_db)}")
    return "\n".join(lines) + "\n"


def render_complexity_table(rows: list[tuple]) -> str:
    lines = [COMPLEXITY_COLUMNS]
    for label, gamma, cr, flops, params in rows:
        lines.append(f"{label},{gamma},{format_cr(cr)},{flops},{params}")
    return "\n".join(lines) + "\n"
