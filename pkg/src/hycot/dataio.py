"""Hyperspectral cube container, raster file format, and synthetic datasets.

Cubes hold normalized values in [0, 1] with the original value range kept
as ``raw_min``/``raw_max`` so reconstructions can be mapped back.  The
on-disk "HSC1" format stores the payload as little-endian float32 in
pixel-interleaved (band-innermost) order, one contiguous run per pixel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FormatError",
    "HsiCube",
    "DatasetSplit",
    "write_cube",
    "read_cube",
    "normalize",
    "denormalize",
    "synth_dataset",
    "split_dataset",
    "write_manifest",
    "read_manifest",
]

CUBE_MAGIC = b"HSC1"
CUBE_VERSION = 1
# magic + version + H,W,C + raw_min,raw_max
_HEADER = struct.Struct("<4sH3I2d")

SPLIT_NAMES = ("train", "val", "test")


class FormatError(ValueError):
    """A binary file does not match its declared format."""


@dataclass
class HsiCube:
    """An ``H x W x C`` raster of [0, 1] reflectances, band-innermost."""

    data: np.ndarray
    raw_min: float = 0.0
    raw_max: float = 1.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be H x W x C, got shape {self.data.shape}")
        if self.data.size == 0:
            raise ValueError("cube has no pixels")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"cube values must lie in [0, 1], found [{lo}, {hi}]")
        if not self.raw_min < self.raw_max:
            raise ValueError(f"raw_min {self.raw_min} must be below raw_max {self.raw_max}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """All spectra as an ``(H*W, C)`` view in row-major pixel order."""
        return self.data.reshape(-1, self.bands)


@dataclass
class DatasetSplit:
    """Disjoint train/val/test partitions of a cube collection."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def parts(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def write_cube(cube: HsiCube, path) -> None:
    header = _HEADER.pack(CUBE_MAGIC, CUBE_VERSION, cube.height, cube.width,
                          cube.bands, cube.raw_min, cube.raw_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cube.data.astype("<f4").tobytes())


def read_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CUBE_MAGIC:
        raise FormatError(f"{path}: not an HSC1 cube (magic {blob[:4]!r})")
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    _, version, height, width, bands, raw_min, raw_max = _HEADER.unpack_from(blob)
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported cube version {version}")
    expected = _HEADER.size + 4 * height * width * bands
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    payload = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    data = payload.astype(np.float64).reshape(height, width, bands)
    return HsiCube(data, raw_min=raw_min, raw_max=raw_max)


def normalize(raw, lo: float, hi: float) -> np.ndarray:
    """Map ``[lo, hi]`` onto [0, 1], clipping anything outside the range."""
    if not hi > lo:
        raise ValueError(f"normalize needs hi > lo, got [{lo}, {hi}]")
    arr = np.asarray(raw, dtype=np.float64)
    return np.clip((arr - lo) / (hi - lo), 0.0, 1.0)


def denormalize(values, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise ValueError(f"denormalize needs hi > lo, got [{lo}, {hi}]")
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


def _smooth_endmembers(n_endmembers: int, bands: int, rng) -> np.ndarray:
    """Random smooth spectra in [0.05, 0.95]: sums of Gaussian bumps."""
    grid = np.arange(bands, dtype=np.float64)
    spectra = np.empty((n_endmembers, bands))
    for i in range(n_endmembers):
        n_bumps = int(rng.integers(2, 6))
        centers = rng.uniform(0, bands, size=n_bumps)
        widths = rng.uniform(bands / 12, bands / 3, size=n_bumps)
        heights = rng.uniform(0.2, 1.0, size=n_bumps)
        curve = (heights[:, None]
                 * np.exp(-0.5 * ((grid - centers[:, None]) / widths[:, None]) ** 2)
                 ).sum(axis=0)
        lo, hi = curve.min(), curve.max()
        span = hi - lo if hi > lo else 1.0
        spectra[i] = 0.05 + 0.9 * (curve - lo) / span
    return spectra


def synth_dataset(n_cubes: int, height: int, width: int, bands: int,
                  n_endmembers: int = 4, noise_sd: float = 0.0,
                  seed: int = 0) -> list[HsiCube]:
    """Synthetic cubes: convex mixtures of shared smooth endmember spectra.

    Every pixel draws Dirichlet abundance weights over one dataset-wide
    endmember dictionary, then optional Gaussian noise is added and the
    result clipped to [0, 1].  Fully deterministic per seed.
    """
    if n_endmembers < 1:
        raise ValueError("n_endmembers must be at least 1")
    if n_cubes < 1 or height < 1 or width < 1 or bands < 1:
        raise ValueError("n_cubes, height, width and bands must be positive")
    rng = np.random.default_rng(seed)
    endmembers = _smooth_endmembers(n_endmembers, bands, rng)
    cubes = []
    for _ in range(n_cubes):
        weights = rng.dirichlet(np.ones(n_endmembers), size=height * width)
        data = weights @ endmembers
        if noise_sd > 0:
            data = data + rng.normal(0.0, noise_sd, size=data.shape)
        data = np.clip(data, 0.0, 1.0).reshape(height, width, bands)
        cubes.append(HsiCube(data))
    return cubes


def split_dataset(cubes: list, fractions=(0.7, 0.2, 0.1), seed: int = 0) -> DatasetSplit:
    """Random disjoint train/val/test partition, deterministic per seed.

    Sizes follow largest-remainder rounding of the fractions, so each part
    is within one cube of its exact share.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must give (train, val, test) shares")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n_parts = sum(1 for f in fractions if f > 0)
    if len(cubes) < n_parts:
        raise ValueError(f"cannot split {len(cubes)} cubes into {n_parts} non-empty parts")
    total = len(cubes)
    exact = [f * total for f in fractions]
    sizes = [int(e) for e in exact]
    remainders = sorted(range(3), key=lambda i: exact[i] - sizes[i], reverse=True)
    for i in remainders[: total - sum(sizes)]:
        sizes[i] += 1
    order = np.random.default_rng(seed).permutation(total)
    picked = [cubes[i] for i in order]
    train = picked[: sizes[0]]
    val = picked[sizes[0]: sizes[0] + sizes[1]]
    test = picked[sizes[0] + sizes[1]:]
    return DatasetSplit(train=train, val=val, test=test)


def write_manifest(path, entries: list[tuple[str, str]]) -> None:
    """Plain-text manifest: one ``path,split`` line per cube file."""
    lines = []
    for rel, label in entries:
        if label not in SPLIT_NAMES:
            raise ValueError(f"unknown split label {label!r}")
        lines.append(f"{rel},{label}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def read_manifest(path) -> list[tuple[str, str]]:
    entries = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rel, sep, label = line.rpartition(",")
            if not sep or label not in SPLIT_NAMES:
                raise FormatError(f"{path}:{lineno}: expected 'path,split', got {line!r}")
            entries.append((rel, label))
    if not entries:
        raise FormatError(f"{path}: manifest lists no cubes")
    return entries
