"""On-disk compression pipeline: cube -> latent container -> cube.

A compressed image stores one latent vector per pixel plus a fingerprint
of the model weights that produced it; decompression refuses to run with
any other weights, since decoding with the wrong model silently yields
garbage.  Latents are serialized as little-endian float32 with no
quantization or entropy stage, so the payload shrinks by exactly
``bands / latent_channels`` relative to the source cube at equal element
width.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T
from .dataio import FormatError, HsiCube
from .model import ModelWeights, decode_pixel, encode_pixel, fingerprint_of

__all__ = [
    "CompressedImage",
    "FingerprintMismatchError",
    "compress",
    "decompress",
    "write_compressed",
    "read_compressed",
]

COMPRESSED_MAGIC = b"HYC1"
COMPRESSED_VERSION = 1
# magic + version + H,W,gamma + fingerprint + raw_min,raw_max
_HEADER = struct.Struct("<4sH3IQ2d")


class FingerprintMismatchError(ValueError):
    """Compressed payload was produced by different model weights."""


class CompressedImage:
    """Header plus ``H*W*gamma`` latent scalars, pixel-interleaved."""

    def __init__(self, height: int, width: int, latent_channels: int,
                 model_fingerprint: int, raw_min: float, raw_max: float,
                 latents: np.ndarray):
        latents = np.ascontiguousarray(latents, dtype=np.float64)
        if latents.shape != (height, width, latent_channels):
            raise ValueError(
                f"latents shape {latents.shape} does not match "
                f"({height}, {width}, {latent_channels})"
            )
        self.height = height
        self.width = width
        self.latent_channels = latent_channels
        self.model_fingerprint = model_fingerprint
        self.raw_min = raw_min
        self.raw_max = raw_max
        self.latents = latents

    def __eq__(self, other):
        return (isinstance(other, CompressedImage)
                and self.model_fingerprint == other.model_fingerprint
                and self.raw_min == other.raw_min
                and self.raw_max == other.raw_max
                and self.latents.shape == other.latents.shape
                and np.array_equal(self.latents, other.latents))


def compress(cube: HsiCube, weights: ModelWeights, chunk: int = 1024) -> CompressedImage:
    """Encode every pixel to its latent vector; purely deterministic."""
    cfg = weights.config
    if cube.bands != cfg.bands:
        raise T.ShapeError(f"cube has {cube.bands} bands, model expects {cfg.bands}")
    pixels = cube.pixels()
    parts = [encode_pixel(pixels[i:i + chunk], weights).data
             for i in range(0, pixels.shape[0], chunk)]
    latents = np.concatenate(parts).reshape(cube.height, cube.width, cfg.latent_channels)
    return CompressedImage(cube.height, cube.width, cfg.latent_channels,
                           fingerprint_of(weights), cube.raw_min, cube.raw_max,
                           latents)


def decompress(image: CompressedImage, weights: ModelWeights,
               chunk: int = 1024) -> HsiCube:
    """Reconstruct the cube; refuses wrong weights via the fingerprint."""
    cfg = weights.config
    if image.latent_channels != cfg.latent_channels:
        raise T.ShapeError(
            f"payload has {image.latent_channels} latent channels, "
            f"model expects {cfg.latent_channels}"
        )
    actual = fingerprint_of(weights)
    if image.model_fingerprint != actual:
        raise FingerprintMismatchError(
            f"compressed with model {image.model_fingerprint:016x}, "
            f"supplied weights hash to {actual:016x}"
        )
    flat = image.latents.reshape(-1, cfg.latent_channels)
    parts = [decode_pixel(flat[i:i + chunk], weights).data
             for i in range(0, flat.shape[0], chunk)]
    data = np.concatenate(parts).reshape(image.height, image.width, cfg.bands)
    return HsiCube(data, raw_min=image.raw_min, raw_max=image.raw_max)


def write_compressed(image: CompressedImage, path) -> None:
    header = _HEADER.pack(COMPRESSED_MAGIC, COMPRESSED_VERSION, image.height,
                          image.width, image.latent_channels,
                          image.model_fingerprint, image.raw_min, image.raw_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.latents.astype("<f4").tobytes())


def read_compressed(path) -> CompressedImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != COMPRESSED_MAGIC:
        raise FormatError(f"{path}: not an HYC1 container (magic {blob[:4]!r})")
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    (_, version, height, width, gamma,
     fingerprint, raw_min, raw_max) = _HEADER.unpack_from(blob)
    if version != COMPRESSED_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    expected = _HEADER.size + 4 * height * width * gamma
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    latents = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    latents = latents.astype(np.float64).reshape(height, width, gamma)
    return CompressedImage(height, width, gamma, fingerprint, raw_min, raw_max,
                           latents)
