"""Pixelwise transformer autoencoder for hyperspectral spectra.

Each pixel's spectrum is padded, split into groups of neighbouring bands,
linearly embedded, and prefixed with a learnable compression token.  A
stack of pre-norm transformer blocks aggregates the spectrum into that
token, which a two-layer MLP head projects down to ``latent_channels``
values in (0, 1).  A lightweight two-layer MLP decoder reconstructs the
full spectrum from the latent vector alone, so every pixel is encoded and
decoded independently of its neighbours.

All forward functions accept a single spectrum ``(C,)`` or a batch
``(N, C)`` (latents respectively ``(gamma,)`` / ``(N, gamma)``) and return
:class:`~hycot.tensor.Tensor` values so that training can differentiate
through them.  Inputs are treated as constants; gradients flow to the
weights only.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .dataio import FormatError, HsiCube

__all__ = [
    "ModelConfig",
    "BlockWeights",
    "ModelWeights",
    "init_weights",
    "pad_amount",
    "n_tokens",
    "pad_and_group",
    "embed_pixel",
    "msa",
    "transformer_block",
    "encode_pixel",
    "decode_pixel",
    "forward_image",
    "cr_of",
    "format_cr",
    "param_count",
    "flops_estimate",
    "save_checkpoint",
    "load_checkpoint",
    "fingerprint_of",
    "fnv1a64",
]

LN_EPS = 1e-5

CHECKPOINT_MAGIC = b"HYCW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every weight shape derives from these."""

    bands: int
    latent_channels: int
    group_depth: int = 4
    embed_dim: int = 64
    n_blocks: int = 5
    n_heads: int = 4
    hidden_dim: int = 1024
    block_mlp_dim: int = 32
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("bands", "latent_channels", "group_depth", "embed_dim",
                     "n_blocks", "n_heads", "hidden_dim", "block_mlp_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}"
            )
        if self.latent_channels > self.bands:
            raise ValueError(
                f"latent_channels {self.latent_channels} exceeds band count {self.bands}"
            )
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def pad_amount(bands: int, group_depth: int) -> int:
    """Zero bands appended so the padded spectrum splits evenly into groups."""
    if group_depth < 1:
        raise ValueError(f"group_depth must be positive, got {group_depth}")
    return (group_depth - bands % group_depth) % group_depth


def n_tokens(config: ModelConfig) -> int:
    """Group count plus one for the compression token."""
    padded = config.bands + pad_amount(config.bands, config.group_depth)
    return padded // config.group_depth + 1


def pad_and_group(pixel, group_depth: int) -> np.ndarray:
    """Zero-pad the band axis and split it into consecutive groups.

    ``(C,)`` becomes ``(G, group_depth)`` and ``(N, C)`` becomes
    ``(N, G, group_depth)`` with ``G = (C + pad) / group_depth``.
    """
    arr = np.asarray(pixel, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise T.ShapeError(f"expected a spectrum or batch of spectra, got shape {arr.shape}")
    bands = arr.shape[-1]
    if bands < 1:
        raise ValueError("spectrum must contain at least one band")
    pad = pad_amount(bands, group_depth)
    if pad:
        widths = [(0, 0)] * (arr.ndim - 1) + [(0, pad)]
        arr = np.pad(arr, widths)
    return arr.reshape(arr.shape[:-1] + ((bands + pad) // group_depth, group_depth))


@dataclass
class BlockWeights:
    ln1_gain: T.Tensor
    ln1_bias: T.Tensor
    qkv_w: T.Tensor
    qkv_b: T.Tensor
    msa_w: T.Tensor
    msa_b: T.Tensor
    ln2_gain: T.Tensor
    ln2_bias: T.Tensor
    mlp1_w: T.Tensor
    mlp1_b: T.Tensor
    mlp2_w: T.Tensor
    mlp2_b: T.Tensor

    _FIELDS = ("ln1_gain", "ln1_bias", "qkv_w", "qkv_b", "msa_w", "msa_b",
               "ln2_gain", "ln2_bias", "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b")


@dataclass
class ModelWeights:
    """Every learnable array of the model, in a fixed serialization order."""

    config: ModelConfig
    proj_w: T.Tensor
    proj_b: T.Tensor
    ct: T.Tensor
    pos: T.Tensor
    blocks: list[BlockWeights]
    enc1_w: T.Tensor
    enc1_b: T.Tensor
    enc2_w: T.Tensor
    enc2_b: T.Tensor
    dec1_w: T.Tensor
    dec1_b: T.Tensor
    dec2_w: T.Tensor
    dec2_b: T.Tensor

    def named_tensors(self) -> list[tuple[str, T.Tensor]]:
        """All weight arrays in the order they are serialized and counted."""
        named = [("proj_w", self.proj_w), ("proj_b", self.proj_b),
                 ("ct", self.ct), ("pos", self.pos)]
        for i, block in enumerate(self.blocks):
            for fname in BlockWeights._FIELDS:
                named.append((f"block{i}.{fname}", getattr(block, fname)))
        named += [("enc1_w", self.enc1_w), ("enc1_b", self.enc1_b),
                  ("enc2_w", self.enc2_w), ("enc2_b", self.enc2_b),
                  ("dec1_w", self.dec1_w), ("dec1_b", self.dec1_b),
                  ("dec2_w", self.dec2_w), ("dec2_b", self.dec2_b)]
        return named

    def tensors(self) -> list[T.Tensor]:
        return [t for _, t in self.named_tensors()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def copy(self) -> "ModelWeights":
        arrays = [t.data.copy() for t in self.tensors()]
        return _weights_from_arrays(self.config, arrays)


def _weight_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, g, m = config.embed_dim, config.group_depth, config.block_mlp_dim
    h, gamma, C = config.hidden_dim, config.latent_channels, config.bands
    nt = n_tokens(config)
    shapes = [("proj_w", (g, d)), ("proj_b", (d,)), ("ct", (d,)), ("pos", (nt, d))]
    for i in range(config.n_blocks):
        shapes += [
            (f"block{i}.ln1_gain", (d,)), (f"block{i}.ln1_bias", (d,)),
            (f"block{i}.qkv_w", (d, 3 * d)), (f"block{i}.qkv_b", (3 * d,)),
            (f"block{i}.msa_w", (d, d)), (f"block{i}.msa_b", (d,)),
            (f"block{i}.ln2_gain", (d,)), (f"block{i}.ln2_bias", (d,)),
            (f"block{i}.mlp1_w", (d, m)), (f"block{i}.mlp1_b", (m,)),
            (f"block{i}.mlp2_w", (m, d)), (f"block{i}.mlp2_b", (d,)),
        ]
    shapes += [
        ("enc1_w", (d, h)), ("enc1_b", (h,)),
        ("enc2_w", (h, gamma)), ("enc2_b", (gamma,)),
        ("dec1_w", (gamma, h)), ("dec1_b", (h,)),
        ("dec2_w", (h, C)), ("dec2_b", (C,)),
    ]
    return shapes


def _weights_from_arrays(config: ModelConfig, arrays: list[np.ndarray]) -> ModelWeights:
    shapes = _weight_shapes(config)
    if len(arrays) != len(shapes):
        raise ValueError(f"expected {len(shapes)} weight arrays, got {len(arrays)}")
    tensors = []
    for (name, shape), arr in zip(shapes, arrays):
        if arr.shape != shape:
            raise ValueError(f"weight {name} has shape {arr.shape}, expected {shape}")
        tensors.append(T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True))
    it = iter(tensors)
    proj_w, proj_b, ct, pos = next(it), next(it), next(it), next(it)
    blocks = []
    for _ in range(config.n_blocks):
        blocks.append(BlockWeights(*(next(it) for _ in BlockWeights._FIELDS)))
    rest = list(it)
    return ModelWeights(config, proj_w, proj_b, ct, pos, blocks, *rest)


def init_weights(config: ModelConfig) -> ModelWeights:
    """Fresh weights drawn deterministically from ``config.seed``.

    Linear weights and biases are uniform in ``±1/sqrt(fan_in)``; the
    compression token and position embeddings are normal(0, 0.02); layer
    norm gains start at one and biases at zero.
    """
    rng = np.random.default_rng(config.seed)

    def uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        limit = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape)

    arrays: list[np.ndarray] = []
    for name, shape in _weight_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("ln1_gain", "ln2_gain"):
            arrays.append(np.ones(shape))
        elif leaf in ("ln1_bias", "ln2_bias"):
            arrays.append(np.zeros(shape))
        elif leaf in ("ct", "pos"):
            arrays.append(rng.normal(0.0, 0.02, size=shape))
        elif leaf.endswith("_w"):
            arrays.append(uniform(shape[0], shape))
        else:  # linear bias: fan_in of the weight drawn just before it
            arrays.append(uniform(arrays[-1].shape[0], shape))
    return _weights_from_arrays(config, arrays)


# ---------------------------------------------------------------------------
# forward pass


def _as_batch(x, feature_len: int, what: str) -> tuple[T.Tensor | np.ndarray, bool]:
    arr = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        squeeze = True
    elif arr.ndim == 2:
        squeeze = False
    else:
        raise T.ShapeError(f"{what}: expected 1-D or 2-D input, got shape {arr.shape}")
    if arr.shape[-1] != feature_len:
        raise T.ShapeError(f"{what}: last extent is {arr.shape[-1]}, expected {feature_len}")
    if isinstance(x, T.Tensor):
        return (T.reshape(x, (1,) + arr.shape) if squeeze else x), squeeze
    return arr.reshape((1,) + arr.shape) if squeeze else arr, squeeze


def embed_pixel(pixel, weights: ModelWeights) -> T.Tensor:
    """Token sequence for a spectrum: compression token, then group embeddings,
    each with its learned position added."""
    cfg = weights.config
    arr, squeeze = _as_batch(pixel, cfg.bands, "embed_pixel")
    if isinstance(arr, T.Tensor):
        arr = arr.data
    groups = pad_and_group(arr, cfg.group_depth)
    tok = T.linear(T.Tensor(groups), weights.proj_w, weights.proj_b)
    batch = groups.shape[0]
    ct_row = T.broadcast_to(T.reshape(weights.ct, (1, 1, cfg.embed_dim)),
                            (batch, 1, cfg.embed_dim))
    tokens = T.add(T.concat([ct_row, tok], axis=1), weights.pos)
    if squeeze:
        tokens = T.reshape(tokens, tokens.shape[1:])
    return tokens


def msa(tokens, block: BlockWeights, heads: int) -> T.Tensor:
    """Multi-head self-attention over a token sequence ``(..., n, d)``."""
    t = tokens if isinstance(tokens, T.Tensor) else T.Tensor(tokens)
    squeeze = t.ndim == 2
    if squeeze:
        t = T.reshape(t, (1,) + t.shape)
    batch, n, d = t.shape
    dh = d // heads
    qkv = T.linear(t, block.qkv_w, block.qkv_b)

    def split_heads(part: T.Tensor) -> T.Tensor:
        return T.transpose(T.reshape(part, (batch, n, heads, dh)), (0, 2, 1, 3))

    q = split_heads(T.narrow(qkv, 2, 0, d))
    k = split_heads(T.narrow(qkv, 2, d, d))
    v = split_heads(T.narrow(qkv, 2, 2 * d, d))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = T.softmax_rows(scores)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (batch, n, d))
    out = T.linear(ctx, block.msa_w, block.msa_b)
    if squeeze:
        out = T.reshape(out, (n, d))
    return out


def transformer_block(tokens, block: BlockWeights, config: ModelConfig) -> T.Tensor:
    """Pre-norm block: attention then MLP, each behind a residual add."""
    t = tokens if isinstance(tokens, T.Tensor) else T.Tensor(tokens)
    attended = msa(T.layer_norm(t, block.ln1_gain, block.ln1_bias, LN_EPS),
                   block, config.n_heads)
    t = T.add(attended, t)
    hidden = T.linear(T.layer_norm(t, block.ln2_gain, block.ln2_bias, LN_EPS),
                      block.mlp1_w, block.mlp1_b)
    hidden = T.leaky_relu(hidden, config.leaky_slope)
    return T.add(T.linear(hidden, block.mlp2_w, block.mlp2_b), t)


def encode_pixel(pixel, weights: ModelWeights) -> T.Tensor:
    """Latent vector(s) in (0, 1) for one spectrum or a batch of spectra."""
    cfg = weights.config
    tokens = embed_pixel(pixel, weights)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    for block in weights.blocks:
        tokens = transformer_block(tokens, block, cfg)
    summary = T.reshape(T.narrow(tokens, 1, 0, 1), (tokens.shape[0], cfg.embed_dim))
    hidden = T.leaky_relu(T.linear(summary, weights.enc1_w, weights.enc1_b),
                          cfg.leaky_slope)
    latent = T.sigmoid(T.linear(hidden, weights.enc2_w, weights.enc2_b))
    if squeeze:
        latent = T.reshape(latent, (cfg.latent_channels,))
    return latent


def decode_pixel(latent, weights: ModelWeights) -> T.Tensor:
    """Reconstructed spectrum (or batch) in (0, 1) from latent channels."""
    cfg = weights.config
    lat, squeeze = _as_batch(latent, cfg.latent_channels, "decode_pixel")
    lat = lat if isinstance(lat, T.Tensor) else T.Tensor(lat)
    hidden = T.leaky_relu(T.linear(lat, weights.dec1_w, weights.dec1_b),
                          cfg.leaky_slope)
    out = T.sigmoid(T.linear(hidden, weights.dec2_w, weights.dec2_b))
    if squeeze:
        out = T.reshape(out, (cfg.bands,))
    return out


def forward_image(cube: HsiCube, weights: ModelWeights,
                  chunk: int = 1024) -> tuple[np.ndarray, HsiCube]:
    """Encode and decode every pixel of a cube independently.

    Returns the latent volume ``(H, W, latent_channels)`` and the
    reconstructed cube.  Pixels are processed in chunks to bound the
    attention workspace; chunking does not change any pixel's result.
    """
    cfg = weights.config
    if cube.bands != cfg.bands:
        raise T.ShapeError(f"cube has {cube.bands} bands, model expects {cfg.bands}")
    pixels = cube.pixels()
    lat_parts, rec_parts = [], []
    for start in range(0, pixels.shape[0], chunk):
        batch = pixels[start:start + chunk]
        lat = encode_pixel(batch, weights).data
        rec_parts.append(decode_pixel(lat, weights).data)
        lat_parts.append(lat)
    latents = np.concatenate(lat_parts).reshape(cube.height, cube.width,
                                                cfg.latent_channels)
    recon = np.concatenate(rec_parts).reshape(cube.height, cube.width, cube.bands)
    return latents, HsiCube(recon, raw_min=cube.raw_min, raw_max=cube.raw_max)


# ---------------------------------------------------------------------------
# complexity accounting


def cr_of(config: ModelConfig) -> Fraction:
    """Compression ratio as an exact rational: bands over latent channels."""
    return Fraction(config.bands, config.latent_channels)


def format_cr(cr) -> str:
    """Render a compression ratio rounded to two decimals."""
    return f"{float(cr):.2f}"


def param_count(config: ModelConfig) -> int:
    """Closed-form learnable-scalar count; equals the allocated total."""
    d, g, m = config.embed_dim, config.group_depth, config.block_mlp_dim
    h, gamma, C = config.hidden_dim, config.latent_channels, config.bands
    nt = n_tokens(config)
    embed = g * d + d + d + nt * d
    per_block = (
        4 * d                    # two layer-norm gain/bias pairs
        + d * 3 * d + 3 * d      # qkv projection
        + d * d + d              # head-merge projection
        + d * m + m + m * d + d  # block MLP
    )
    latent_head = d * h + h + h * gamma + gamma
    decoder = gamma * h + h + h * C + C
    return embed + config.n_blocks * per_block + latent_head + decoder


def flops_estimate(config: ModelConfig, height: int, width: int) -> int:
    """FLOPs to encode and decode an ``height x width`` image, per convention:

    - every linear map of T rows, fan-in i, fan-out o costs ``T*o*(2i+1)``
      (multiply and add per MAC, one add for the bias);
    - attention scores and attention-weighted values cost 2 FLOPs per MAC,
      ``2*n*n*d`` each across all heads, plus ``n*n`` per head for scaling;
    - per element: layer norm 8, softmax 5, leaky_relu 2, sigmoid 4,
      residual/position adds 1.

    The total is per-pixel work times ``height * width``; band grouping and
    token reassembly are copies and cost nothing.
    """
    d, g, m = config.embed_dim, config.group_depth, config.block_mlp_dim
    h, gamma, C = config.hidden_dim, config.latent_channels, config.bands
    k, n = config.n_heads, n_tokens(config)
    groups = n - 1
    per = groups * d * (2 * g + 1) + n * d
    block = 2 * (8 * n * d)
    block += n * (3 * d) * (2 * d + 1)
    block += 2 * n * n * d + k * n * n
    block += 5 * k * n * n
    block += 2 * n * n * d
    block += n * d * (2 * d + 1)
    block += 2 * n * d
    block += n * m * (2 * d + 1) + 2 * n * m + n * d * (2 * m + 1)
    per += config.n_blocks * block
    per += h * (2 * d + 1) + 2 * h + gamma * (2 * h + 1) + 4 * gamma
    per += h * (2 * gamma + 1) + 2 * h + C * (2 * h + 1) + 4 * C
    return height * width * per


# ---------------------------------------------------------------------------
# checkpoint file ("HYCW")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in memoryview(data):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _payload_bytes(weights: ModelWeights) -> bytes:
    return b"".join(t.data.astype("<f4").tobytes() for t in weights.tensors())


def fingerprint_of(weights: ModelWeights) -> int:
    """Hash of the weights as they would be serialized (32-bit little-endian)."""
    return fnv1a64(_payload_bytes(weights))


def _pack_config(config: ModelConfig) -> bytes:
    return struct.pack(
        "<8IdQ",
        config.bands, config.group_depth, config.embed_dim, config.n_blocks,
        config.n_heads, config.hidden_dim, config.latent_channels,
        config.block_mlp_dim, config.leaky_slope, config.seed,
    )


def save_checkpoint(weights: ModelWeights, path) -> None:
    """Write magic, version, config, float32 weight payload and fingerprint."""
    payload = _payload_bytes(weights)
    blob = (CHECKPOINT_MAGIC
            + struct.pack("<H", CHECKPOINT_VERSION)
            + _pack_config(weights.config)
            + payload
            + struct.pack("<Q", fnv1a64(payload)))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> ModelWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (magic {blob[:4]!r})")
    offset = 4
    (version,) = struct.unpack_from("<H", blob, offset)
    offset += 2
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg_size = struct.calcsize("<8IdQ")
    if len(blob) < offset + cfg_size:
        raise FormatError(f"{path}: truncated checkpoint header")
    fields = struct.unpack_from("<8IdQ", blob, offset)
    offset += cfg_size
    config = ModelConfig(
        bands=fields[0], group_depth=fields[1], embed_dim=fields[2],
        n_blocks=fields[3], n_heads=fields[4], hidden_dim=fields[5],
        latent_channels=fields[6], block_mlp_dim=fields[7],
        leaky_slope=fields[8], seed=fields[9],
    )
    payload_len = 4 * param_count(config)
    if len(blob) != offset + payload_len + 8:
        raise FormatError(
            f"{path}: expected {offset + payload_len + 8} bytes, found {len(blob)}"
        )
    payload = blob[offset:offset + payload_len]
    (stored,) = struct.unpack_from("<Q", blob, offset + payload_len)
    if fnv1a64(payload) != stored:
        raise FormatError(f"{path}: checkpoint fingerprint mismatch (corrupt payload)")
    arrays = []
    pos = 0
    for _, shape in _weight_shapes(config):
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
        arrays.append(arr.astype(np.float64).reshape(shape))
        pos += 4 * count
    return _weights_from_arrays(config, arrays)


def derive_config(config: ModelConfig, **overrides) -> ModelConfig:
    """Copy of ``config`` with the given fields replaced (and re-validated)."""
    return replace(config, **overrides)
