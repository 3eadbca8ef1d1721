"""Fixed-rate latent-index codec.

An image is encoded as the posterior-mode codebook indices of every layer,
each packed in ``ceil(log2 K)`` bits. The file layout (little-endian
header) is::

    b"RRVB"  u32 version  u16 image side  u8 L
    L x (u16 grid side, u16 K)            # layer 1 first
    payload: indices MSB-first, layer L first, zero-padded to a byte
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .config import LayerSpec, ModelConfig
from .model import HierarchicalVAE

MAGIC = b"RRVB"
VERSION = 1


class BitstreamError(ValueError):
    pass


def bits_for_layers(layers) -> int:
    return sum(s.M * s.bits_per_index for s in layers)


def bits_for_config(cfg: ModelConfig) -> int:
    """Payload bits per image: the sum over layers of M * ceil(log2 K)."""
    return bits_for_layers(cfg.layers)


def raw_bits(side: int) -> int:
    return side * side * 3 * 8


def compression_ratio(cfg: ModelConfig) -> float:
    return raw_bits(cfg.image_side) / bits_for_config(cfg)


def pack_indices(groups: list[tuple[np.ndarray, int]]) -> bytes:
    """Pack ``(indices, width)`` groups MSB-first into zero-padded bytes."""
    bits = []
    for idx, width in groups:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= 1 << width):
            raise BitstreamError(f"index out of range for a {width}-bit field")
        shifts = np.arange(width - 1, -1, -1)
        bits.append(((idx[:, None] >> shifts) & 1).reshape(-1).astype(np.uint8))
    return np.packbits(np.concatenate(bits) if bits else np.zeros(0, np.uint8)).tobytes()


def unpack_indices(payload: bytes, shapes: list[tuple[int, int]]) -> list[np.ndarray]:
    """Inverse of :func:`pack_indices` for ``(count, width)`` groups."""
    total = sum(c * w for c, w in shapes)
    if len(payload) != (total + 7) // 8:
        raise BitstreamError(f"payload is {len(payload)} bytes, expected {(total + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    out, pos = [], 0
    for count, width in shapes:
        chunk = bits[pos:pos + count * width].reshape(count, width).astype(np.int64)
        out.append(chunk @ (1 << np.arange(width - 1, -1, -1)) if width else np.zeros(count, np.int64))
        pos += count * width
    return out


@dataclass
class LatentBitstream:
    side: int
    layers: tuple[LayerSpec, ...]
    indices: list[np.ndarray]  # per layer, layer 1 first, each (M,)

    @property
    def n_bits(self) -> int:
        return bits_for_layers(self.layers)

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<IHB", VERSION, self.side, len(self.layers))
        head += b"".join(struct.pack("<HH", s.grid_side, s.K) for s in self.layers)
        groups = [(self.indices[i], self.layers[i].bits_per_index) for i in reversed(range(len(self.layers)))]
        return head + pack_indices(groups)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LatentBitstream":
        if data[:4] != MAGIC:
            raise BitstreamError("not a latent bitstream (bad magic)")
        if len(data) < 11:
            raise BitstreamError("truncated bitstream header")
        version, side, L = struct.unpack("<IHB", data[4:11])
        if version != VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        end = 11 + 4 * L
        if len(data) < end:
            raise BitstreamError("truncated layer table")
        layers = tuple(LayerSpec(*struct.unpack("<HH", data[11 + 4 * i:15 + 4 * i])) for i in range(L))
        shapes = [(layers[i].M, layers[i].bits_per_index) for i in reversed(range(L))]
        top_first = unpack_indices(data[end:], shapes)
        return cls(side, layers, top_first[::-1])

    def check_model(self, cfg: ModelConfig) -> None:
        if self.side != cfg.image_side or self.layers != cfg.layers:
            raise BitstreamError(
                f"bitstream header (side {self.side}, layers {[(s.grid_side, s.K) for s in self.layers]}) "
                f"does not match the model (side {cfg.image_side}, layers {[(s.grid_side, s.K) for s in cfg.layers]})")


def _require_discrete(model: HierarchicalVAE) -> None:
    if not model.cfg.discrete:
        raise BitstreamError("only discrete-latent models can be used as a codec")


def compress(model: HierarchicalVAE, image: np.ndarray) -> LatentBitstream:
    """Encode one image ``(3, S, S)`` as its posterior-mode indices."""
    _require_discrete(model)
    image = np.asarray(image)
    S = model.cfg.image_side
    if image.shape != (3, S, S):
        raise BitstreamError(f"image shape {image.shape} does not match the model's (3, {S}, {S})")
    _, latents = model.reconstruct(image[None])
    return LatentBitstream(S, model.cfg.layers, [latents[i + 1][0] for i in range(model.cfg.L)])


def decompress(model: HierarchicalVAE, bs: LatentBitstream) -> np.ndarray:
    """Decode a bitstream to an 8-bit image ``(3, S, S)``."""
    _require_discrete(model)
    bs.check_model(model.cfg)
    for i, (idx, spec) in enumerate(zip(bs.indices, bs.layers), 1):
        if idx.size != spec.M:
            raise BitstreamError(f"layer {i}: {idx.size} indices, expected {spec.M}")
        if idx.size and idx.max() >= spec.K:
            raise BitstreamError(f"layer {i}: index {int(idx.max())} exceeds K={spec.K}")
    latents = {i + 1: idx[None] for i, idx in enumerate(bs.indices)}
    return model.decode(latents, n=1)[0]


def rate_report(model_or_cfg, images: np.ndarray, path=None) -> list[dict]:
    """Bits and compression ratio per image; with a fixed-rate code both are constant."""
    cfg = model_or_cfg.cfg if isinstance(model_or_cfg, HierarchicalVAE) else model_or_cfg
    rows = []
    for i, image in enumerate(images):
        if isinstance(model_or_cfg, HierarchicalVAE):
            bits = compress(model_or_cfg, image).n_bits
        else:
            bits = bits_for_config(cfg)
        rows.append({"image": i, "bits": bits, "compression_ratio": raw_bits(cfg.image_side) / bits})
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "bits", "compression_ratio"])
            for r in rows:
                w.writerow([r["image"], r["bits"], f"{r['compression_ratio']:.6f}"])
    return rows


def tapered_64_config(d_e: int = 32, channels: int = 8) -> ModelConfig:
    """The five-layer 64x64 shape used for the bit-accounting check (narrow backbone)."""
    grids, Ks = (16, 8, 4, 2, 1), (128, 64, 32, 16, 8)
    return ModelConfig(layers=tuple(LayerSpec(g, k) for g, k in zip(grids, Ks)), image_side=64, d_e=d_e,
                       channels=channels)
