"""Binary model checkpoints.

Layout: magic "ACKP", u32 version, nine u32 config integers (n_feats, the
three encoder widths, the two decoder widths, vocab size, caption steps,
sequence length), then a u32-counted table of named tensors.  Each entry is
u32 name length, UTF-8 name, u32 rank, u32 dims, then the float64
little-endian payload.  Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelConfig, ModelParams, zeros_params
from .numgraph import DimensionError

MAGIC = b"ACKP"
VERSION = 1

__all__ = [
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointCorruptError",
    "save_checkpoint",
    "load_checkpoint",
]


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file (bad magic)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint truncated or internally inconsistent."""


def save_checkpoint(params: ModelParams, path) -> None:
    config = params.config
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack(
        "<9I", config.n_feats, *config.encoder_hidden, *config.decoder_hidden,
        config.vocab_size, config.caption_steps, config.seq_len,
    ))
    named = params.named_tensors()
    parts.append(struct.pack("<I", len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        payload = np.ascontiguousarray(tensor.data, dtype="<f8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", payload.ndim))
        parts.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        parts.append(payload.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path
        self.context = "header"

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise CheckpointCorruptError(f"{self.path}: truncated while reading {self.context}")
        chunk = self.blob[self.offset : end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint back; the returned params carry their ModelConfig."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    reader = _Reader(blob, path)
    reader.offset = 4
    version = reader.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {VERSION}")
    reader.context = "config block"
    fields = [reader.u32() for _ in range(9)]
    try:
        config = ModelConfig(
            n_feats=fields[0], encoder_hidden=tuple(fields[1:4]),
            decoder_hidden=tuple(fields[4:6]), vocab_size=fields[6],
            caption_steps=fields[7], seq_len=fields[8],
        )
    except ValueError as exc:
        raise CheckpointCorruptError(f"{path}: invalid config block ({exc})") from exc

    reader.context = "tensor count"
    n_tensors = reader.u32()
    values: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        reader.context = "tensor name"
        name_length = reader.u32()
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointCorruptError(f"{path}: undecodable tensor name") from exc
        reader.context = f"tensor '{name}'"
        rank = reader.u32()
        dims = [reader.u32() for _ in range(rank)]
        count = 1
        for d in dims:
            count *= d
        payload = reader.take(8 * count)
        values[name] = np.frombuffer(payload, dtype="<f8").reshape(dims)
    if reader.offset != len(blob):
        raise CheckpointCorruptError(f"{path}: {len(blob) - reader.offset} trailing bytes")

    params = zeros_params(config)
    expected = [name for name, _ in params.named_tensors()]
    if set(expected) != set(values):
        raise CheckpointCorruptError(f"{path}: tensor names do not match the config layout")
    try:
        params.load_state_values(values)
    except DimensionError as exc:
        raise CheckpointCorruptError(f"{path}: {exc}") from exc
    return params
