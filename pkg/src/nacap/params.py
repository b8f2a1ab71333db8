"""Learnable weights: initialization and binary checkpoint serialization.

Checkpoint layout (all integers little-endian):
  8-byte magic, u32 format version, u32 JSON length, JSON bytes (model config
  plus run metadata), then per tensor: u32 name length, name bytes, u32 rank,
  u64 dims[rank], f64 values (row-major). Tensors are written sorted by name.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"NACAPCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or from an unsupported version."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    d_hidden: int = 128
    layers: int = 1
    heads: int = 2
    dropout: float = 0.1
    d_in: int = 32
    n_max: int = 24
    m_max: int = 8

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "d_hidden", "layers", "heads",
                     "d_in", "n_max", "m_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")


class ModelParams:
    """Name-keyed parameter tensors plus the config they were built for."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self):
        return ModelParams(
            self.config,
            {name: Tensor(t.data.copy()) for name, t in self.tensors.items()},
        )


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config, seed):
    """Deterministic initial weights for every model component."""
    rng = np.random.default_rng([int(seed), 77])
    d, dh = config.d_model, config.d_hidden
    v = config.vocab_size
    t = {}

    t["embedding.table"] = rng.normal(scale=0.1, size=(v, d))

    t["encoder.weight"] = _glorot(rng, config.d_in, d)
    t["encoder.bias"] = np.zeros(d)

    t["aligner.init_weight"] = _glorot(rng, d, d)
    t["aligner.attn_query"] = _glorot(rng, d, d)
    t["aligner.attn_key"] = _glorot(rng, d, d)
    t["aligner.gru_input_weight"] = _glorot(rng, 2 * d, 3 * d)
    t["aligner.gru_input_bias"] = np.zeros(3 * d)
    t["aligner.gru_hidden_weight"] = _glorot(rng, d, 3 * d)
    t["aligner.gru_hidden_bias"] = np.zeros(3 * d)
    t["aligner.out_weight"] = _glorot(rng, d, v)
    t["aligner.out_bias"] = np.zeros(v)

    for layer in range(config.layers):
        base = f"decoder.layer{layer}"
        for attn in ("self_attn", "inter_attn"):
            for proj in ("query", "key", "value", "out"):
                t[f"{base}.{attn}.{proj}_weight"] = _glorot(rng, d, d)
        for norm in ("norm1", "norm2", "norm3"):
            t[f"{base}.{norm}.gain"] = np.ones(d)
            t[f"{base}.{norm}.bias"] = np.zeros(d)
        t[f"{base}.ffn.w1"] = _glorot(rng, d, dh)
        t[f"{base}.ffn.b1"] = np.zeros(dh)
        t[f"{base}.ffn.w2"] = _glorot(rng, dh, d)
        t[f"{base}.ffn.b2"] = np.zeros(d)

    t["decoder.out_weight"] = _glorot(rng, d, v)
    t["decoder.out_bias"] = np.zeros(v)

    t["length_head.weight"] = _glorot(rng, d, config.n_max)
    t["length_head.bias"] = np.zeros(config.n_max)

    return ModelParams(config, {name: Tensor(arr) for name, arr in t.items()})


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, meta=None):
    header = {"model": asdict(params.config), "meta": meta or {}}
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for name in sorted(params.tensors):
            arr = params.tensors[name].data
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())
    return Path(path)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint at byte {self.pos}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def done(self):
        return self.pos == len(self.blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelParams, meta dict)."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} "
            f"(expected {FORMAT_VERSION})"
        )
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    config = ModelConfig(**header["model"])
    tensors = {}
    while not r.done():
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(8 * count), dtype="<f8")
        tensors[name] = Tensor(values.reshape(dims).copy())
    return ModelParams(config, tensors), header["meta"]
