"""Binary checkpoint of an encoder/teacher pair.

Layout (little-endian)::

    b"L2C1" | u32 version | u32 config_len | config JSON | 32-byte sha256(config)
    | u32 n_tensors | per tensor: u32 name_len, name, u32 ndim, u64 dims[ndim], f64 data
    | 32-byte sha256 of every preceding byte

Tensors are written in sorted name order, so equal models give equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import LoraSet, ModelPair, TransformerModel, teacher_view
from .tensor import Tensor

MAGIC = b"L2C1"
VERSION = 1
TEACHER_EMBED = "teacher.embed"


class CheckpointFormatError(ValueError):
    pass


class CheckpointIntegrityError(ValueError):
    pass


def _named_tensors(pair: ModelPair) -> dict[str, np.ndarray]:
    enc = pair.encoder
    out = {name: t.data for name, t in enc.weights.items()}
    out[TEACHER_EMBED] = pair.teacher.weights["embed"].data
    for (layer, target), (a, b) in enc.lora.pairs.items():
        out[f"lora.{layer}.{target}.A"] = a.data
        out[f"lora.{layer}.{target}.B"] = b.data
    return out


def expected_dims(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, r = config.d_model, config.d_ff, config.lora_rank
    v = config.total_vocab
    dims = {"embed": (v, d), "lm_head": (v, d), "final_norm": (d,),
            TEACHER_EMBED: (config.base_vocab, d)}
    for i in range(config.n_layers):
        pre = f"layers.{i}."
        dims.update({pre + "attn_norm": (d,), pre + "mlp_norm": (d,), pre + "wq": (d, d),
                     pre + "wk": (d, d), pre + "wv": (d, d), pre + "wo": (d, d),
                     pre + "w_gate": (f, d), pre + "w_up": (f, d), pre + "w_down": (d, f)})
        for target in ("q", "v", "o", "up", "down", "gate"):
            d_in, d_out = {"up": (d, f), "gate": (d, f), "down": (f, d)}.get(target, (d, d))
            dims[f"lora.{i}.{target}.A"] = (r, d_in)
            dims[f"lora.{i}.{target}.B"] = (d_out, r)
    return dims


def save_checkpoint(pair: ModelPair, path: str | Path) -> None:
    config_text = json.dumps(pair.encoder.config.model_dump(), sort_keys=True).encode()
    tensors = _named_tensors(pair)
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(config_text)) + config_text
    buf += hashlib.sha256(config_text).digest()
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        key = name.encode()
        buf += struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes()
    buf += hashlib.sha256(buf).digest()
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> ModelPair:
    """Read a checkpoint; with ``expected``, the stored config must match it exactly."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    if len(blob) < 12 + 32 + 4 + 32:
        raise CheckpointIntegrityError(f"{path}: truncated")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    try:
        config, tensors = _parse(blob[:-32])
    except (struct.error, ValueError) as exc:
        raise CheckpointIntegrityError(f"{path}: {exc}") from exc
    if expected is not None and expected != config:
        raise CheckpointIntegrityError(f"{path}: stored model config differs from the requested one")
    want = expected_dims(config)
    if set(want) != set(tensors):
        missing, extra = sorted(set(want) - set(tensors)), sorted(set(tensors) - set(want))
        raise CheckpointIntegrityError(f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, dims in want.items():
        if tensors[name].shape != dims:
            raise CheckpointIntegrityError(f"{path}: {name} has dims {tensors[name].shape}, expected {dims}")
    return _assemble(config, tensors)


def _parse(blob: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    (clen,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    config_text = blob[pos:pos + clen]
    pos += clen
    if hashlib.sha256(config_text).digest() != blob[pos:pos + 32]:
        raise ValueError("config hash mismatch")
    pos += 32
    config = ModelConfig.model_validate(json.loads(config_text))
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4:pos + 4 + n].decode()
        pos += 4 + n
        (ndim,) = struct.unpack_from("<I", blob, pos)
        dims = struct.unpack_from(f"<{ndim}Q", blob, pos + 4)
        pos += 4 + 8 * ndim
        size = int(np.prod(dims)) if ndim else 1
        if pos + 8 * size > len(blob):
            raise ValueError(f"tensor {name} runs past end of file")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
        pos += 8 * size
    if pos != len(blob):
        raise ValueError("trailing bytes after tensor table")
    return config, tensors


def _assemble(config: ModelConfig, tensors: dict[str, np.ndarray]) -> ModelPair:
    weights = {}
    for name, arr in tensors.items():
        if name.startswith("lora.") or name == TEACHER_EMBED:
            continue
        weights[name] = Tensor(arr, requires_grad=(name == "embed"), name=name)
    pairs = {}
    for i in range(config.n_layers):
        for target in ("q", "v", "o", "up", "down", "gate"):
            a = Tensor(tensors[f"lora.{i}.{target}.A"], requires_grad=True, name=f"lora.{i}.{target}.A")
            b = Tensor(tensors[f"lora.{i}.{target}.B"], requires_grad=True, name=f"lora.{i}.{target}.B")
            pairs[(i, target)] = (a, b)
    encoder = TransformerModel(config, weights, LoraSet(config.lora_rank, config.lora_alpha, pairs),
                               extended=True)
    teacher = teacher_view(encoder, Tensor(tensors[TEACHER_EMBED], name="embed"))
    return ModelPair(encoder, teacher)
