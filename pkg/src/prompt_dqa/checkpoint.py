"""Binary checkpoint holding the backbone, prompt bank and model layout.

Layout (little-endian)::

    b"PDQA"  u32 version
    u32 header_len, header JSON (model config, branch flags, antonym prompts)
    u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 rank, rank x u32 dims, float64 payload
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .encoder import BackboneParams, ModelConfig
from .prompting import HandcraftedPrompts, PromptBank
from .scoring import QualityModel
from .tensor import Tensor

MAGIC = b"PDQA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: QualityModel) -> bytes:
    header = {
        "model_config": model.config.to_dict(),
        "textual_enabled": model.bank.textual_enabled,
        "visual_enabled": model.bank.visual_enabled,
        "use_global": model.use_global,
        "positive_prompt": model.prompts.positive,
        "negative_prompt": model.prompts.negative,
    }
    table = [(f"backbone.{k}", model.backbone.arrays[k]) for k in model.backbone.names()]
    table += [(f"bank.{k}", v) for k, v in sorted(model.bank.state_arrays().items())]
    buf = io.BytesIO()
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
    buf.write(struct.pack("<I", len(table)))
    for name, arr in table:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> QualityModel:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version, head_len = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(bytes(view[pos:pos + head_len]).decode("utf-8"))
    pos += head_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, pos)
        name = bytes(view[pos + 2:pos + 2 + n]).decode("utf-8")
        pos += 2 + n
        (rank,) = struct.unpack_from("<B", view, pos)
        dims = struct.unpack_from(f"<{rank}I", view, pos + 1)
        pos += 1 + 4 * rank
        size = int(np.prod(dims)) * 8
        arrays[name] = np.frombuffer(view[pos:pos + size], dtype="<f8").reshape(dims).astype(np.float64)
        pos += size
    if pos != len(data):
        raise CheckpointError("trailing bytes after tensor table")
    config = ModelConfig(**header["model_config"])
    backbone = BackboneParams(config, {k[9:]: v for k, v in arrays.items() if k.startswith("backbone.")})
    bank_tensors = {k[5:]: Tensor(v, requires_grad=True, name=k[5:])
                    for k, v in arrays.items() if k.startswith("bank.")}
    bank = PromptBank(config, bank_tensors, header["textual_enabled"], header["visual_enabled"])
    prompts = HandcraftedPrompts(header["positive_prompt"], header["negative_prompt"])
    return QualityModel(backbone, bank, prompts, header["use_global"])


def save_checkpoint(path, model: QualityModel) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> QualityModel:
    return model_from_bytes(Path(path).read_bytes())
