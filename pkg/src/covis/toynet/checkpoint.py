"""Binary checkpoint format.

Little-endian layout:

    magic      4 bytes  "A0RC"
    version    u8       1
    config     7 x u32  image_size, patch_size, dim, enc_layers,
                        dec_layers, heads, classes
    mlp_ratio  f64
    n_blocks   u32
    blocks (sorted by name):
        name_len u16, name bytes (utf-8), rank u8, extents u32 each,
        payload f32
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..datapipe.formats import FormatError
from .autograd import Tensor
from .model import ModelConfig, TwoViewModel, init_parameters

MAGIC = b"A0RC"
VERSION = 1


def save_checkpoint(model: TwoViewModel, path) -> Path:
    cfg = model.config
    parts = [
        MAGIC,
        struct.pack(
            "<B7Id",
            VERSION,
            cfg.image_size,
            cfg.patch_size,
            cfg.dim,
            cfg.enc_layers,
            cfg.dec_layers,
            cfg.heads,
            cfg.classes,
            cfg.mlp_ratio,
        ),
        struct.pack("<I", len(model.params)),
    ]
    for name in sorted(model.params):
        data = model.params[name].data
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.astype("<f4").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path) -> TwoViewModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    header = struct.unpack_from("<B7Id", data, 4)
    if header[0] != VERSION:
        raise FormatError(f"unsupported checkpoint version {header[0]}")
    cfg = ModelConfig(
        image_size=header[1],
        patch_size=header[2],
        dim=header[3],
        enc_layers=header[4],
        dec_layers=header[5],
        heads=header[6],
        classes=header[7],
        mlp_ratio=header[8],
    )
    pos = 4 + struct.calcsize("<B7Id")
    (n_blocks,) = struct.unpack_from("<I", data, pos)
    pos += 4

    params: dict[str, Tensor] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        payload = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        params[name] = Tensor(payload.reshape(shape).astype(np.float64), requires_grad=True)
    if pos != len(data):
        raise FormatError("trailing bytes after parameter blocks")

    expected = set(init_parameters(cfg, seed=0))
    if set(params) != expected:
        missing = expected - set(params)
        extra = set(params) - expected
        raise FormatError(f"parameter names mismatch: missing={missing} extra={extra}")
    return TwoViewModel(cfg, params=params)
