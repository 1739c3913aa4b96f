"""On-disk formats: CUB3 label maps, PFM depth rasters, PGM/PPM images.

CUB3 layout (all integers little-endian):

    magic   4 bytes  "CUB3"
    version u8       1
    width   u16
    height  u16
    scheme  u8       ClassScheme value
    runs    (u8 label, u32 run) ... covering exactly width*height pixels,
            row-major

PFM depth follows the standard: ``Pf`` header, ``width height`` line,
scale line (we write -1.0 = little-endian float32), rows stored
bottom-to-top. Invalid depth is written as 0.0 or a non-finite value.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..covisibility import ClassScheme, CovisMap

MAGIC = b"CUB3"
VERSION = 1

# overlay legend: covisible green, occluded orange, outside-FOV grey,
# ignore black
OVERLAY_COLORS = {
    0: (46, 204, 64),
    1: (255, 133, 27),
    2: (128, 128, 128),
    255: (0, 0, 0),
}


class FormatError(ValueError):
    """Malformed or truncated serialized data."""


def encode_covis(covis_map: CovisMap) -> bytes:
    """Run-length encode a label map. Bit-deterministic: equal maps
    produce equal byte streams."""
    flat = covis_map.labels.ravel()
    header = MAGIC + struct.pack(
        "<BHHB", VERSION, covis_map.width, covis_map.height, int(covis_map.scheme)
    )
    if flat.size == 0:
        return header
    # run boundaries via change points
    change = np.nonzero(np.diff(flat))[0]
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change + 1, [flat.size]))
    parts = [header]
    for s, e in zip(starts, ends):
        parts.append(struct.pack("<BI", int(flat[s]), int(e - s)))
    return b"".join(parts)


def decode_covis(data: bytes, direction: tuple[str, str] = ("src", "tgt")) -> CovisMap:
    """Inverse of encode_covis. Raises FormatError on bad magic, version,
    truncation, or run totals."""
    if len(data) < 10:
        raise FormatError("truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version, width, height, scheme = struct.unpack("<BHHB", data[4:10])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    try:
        scheme = ClassScheme(scheme)
    except ValueError as e:
        raise FormatError(f"unknown class scheme {scheme}") from e

    total = width * height
    labels = np.empty(total, dtype=np.uint8)
    pos = 10
    filled = 0
    while filled < total:
        if pos + 5 > len(data):
            raise FormatError("truncated run data")
        label, run = struct.unpack("<BI", data[pos : pos + 5])
        pos += 5
        if filled + run > total:
            raise FormatError("runs exceed pixel count")
        labels[filled : filled + run] = label
        filled += run
    if pos != len(data):
        raise FormatError("trailing bytes after runs")
    return CovisMap(labels.reshape(height, width), direction=direction, scheme=scheme)


def write_covis(path, covis_map: CovisMap) -> None:
    Path(path).write_bytes(encode_covis(covis_map))


def read_covis(path, direction: tuple[str, str] = ("src", "tgt")) -> CovisMap:
    return decode_covis(Path(path).read_bytes(), direction=direction)


def labels_to_pgm(covis_map: CovisMap) -> bytes:
    """Binary PGM (P5, maxval 255) with raw label values."""
    header = f"P5\n{covis_map.width} {covis_map.height}\n255\n".encode("ascii")
    return header + covis_map.labels.tobytes()


def write_pfm(path, values: np.ndarray) -> None:
    """Write a single-channel PFM (little-endian float32, scale -1.0)."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-D array, got {values.shape}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM stores rows bottom-to-top
        f.write(np.flipud(values).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM into an (H, W) float32 array."""
    data = Path(path).read_bytes()

    def next_token(pos):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PFM header")
        return data[start:pos], pos

    tok, pos = next_token(0)
    if tok != b"Pf":
        raise FormatError(f"not a single-channel PFM: header {tok!r}")
    wtok, pos = next_token(pos)
    htok, pos = next_token(pos)
    stok, pos = next_token(pos)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as e:
        raise FormatError("malformed PFM header") from e
    pos += 1  # single whitespace byte after the scale line
    expected = w * h * 4
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise FormatError(f"PFM payload has {len(raw)} bytes, expected {expected}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(values).astype(np.float32)


def overlay_ppm(covis_map: CovisMap, image: np.ndarray | None = None) -> bytes:
    """Binary PPM (P6) visualization of a label map.

    With an (H, W, 3) uint8 image, the legend colors are alpha-blended
    at 0.5 over it; otherwise the colors are emitted directly.
    """
    h, w = covis_map.height, covis_map.width
    rgb = np.zeros((h, w, 3), dtype=np.float64)
    for label, color in OVERLAY_COLORS.items():
        rgb[covis_map.labels == label] = color
    if image is not None:
        image = np.asarray(image)
        if image.shape != (h, w, 3):
            raise ValueError(f"image shape {image.shape} does not match map {h}x{w}")
        rgb = 0.5 * rgb + 0.5 * image.astype(np.float64)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.clip(np.rint(rgb), 0, 255).astype(np.uint8).tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()

    def next_token(pos):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        return data[start:pos], pos

    tok, pos = next_token(0)
    if tok != b"P6":
        raise FormatError("not a binary PPM")
    wtok, pos = next_token(pos)
    htok, pos = next_token(pos)
    mtok, pos = next_token(pos)
    w, h, maxval = int(wtok), int(htok), int(mtok)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos : pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
