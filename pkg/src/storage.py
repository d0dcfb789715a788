"""
Binary codecs for model files, chain traces and grayscale images.

All multi-byte fields are little-endian; see FORMATS.md for byte layouts.
Every writer goes through `atomic_write`, so a failed run never leaves a
partial file behind.
"""

import logging
import math
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import DataFormatError
from .model import CaeParams
from .sampler import ChainTrace
from .stack import StackedCae

logger = logging.getLogger(__name__)

LAYER_MAGIC = b"CAE1"
STACK_MAGIC = b"CAE2"
TRACE_MAGIC = b"CTRC"
FORMAT_VERSION = 1

_F64 = np.dtype("<f8")
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def atomic_write(path, payload: bytes):
    """Write to a temp file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {len(payload)} bytes to {path}")


def _read(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return path.read_bytes()


class _Reader:
    """Sequential little-endian reader that reports truncation as DataFormatError."""

    def __init__(self, raw: bytes, source):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataFormatError(f"{self.source}: truncated file at byte {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype=_F64).astype(np.float64)

    def magic(self, expected: bytes):
        found = self.take(4)
        if found != expected:
            raise DataFormatError(f"{self.source}: bad magic {found!r}, expected {expected!r}")
        (version,) = self.unpack("<I")
        if version != FORMAT_VERSION:
            raise DataFormatError(f"{self.source}: unsupported format version {version}")

    def finish(self):
        if self.pos != len(self.raw):
            raise DataFormatError(f"{self.source}: {len(self.raw) - self.pos} trailing bytes")


def encode_layer(p: CaeParams) -> bytes:
    k, d = p.w.shape
    return b"".join(
        [
            LAYER_MAGIC,
            struct.pack("<IQQ", FORMAT_VERSION, d, k),
            p.w.astype(_F64).tobytes(order="C"),
            p.b_h.astype(_F64).tobytes(),
            p.b_r.astype(_F64).tobytes(),
        ]
    )


def _decode_layer(reader: _Reader) -> CaeParams:
    reader.magic(LAYER_MAGIC)
    d, k = reader.unpack("<QQ")
    if d * k > (1 << 32):
        raise DataFormatError(f"{reader.source}: layer size {k}x{d} is implausible")
    w = reader.floats(k * d).reshape(k, d)
    b_h = reader.floats(k)
    b_r = reader.floats(d)
    try:
        return CaeParams(w=w, b_h=b_h, b_r=b_r)
    except ValueError as e:
        raise DataFormatError(f"{reader.source}: {e}")


def save_layer(path, p: CaeParams):
    atomic_write(path, encode_layer(p))


def load_layer(path) -> CaeParams:
    reader = _Reader(_read(path), path)
    params = _decode_layer(reader)
    reader.finish()
    return params


def save_stack(path, m: StackedCae):
    payload = STACK_MAGIC + struct.pack("<I", FORMAT_VERSION)
    atomic_write(path, payload + encode_layer(m.layer1) + encode_layer(m.layer2))


def load_stack(path) -> StackedCae:
    reader = _Reader(_read(path), path)
    reader.magic(STACK_MAGIC)
    layer1 = _decode_layer(reader)
    layer2 = _decode_layer(reader)
    reader.finish()
    try:
        return StackedCae(layer1=layer1, layer2=layer2)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}")


def read_magic(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "rb") as f:
        return f.read(4)


def save_trace(path, trace: ChainTrace):
    """
    Write a chain trace as CTRC.

    Header: magic, u32 version, u64 T, d, k, record_every; then per record
    u64 step, f64 recon error, d f64 of x, k f64 of h.
    """
    if trace.config is None:
        raise ValueError("Only traces produced by run_chain can be saved")
    d = trace.xs[0].shape[0]
    k = trace.hs[0].shape[0]
    parts = [
        TRACE_MAGIC,
        struct.pack("<IQQQQ", FORMAT_VERSION, trace.config.steps, d, k, trace.config.record_every),
    ]
    for t, err, x, h in zip(trace.steps, trace.recon_errors, trace.xs, trace.hs):
        parts.append(struct.pack("<Qd", t, err))
        parts.append(np.asarray(x, dtype=_F64).tobytes())
        parts.append(np.asarray(h, dtype=_F64).tobytes())
    atomic_write(path, b"".join(parts))


def load_trace(path) -> ChainTrace:
    reader = _Reader(_read(path), path)
    reader.magic(TRACE_MAGIC)
    steps, d, k, record_every = reader.unpack("<QQQQ")
    if record_every < 1:
        raise DataFormatError(f"{path}: record_every must be >= 1")

    trace = ChainTrace()
    for _ in range(steps // record_every + 1):
        t, err = reader.unpack("<Qd")
        x = reader.floats(d)
        h = reader.floats(k)
        trace.record(t, x, h, err)
    reader.finish()
    return trace


def grid_size(rows: int, cols: int, shape: tuple[int, int], pad: int) -> tuple[int, int]:
    """(height, width) of a rows x cols panel, padded between and around cells."""
    height, width = shape
    return rows * (height + pad) + pad, cols * (width + pad) + pad


def layout(n: int, cols: int) -> tuple[int, int]:
    if n < 1 or cols < 1:
        raise ValueError("Grid layout needs at least one image and one column")
    cols = min(cols, n)
    return math.ceil(n / cols), cols


def render_grid(images, shape: tuple[int, int], rows: int, cols: int, pad: int = 1) -> np.ndarray:
    """
    Tile flattened images row by row into one panel; padding and empty cells are 0.

    Raises:
        DataFormatError: If an image does not match the grid shape
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    height, width = shape
    if images.shape[1] != height * width:
        raise DataFormatError(
            f"Images of size {images.shape[1]} do not share the {height}x{width} geometry"
        )
    if images.shape[0] > rows * cols:
        raise ValueError(f"{images.shape[0]} images do not fit a {rows}x{cols} layout")

    panel = np.zeros(grid_size(rows, cols, shape, pad))
    for i, image in enumerate(images):
        r, c = divmod(i, cols)
        top = pad + r * (height + pad)
        left = pad + c * (width + pad)
        panel[top : top + height, left : left + width] = image.reshape(height, width)
    return panel


def normalize_rows(w) -> np.ndarray:
    """Min-max scale each row into [0, 1]; constant rows become 0."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    low = w.min(axis=1, keepdims=True)
    span = w.max(axis=1, keepdims=True) - low
    return np.divide(w - low, span, out=np.zeros_like(w), where=span > 0)


def encode_pgm(pixels) -> bytes:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {pixels.shape}")
    height, width = pixels.shape
    body = np.round(255.0 * np.clip(pixels, 0.0, 1.0)).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode("ascii") + body.tobytes()


def write_pgm(path, pixels):
    """8-bit binary PGM (P5) with values round(255 * pixel)."""
    atomic_write(path, encode_pgm(pixels))


def read_pgm(path) -> np.ndarray:
    raw = _read(path)
    match = _PGM_HEADER.match(raw)
    if match is None:
        raise DataFormatError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise DataFormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    body = raw[match.end() :]
    if len(body) != width * height:
        raise DataFormatError(f"{path}: expected {width * height} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0
