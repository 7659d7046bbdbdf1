"""Depth-map and mask image codecs.

Depth comes in as 16-bit grayscale PNG or binary PGM (P5, big-endian 16-bit)
and is linearly normalized to [0, 1]. Masks are 8-bit PNG, nonzero = editable.
A compact run-length text form (``rle:W,H:run,run,...``, alternating zero/one
runs starting with zero, row-major) lets drag specs inline their mask.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError

_U16_MAX = 65535


def read_depth(path) -> np.ndarray:
    """Load a depth image into a float64 (H, W) array normalized to [0, 1]."""
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"depth file not found: {p}")
    if p.suffix.lower() == ".pgm":
        return _read_pgm16(p)
    img = Image.open(p)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ConfigurationError(f"depth image must be single-channel grayscale: {p}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / _U16_MAX


def write_depth_png(depth: np.ndarray, path) -> None:
    """Quantize [0,1] depth to 16-bit grayscale PNG."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.min() < 0 or depth.max() > 1:
        raise ConfigurationError("depth values must lie in [0, 1]")
    q = np.round(depth * _U16_MAX).astype(np.uint16)
    Image.fromarray(q).save(path)


def _read_pgm16(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header tokens: magic, width, height, maxval; comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if m is None:
            raise ConfigurationError(f"truncated PGM header: {path}")
        tok = m.group(1)
        pos += m.end()
        if not tok.startswith(b"#"):
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ConfigurationError(f"only binary (P5) PGM is supported: {path}")
    width, height, maxval = (int(t) for t in tokens[1:])
    raster = pos + 1  # exactly one whitespace byte after maxval
    if maxval > 255:
        raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=raster)
    else:
        raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=raster)
    return raw.reshape(height, width).astype(np.float64) / maxval


def write_depth_pgm(depth: np.ndarray, path) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    q = np.round(depth * _U16_MAX).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{_U16_MAX}\n".encode("ascii"))
        fh.write(q.tobytes())


def read_mask(path) -> np.ndarray:
    """Load an 8-bit mask PNG; nonzero pixels are editable. Returns bool (H, W)."""
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"mask file not found: {p}")
    arr = np.asarray(Image.open(p).convert("L"))
    return arr != 0


def write_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask).astype(bool)
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path)


def mask_to_rle(mask: np.ndarray) -> str:
    """Serialize a boolean mask as ``rle:W,H:runs`` (zero run first, row-major)."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    flat = mask.ravel()
    runs = []
    current = False
    count = 0
    for bit in flat:
        if bit == current:
            count += 1
        else:
            runs.append(count)
            current = bit
            count = 1
    runs.append(count)
    return f"rle:{w},{h}:" + ",".join(str(r) for r in runs)


def rle_to_mask(text: str) -> np.ndarray:
    if not text.startswith("rle:"):
        raise ConfigurationError("inline mask must start with 'rle:'")
    try:
        dims, runs = text[4:].split(":")
        w, h = (int(t) for t in dims.split(","))
        counts = [int(t) for t in runs.split(",")] if runs else []
    except ValueError as exc:
        raise ConfigurationError(f"malformed RLE mask: {exc}") from exc
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        flat[pos:pos + count] = value
        pos += count
        value = not value
    if pos != w * h:
        raise ConfigurationError(f"RLE runs cover {pos} pixels, expected {w * h}")
    return flat.reshape(h, w)


def load_mask_ref(ref: str, base_dir=None) -> np.ndarray:
    """Resolve a drag-spec mask reference: inline RLE or a mask-image path."""
    if ref.startswith("rle:"):
        return rle_to_mask(ref)
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return read_mask(path)
