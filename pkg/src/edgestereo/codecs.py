"""PFM and 16-bit PNG disparity codecs, plus 8-bit image helpers."""
from __future__ import annotations

import io
import os
import re

import numpy as np
from PIL import Image


class FormatError(ValueError):
    pass


# -- PFM --------------------------------------------------------------------

def _header_tokens(buf: io.BytesIO, count: int) -> list[bytes]:
    tokens: list[bytes] = []
    while len(tokens) < count:
        line = buf.readline()
        if not line:
            raise FormatError("truncated PFM header")
        tokens.extend(line.split())
    if len(tokens) != count:
        raise FormatError("malformed PFM header")
    return tokens


def pfm_read(source) -> np.ndarray:
    """Read a grayscale ("Pf") PFM from a path or bytes into an [H, W] float32 array."""
    data = source if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
    buf = io.BytesIO(data)
    magic = buf.readline().strip()
    if magic == b"PF":
        raise FormatError("colour PFM (PF) is not supported, expected Pf")
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic[:8]!r}")
    w_tok, h_tok, s_tok = _header_tokens(buf, 3)
    if not (re.fullmatch(rb"\d+", w_tok) and re.fullmatch(rb"\d+", h_tok)):
        raise FormatError("PFM dimensions must be non-negative integers")
    width, height = int(w_tok), int(h_tok)
    try:
        scale = float(s_tok)
    except ValueError as exc:
        raise FormatError(f"bad PFM scale {s_tok!r}") from exc
    if scale == 0:
        raise FormatError("PFM scale must be non-zero")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    payload = buf.read()
    need = width * height * 4
    if len(payload) < need:
        raise FormatError(f"truncated PFM payload: {len(payload)} of {need} bytes")
    rows = np.frombuffer(payload[:need], dtype=dtype).reshape(height, width)
    return np.ascontiguousarray(rows[::-1]).astype(np.float32)


def pfm_encode(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise FormatError(f"PFM stores 2-D maps, got shape {arr.shape}")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()


def pfm_write(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(pfm_encode(arr))


# -- 16-bit PNG disparity ---------------------------------------------------

PNG16_SCALE = 256.0
PNG16_MAX = 255.0


def png16_disparity_encode(d, valid=None) -> np.ndarray:
    """Store ``round(256 * d)`` as uint16; 0 marks an invalid pixel."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 3 and d.shape[0] == 1:
        d = d[0]
    if not np.all(np.isfinite(d)) or d.min(initial=0) < 0 or d.max(initial=0) > PNG16_MAX:
        raise ValueError(f"disparities must lie in [0, {PNG16_MAX:g}]")
    out = np.rint(d * PNG16_SCALE).astype(np.uint16)
    if valid is not None:
        out[~np.asarray(valid, bool).reshape(out.shape)] = 0
    return out


def png16_disparity_decode(stored) -> tuple[np.ndarray, np.ndarray]:
    stored = np.asarray(stored)
    if stored.dtype != np.uint16:
        raise FormatError(f"expected uint16 data, got {stored.dtype}")
    return (stored.astype(np.float32) / PNG16_SCALE), stored > 0


def png16_write(path, d, valid=None) -> None:
    Image.fromarray(png16_disparity_encode(d, valid)).save(path, format="PNG")


def png16_read(path) -> tuple[np.ndarray, np.ndarray]:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(f"{os.fspath(path)} is not a 16-bit grayscale PNG (mode {im.mode})")
        arr = np.array(im)
    return png16_disparity_decode(arr.astype(np.uint16))


# -- 8-bit images -----------------------------------------------------------

def to_uint8(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def write_rgb(path, chw) -> None:
    """Save a [3, H, W] image in [0, 1] as 8-bit PNG."""
    Image.fromarray(to_uint8(np.moveaxis(np.asarray(chw), 0, -1))).save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))


def write_gray(path, hw) -> None:
    """Save an [H, W] (or [1, H, W]) map in [0, 1] as 8-bit grayscale PNG."""
    arr = np.asarray(hw)
    if arr.ndim == 3:
        arr = arr[0]
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("L"), dtype=np.float32) / 255.0
