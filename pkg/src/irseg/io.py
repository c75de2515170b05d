"""File IO: binary PGM frames, grayscale PNG frames, indexed-PNG label maps.

Frames are normalized at load time: 8-bit samples are divided by 255 and
16-bit samples by 65535, so downstream clustering sees the same [0, 1]
scale regardless of source bit depth. Writers go through a temp-file +
rename so concurrent workers never expose partial files.
"""

from __future__ import annotations

import io as _io
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    CorruptDataError,
    DimensionMismatchError,
    TooFewFramesError,
    UnsupportedFormatError,
)
from .image import Frame, LabelMap

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def atomic_write_bytes(path, data):
    """Write bytes to ``path`` via a temp file and atomic rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def natural_key(name):
    """Sort key that orders embedded integers numerically (frame_2 < frame_10)."""
    parts = re.split(r"(\d+)", str(name))
    return tuple(int(p) if p.isdigit() else p for p in parts)


def _parse_pgm(buf, path):
    if buf[:2] != b"P5":
        raise UnsupportedFormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    pos = 2
    vals = []
    while len(vals) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise CorruptDataError(f"{path}: truncated PGM header")
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tok = buf[start:pos]
        if not tok.isdigit():
            raise CorruptDataError(f"{path}: bad PGM header token {tok!r}")
        vals.append(int(tok))
    width, height, maxval = vals
    if not 0 < maxval < 65536:
        raise UnsupportedFormatError(f"{path}: PGM maxval {maxval} out of range")
    pos += 1  # single whitespace byte separates header from payload
    payload = buf[pos:]
    itemsize = 1 if maxval < 256 else 2
    expected = width * height * itemsize
    if len(payload) < expected:
        raise CorruptDataError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
    raw = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    scale = 255.0 if itemsize == 1 else 65535.0
    return raw.astype(float) / scale


def _load_png_gray(path):
    img = Image.open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=float) / 255.0
    if img.mode in ("I;16", "I;16B", "I"):
        return np.asarray(img, dtype=float) / 65535.0
    raise UnsupportedFormatError(f"{path}: expected single-channel grayscale PNG, got mode {img.mode}")


def load_frame(path):
    """Load a binary PGM (P5) or grayscale PNG as a normalized Frame."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    buf = path.read_bytes()
    if buf[:2] == b"P5":
        return Frame(_parse_pgm(buf, path))
    if buf[:8] == _PNG_MAGIC:
        return Frame(_load_png_gray(path))
    raise UnsupportedFormatError(f"{path}: neither binary PGM nor PNG")


def load_sequence(directory, pattern="*.pgm"):
    """Load all frames matching ``pattern`` under ``directory``, in natural name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    paths = sorted(directory.glob(pattern), key=lambda p: natural_key(p.name))
    if len(paths) < 2:
        raise TooFewFramesError(
            f"{directory}: {len(paths)} file(s) match {pattern!r}, need at least 2 for flow pairs"
        )
    frames = [load_frame(p) for p in paths]
    first = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != first:
            raise DimensionMismatchError(f"{p.name} is {f.shape}, first frame is {first}")
    return frames


def save_frame_pgm(frame, path, bits=16):
    """Write a frame as binary PGM at 8 or 16 bits per sample."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    quant = np.round(frame.data * maxval).astype(np.uint16)
    header = f"P5\n{frame.width} {frame.height}\n{maxval}\n".encode("ascii")
    if bits == 8:
        payload = quant.astype(np.uint8).tobytes()
    else:
        payload = quant.astype(">u2").tobytes()
    atomic_write_bytes(path, header + payload)


def _grey_palette(k):
    # Spread the k indices over the gray range so saved maps are viewable;
    # the stored pixel values stay the raw label indices.
    pal = []
    for i in range(256):
        g = round(255 * i / max(k - 1, 1)) if i < k else 0
        pal.extend([g, g, g])
    return pal


def save_labelmap(labelmap, path):
    """Write a LabelMap as an 8-bit indexed PNG whose pixel values are the labels."""
    if labelmap.k > 256:
        raise ValueError(f"cannot store k={labelmap.k} classes in an 8-bit indexed PNG")
    img = Image.fromarray(labelmap.labels.astype(np.uint8), mode="P")
    img.putpalette(_grey_palette(labelmap.k))
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_labelmap(path, k=None):
    """Load an indexed or grayscale PNG as a LabelMap.

    ``k`` defaults to max(label)+1; pass it explicitly when some classes
    may be absent from the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    img = Image.open(path)
    if img.mode not in ("P", "L"):
        raise UnsupportedFormatError(f"{path}: expected indexed or grayscale PNG, got mode {img.mode}")
    labels = np.asarray(img, dtype=np.int64)
    if k is None:
        k = int(labels.max()) + 1 if labels.size else 1
    return LabelMap(labels, k)


def save_rgb_png(rgb, path):
    """Write an (h, w, 3) uint8 array as PNG."""
    img = Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB")
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_matrix_csv(arr, path, fmt="%.9g"):
    """Write a 2-D array as CSV, one raster row per line."""
    arr = np.asarray(arr)
    lines = [",".join(fmt % v for v in row) for row in arr]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))
