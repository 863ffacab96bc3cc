"""File formats: PGM masks, georeferenced label rasters, unary fields, JSON.

Every writer goes through :func:`atomic_write_bytes` (temp file in the target
directory, then ``os.replace``) so a failed run never leaves half-written
outputs behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    """Stable JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


# ---------------------------------------------------------------------------
# PGM (binary P5, 8-bit)
# ---------------------------------------------------------------------------

def encode_pgm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.min(initial=0) < 0 or img.max(initial=0) > 255:
        raise ValueError("PGM pixel values must lie in [0, 255]")
    rows, cols = img.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(image))


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """Binary mask as PGM: 0 = non-building, 255 = building."""
    write_pgm(path, (np.asarray(mask) != 0).astype(np.uint8) * 255)


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # a single whitespace byte ends the header


def decode_pgm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"unsupported PGM magic {magic!r} (only P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    body = data[offset:offset + n]
    if len(body) != n:
        raise ValueError("truncated PGM body")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.int64)


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def read_image(path) -> np.ndarray:
    """Read a single-channel PGM or PNG raster as an int array."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.int64)
    return read_pgm(path)


def read_mask(path) -> np.ndarray:
    """Read a mask raster; any nonzero pixel is building (1)."""
    return (read_image(path) != 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Georeferenced rasters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridFrame:
    """North-up raster frame: cell (row, col) spans
    E in [origin_e + col*cell, origin_e + (col+1)*cell) and
    N in (origin_n - (row+1)*cell, origin_n - row*cell]."""

    origin_e: float
    origin_n: float
    cell_size: float
    rows: int
    cols: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.rows < 0 or self.cols < 0:
            raise ValueError("raster dimensions must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def covering(cls, xy: np.ndarray, cell_size: float, pad: int = 0) -> "GridFrame":
        """Smallest frame (plus ``pad`` cells each side) containing all points."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        if len(xy) == 0:
            return cls(0.0, 0.0, cell_size, 0, 0)
        e0 = np.floor(xy[:, 0].min() / cell_size) * cell_size - pad * cell_size
        n0 = (np.floor(xy[:, 1].max() / cell_size) + 1) * cell_size + pad * cell_size
        cols = int(np.floor((xy[:, 0].max() - e0) / cell_size)) + 1 + pad
        rows = int(np.floor((n0 - xy[:, 1].min()) / cell_size)) + 1 + pad
        return cls(float(e0), float(n0), float(cell_size), rows, cols)

    def cell_index(self, xy: np.ndarray):
        """Return (rows, cols, inside) for an (n, 2) array of E/N coordinates."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        c = np.floor((xy[:, 0] - self.origin_e) / self.cell_size).astype(np.int64)
        r = np.floor((self.origin_n - xy[:, 1]) / self.cell_size).astype(np.int64)
        inside = (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)
        return r, c, inside

    def cell_centers(self):
        """Return (E, N) arrays of shape (rows, cols) holding cell centers."""
        cols = self.origin_e + (np.arange(self.cols) + 0.5) * self.cell_size
        rows = self.origin_n - (np.arange(self.rows) + 0.5) * self.cell_size
        return np.meshgrid(cols, rows)

    def shifted(self, d_e: float, d_n: float) -> "GridFrame":
        return GridFrame(self.origin_e + d_e, self.origin_n + d_n, self.cell_size, self.rows, self.cols)


def format_georef(frame: GridFrame) -> str:
    return (
        f"origin_easting = {frame.origin_e!r}\n"
        f"origin_northing = {frame.origin_n!r}\n"
        f"cell_size = {frame.cell_size!r}\n"
        f"rows = {frame.rows}\n"
        f"cols = {frame.cols}\n"
    )


def parse_georef(text: str) -> GridFrame:
    """Parse a georeference sidecar.

    Accepts either ``key = value`` lines (origin_easting, origin_northing,
    cell_size, rows, cols) or five bare whitespace-separated numbers in that
    order.
    """
    values = {}
    bare = []
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" in ln:
            k, v = (s.strip() for s in ln.split("=", 1))
            values[k.lower()] = v
        else:
            bare.extend(ln.replace(",", " ").split())
    keys = ["origin_easting", "origin_northing", "cell_size", "rows", "cols"]
    if not values and len(bare) == 5:
        values = dict(zip(keys, bare))
    missing = [k for k in keys if k not in values]
    if missing:
        raise ValueError(f"georeference missing {missing}")
    return GridFrame(
        float(values["origin_easting"]),
        float(values["origin_northing"]),
        float(values["cell_size"]),
        int(values["rows"]),
        int(values["cols"]),
    )


def georef_path(raster_path) -> Path:
    p = Path(raster_path)
    return p.with_name(p.name + ".georef")


def read_label_raster(path, georef=None):
    """Read a class raster and its sidecar (default ``<path>.georef``)."""
    image = read_image(path)
    frame = parse_georef(Path(georef or georef_path(path)).read_text())
    if image.shape != frame.shape:
        raise ValueError(f"raster is {image.shape} but georeference says {frame.shape}")
    return image, frame


# ---------------------------------------------------------------------------
# Unary fields
# ---------------------------------------------------------------------------

def encode_unary(unary: np.ndarray) -> bytes:
    """Header line ``W H L`` then little-endian float32 values, labels fastest,
    pixels in row-major order."""
    u = np.asarray(unary)
    if u.ndim != 3:
        raise ValueError("unary field must have shape (rows, cols, labels)")
    h, w, nl = u.shape
    return f"{w} {h} {nl}\n".encode("ascii") + np.ascontiguousarray(u, dtype="<f4").tobytes()


def decode_unary(data: bytes) -> np.ndarray:
    nl_pos = data.index(b"\n")
    w, h, nl = (int(t) for t in data[:nl_pos].split())
    body = data[nl_pos + 1:]
    if len(body) != w * h * nl * 4:
        raise ValueError("unary file size does not match its header")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, nl).astype(np.float64)


def write_unary(path, unary: np.ndarray) -> None:
    atomic_write_bytes(path, encode_unary(unary))


def read_unary(path) -> np.ndarray:
    return decode_unary(Path(path).read_bytes())


def unary_from_probabilities(probs: list[np.ndarray], eps: float = 1e-6) -> np.ndarray:
    """Negative log-probability unaries from 8-bit probability images.

    One image is read as P(building) for a two-label problem (label 0 =
    non-building); L images give one probability map per label.
    """
    ps = [np.asarray(p, dtype=np.float64) / 255.0 for p in probs]
    if len(ps) == 1:
        ps = [1.0 - ps[0], ps[0]]
    stack = np.clip(np.stack(ps, axis=-1), eps, 1.0)
    stack = stack / stack.sum(axis=-1, keepdims=True)
    return -np.log(stack)
