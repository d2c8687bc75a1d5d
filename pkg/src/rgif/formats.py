"""Readers and writers for PGM/PPM (netpbm), PFM and PNG.

Readers return ``(array, bitdepth)`` where ``array`` is ``(H, W, C)``
float64 holding the raw sample values and ``bitdepth`` is 8, 16 or
``None`` for float data.
"""

from __future__ import annotations

import os
import re

import numpy as np
import png

from .errors import DecodeError, FormatError

NETPBM_EXT = {".pgm": 1, ".ppm": 3, ".pnm": None}
FLOAT_EXT = {".pfm"}
PNG_EXT = {".png"}


def file_kind(path: str | os.PathLike) -> str:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext in NETPBM_EXT:
        return "netpbm"
    if ext in FLOAT_EXT:
        return "pfm"
    if ext in PNG_EXT:
        return "png"
    raise FormatError(f"unsupported image format {ext!r}")


def sniff_kind(head: bytes) -> str | None:
    if head[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    if head[:2] in (b"PF", b"Pf"):
        return "pfm"
    if head[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return "netpbm"
    return None


# -- netpbm -------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int, pos: int = 0):
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise DecodeError("truncated netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def read_netpbm(buf: bytes):
    (magic, w, h, maxval), pos = _header_tokens(buf, 4)
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise DecodeError("malformed netpbm header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise DecodeError("invalid netpbm dimensions or maxval")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P5", b"P6"):
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = buf[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise DecodeError("truncated netpbm raster")
        data = np.frombuffer(raw, dtype=dtype)
    else:
        try:
            data = np.array(buf[pos:].split()[:count], dtype=np.int64)
        except ValueError:
            raise DecodeError("non-numeric sample in ASCII netpbm") from None
        if data.size < count:
            raise DecodeError("truncated ASCII netpbm raster")
    bitdepth = 16 if maxval > 255 else 8
    return data.astype(np.float64).reshape(h, w, channels), bitdepth


def write_netpbm(path, data: np.ndarray, bitdepth: int, ascii: bool = False):
    h, w, c = data.shape
    ext = os.path.splitext(os.fspath(path))[1].lower()
    expected = NETPBM_EXT.get(ext)
    if expected is None:
        expected = c
    if c != expected or c not in (1, 3):
        raise FormatError(f"cannot store {c}-channel image as {ext}")
    maxval = 255 if bitdepth == 8 else 65535
    ints = _quantize(data, maxval)
    magic = {(1, False): b"P5", (3, False): b"P6", (1, True): b"P2", (3, True): b"P3"}[c, ascii]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    if ascii:
        body = "\n".join(" ".join(map(str, row)) for row in ints.reshape(h, -1)).encode() + b"\n"
    else:
        body = ints.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def _quantize(data: np.ndarray, maxval: int) -> np.ndarray:
    return np.clip(np.rint(data), 0, maxval).astype(np.int64)


# -- PFM ----------------------------------------------------------------------

def read_pfm(buf: bytes):
    (magic, w, h, scale), pos = _header_tokens(buf, 4)
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"not a PFM file (magic {magic!r})")
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError:
        raise DecodeError("malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise DecodeError("invalid PFM header")
    pos += 1
    channels = 3 if magic == b"PF" else 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    nbytes = w * h * channels * 4
    raw = buf[pos:pos + nbytes]
    if len(raw) < nbytes:
        raise DecodeError("truncated PFM raster")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels)
    # rows are stored bottom to top
    return data[::-1].astype(np.float64), None


def write_pfm(path, data: np.ndarray):
    h, w, c = data.shape
    if c not in (1, 3):
        raise FormatError(f"PFM stores 1 or 3 channels, got {c}")
    magic = b"PF" if c == 3 else b"Pf"
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n-1.0\n" % (magic, w, h) + body)


# -- PNG ----------------------------------------------------------------------

def read_png(buf: bytes):
    try:
        w, h, rows, info = png.Reader(bytes=buf).asDirect()
        data = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except png.FormatError as exc:
        raise DecodeError(f"corrupt PNG: {exc}") from None
    except Exception as exc:  # zlib errors, short reads
        raise DecodeError(f"corrupt PNG: {exc}") from None
    planes = info["planes"]
    data = data.reshape(h, w, planes)
    if info.get("alpha"):
        data = data[:, :, :-1]
    return data, 16 if info["bitdepth"] > 8 else 8


def write_png(path, data: np.ndarray, bitdepth: int):
    h, w, c = data.shape
    if c not in (1, 3):
        raise FormatError(f"PNG writer supports gray or RGB, got {c} channels")
    maxval = 255 if bitdepth == 8 else 65535
    ints = _quantize(data, maxval)
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, ints.reshape(h, w * c).tolist())


def read_any(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    kind = sniff_kind(buf[:8])
    if kind is None:
        kind = file_kind(path)
        raise DecodeError(f"{os.fspath(path)}: header does not match a {kind} file")
    return {"netpbm": read_netpbm, "pfm": read_pfm, "png": read_png}[kind](buf)
