"""Image container, file I/O, normalization and small image operations."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from . import formats
from .errors import ContractError, FormatError, ParameterError


@dataclass
class Image:
    """An ``H x W x C`` grid of float64 samples.

    ``value_range`` is the ``(lo, hi)`` sample range before any
    normalization; ``bitdepth`` records the integer depth of the source
    file (``None`` for float data or synthetic images).
    """

    data: np.ndarray
    value_range: tuple[float, float] | None = None
    bitdepth: int | None = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or 0 in data.shape:
            raise ContractError(f"image data must be (H, W[, C]) and non-empty, got {data.shape}")
        self.data = data
        if self.value_range is None:
            self.value_range = (float(data.min()), float(data.max()))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def channel(self, k: int) -> np.ndarray:
        return self.data[:, :, k]

    def flat(self) -> np.ndarray:
        """Samples in row-major, channel-interleaved order."""
        return self.data.reshape(-1)

    @classmethod
    def from_channels(cls, planes, **kw) -> "Image":
        return cls(np.stack([np.asarray(p, dtype=np.float64) for p in planes], axis=2), **kw)


def as_image(x) -> Image:
    return x if isinstance(x, Image) else Image(x)


def load_image(path: str | os.PathLike) -> Image:
    formats.file_kind(path)
    data, bitdepth = formats.read_any(path)
    if not np.all(np.isfinite(data)):
        raise formats.DecodeError(f"{os.fspath(path)}: non-finite samples")
    return Image(data, bitdepth=bitdepth)


def save_image(img: Image, path: str | os.PathLike, bitdepth: int | None = None) -> None:
    """Write ``img``; the format follows the file extension.

    Integer formats round and clip samples. ``bitdepth`` defaults to the
    image's source depth, else 16 when samples exceed 255, else 8.
    """
    img = as_image(img)
    kind = formats.file_kind(path)
    if kind == "pfm":
        formats.write_pfm(path, img.data)
        return
    if bitdepth is None:
        bitdepth = img.bitdepth or (16 if img.data.max() > 255.5 else 8)
    if bitdepth not in (8, 16):
        raise FormatError(f"bit depth must be 8 or 16, got {bitdepth}")
    if kind == "png":
        formats.write_png(path, img.data, bitdepth)
    else:
        formats.write_netpbm(path, img.data, bitdepth)


@dataclass(frozen=True)
class RestoreInfo:
    """Inverse of :func:`normalize`: ``x = lo + y * (hi - lo) / 255``."""

    lo: float
    hi: float

    @property
    def constant(self) -> bool:
        return self.hi == self.lo


def normalize(img: Image) -> tuple[Image, RestoreInfo]:
    """Affinely map all samples onto [0, 255].

    A constant image maps to 127.5 and its value is kept for inversion.
    """
    img = as_image(img)
    lo, hi = float(img.data.min()), float(img.data.max())
    info = RestoreInfo(lo, hi)
    if info.constant:
        out = np.full_like(img.data, 127.5)
    else:
        # divide first: (x - lo) / (hi - lo) <= 1 holds exactly in floating point
        out = (img.data - lo) / (hi - lo) * 255.0
    return Image(out, value_range=img.value_range, bitdepth=img.bitdepth), info


def denormalize(img: Image, info: RestoreInfo) -> Image:
    img = as_image(img)
    if info.constant:
        # filters may drift slightly off 127.5; keep their deviation
        out = img.data - 127.5 + info.lo
    else:
        out = info.lo + img.data / 255.0 * (info.hi - info.lo)
    return Image(out, bitdepth=img.bitdepth)


def for_each_channel(img: Image, f: Callable[[np.ndarray], np.ndarray], *,
                     executor=None) -> Image:
    """Apply a single-channel transform to every channel independently."""
    img = as_image(img)
    planes = [img.channel(k) for k in range(img.channels)]
    results = list(executor.map(f, planes)) if executor is not None else [f(p) for p in planes]
    for p, r in zip(planes, results):
        if np.shape(r) != p.shape:
            raise ContractError(f"channel transform changed shape {p.shape} -> {np.shape(r)}")
    return Image.from_channels(results, bitdepth=img.bitdepth)


def keys_kernel(t, a: float = -0.5):
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _resample_axis(x: np.ndarray, n_out: int, factor: float, axis: int) -> np.ndarray:
    n_in = x.shape[axis]
    # half-pixel centred grid
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    out = None
    for tap in (-1, 0, 1, 2):
        idx = np.clip(base + tap, 0, n_in - 1)
        w = keys_kernel(frac - tap)
        shape = [1] * x.ndim
        shape[axis] = n_out
        term = np.take(x, idx, axis=axis) * w.reshape(shape)
        out = term if out is None else out + term
    return out


def bicubic_resample(img: Image, factor: float) -> Image:
    """Resize by ``factor`` with the Keys (a = -0.5) cubic kernel.

    Output dimensions are ``round(H * factor) x round(W * factor)``;
    borders replicate edge samples.
    """
    img = as_image(img)
    if not factor > 0:
        raise ParameterError(f"resampling factor must be > 0, got {factor}")
    h_out, w_out = round(img.height * factor), round(img.width * factor)
    if h_out < 1 or w_out < 1:
        raise ParameterError(f"factor {factor} gives an empty image")
    out = _resample_axis(img.data, h_out, factor, axis=0)
    out = _resample_axis(out, w_out, factor, axis=1)
    return Image(out, bitdepth=img.bitdepth)


def median3x3(img: Image) -> Image:
    img = as_image(img)
    return Image(ndimage.median_filter(img.data, size=(3, 3, 1), mode="nearest"),
                 bitdepth=img.bitdepth)


def mean_abs(a, b) -> float:
    """Mean absolute difference over all samples."""
    a = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass
class MetricReport:
    mae: float
    mad: float = 0.0
    per_iteration: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not (self.mae >= 0 and self.mad >= 0):
            raise ContractError("mae and mad must be >= 0")
        idx = [k for k, _ in self.per_iteration]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ContractError("per-iteration indices must increase strictly")
