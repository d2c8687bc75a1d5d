"""Application recipes built on :func:`irls_filter` and :func:`rgif_optimize`.

Every pipeline maps its inputs onto [0, 255] first, filters with the
application's preset, and maps the result back to the input range (tone
mapping instead returns a display image on [0, 255]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError
from .image import Image, as_image, bicubic_resample, denormalize, median3x3, normalize
from .kernels import APPLICATIONS, DEPTH_FACTORS, TONEMAP_ALPHAS, FilterParams, preset
from .paramopt import LambdaMap, rgif_optimize
from .solver import IrlsTrace, irls_filter


@dataclass
class PipelineConfig:
    application: str
    params: FilterParams | None = None
    factor: int | None = None
    boost: float = 3.0
    layer_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    compression: float | None = None

    def __post_init__(self):
        if self.application not in APPLICATIONS:
            raise ParameterError(f"unknown application {self.application!r}")
        if self.application == "depth-upsample":
            if self.factor is None:
                self.factor = 8
            if self.factor not in (1,) + DEPTH_FACTORS:
                raise ParameterError(f"depth factor must be one of {DEPTH_FACTORS}, got {self.factor}")
        if not self.boost > 0:
            raise ParameterError(f"boost must be > 0, got {self.boost}")
        if len(self.layer_gains) != 3:
            raise ParameterError("tone mapping takes exactly three layer gains")
        if self.compression is not None and not self.compression > 0:
            raise ParameterError(f"compression must be > 0, got {self.compression}")
        if self.params is None:
            self.params = preset(self.application, self.factor)


@dataclass
class PipelineResult:
    image: Image
    traces: list[IrlsTrace] = field(default_factory=list)
    lambda_map: LambdaMap | None = None

    @property
    def converged(self) -> bool:
        return all(t.converged and t.pcg_converged for t in self.traces)


def _same_size(a: Image, b: Image, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ContractError(f"{what}: {a.shape[:2]} vs {b.shape[:2]}")


def guided_filter(img, guide, p: FilterParams, executor=None) -> tuple[Image, IrlsTrace]:
    """Normalize, filter every channel with fixed lambda, restore the input range."""
    img, guide = as_image(img), as_image(guide)
    _same_size(img, guide, "guidance and target sizes differ")
    target, info = normalize(img)
    g = target if guide is img else normalize(guide)[0]
    out, trace = irls_filter(target, g, p, executor=executor)
    out = denormalize(out, info)
    out.bitdepth = img.bitdepth
    return out, trace


def depth_upsample(lowres, color, factor: int = 8, params: FilterParams | None = None, *,
                   full_output: bool = False):
    """Upsample a depth map under a colour guide with lambda-map adaptation.

    The bicubic upsampling of ``lowres`` is both the data target and the
    starting iterate.
    """
    lowres, color = as_image(lowres), as_image(color)
    p = params or preset("depth-upsample", factor)
    if lowres.channels != 1:
        raise ContractError("depth must be single-channel")
    if (color.height, color.width) != (lowres.height * factor, lowres.width * factor):
        raise ContractError(
            f"guidance {color.shape[:2]} is not {factor}x the depth {lowres.shape[:2]}")
    low, info = normalize(lowres)
    guide = normalize(color)[0]
    init = bicubic_resample(low, factor) if factor != 1 else low
    out, lam, trace = rgif_optimize(init, guide, p, init)
    result = Image(denormalize(out, info).data, bitdepth=lowres.bitdepth)
    if full_output:
        return PipelineResult(result, [trace], lam)
    return result


def flash_noflash(noflash, flash, params: FilterParams | None = None, *, executor=None,
                  full_output: bool = False):
    """Denoise each channel of ``noflash`` guided by ``flash``."""
    noflash, flash = as_image(noflash), as_image(flash)
    _same_size(noflash, flash, "flash and no-flash sizes differ")
    out, trace = guided_filter(noflash, flash, params or preset("flash-noflash"), executor)
    return PipelineResult(out, [trace]) if full_output else out


def detail_enhance(img, boost: float = 3.0, params: FilterParams | None = None, *,
                   executor=None, full_output: bool = False):
    """Amplify the detail layer ``img - base`` by ``boost``."""
    if not boost > 0:
        raise ParameterError(f"boost must be > 0, got {boost}")
    img = as_image(img)
    x, info = normalize(img)
    base, trace = irls_filter(x, x, params or preset("detail-enhance"), executor=executor)
    out = np.clip(base.data + boost * (x.data - base.data), 0.0, 255.0)
    result = denormalize(Image(out), info)
    result.bitdepth = img.bitdepth
    return PipelineResult(result, [trace]) if full_output else result


def luminance(img: Image) -> np.ndarray:
    return as_image(img).data.mean(axis=2)


def tonemap_hdr(hdr, gains=(1.0, 1.0, 1.0), compression: float | None = None,
                params: FilterParams | None = None, *, full_output: bool = False):
    """Three-layer log-domain decomposition and base compression.

    ``compression`` divides the base layer's log range; by default a base
    wider than ``log(100)`` is squeezed to exactly that range, and a
    narrower one is left alone.
    """
    hdr = as_image(hdr)
    if not np.all(hdr.data > 0):
        raise ContractError("tone mapping needs strictly positive samples")
    if len(gains) != 3:
        raise ParameterError("tone mapping takes exactly three layer gains")
    lum = luminance(hdr)
    L = np.log(lum)
    x, info = normalize(Image(L))
    base = params or preset("tonemap")
    traces, layers = [], []
    for a in TONEMAP_ALPHAS:
        u, trace = irls_filter(x, x, base.replace(alpha=a))
        layers.append(denormalize(u, info).data[:, :, 0])
        traces.append(trace)
    u1, u2, u3 = layers
    details = (L - u1, u1 - u2, u2 - u3)

    span = float(u3.max() - u3.min())
    if compression is None:
        # squeeze the base to log(100), but never stretch it
        compression = max(span / math.log(100.0), 1.0)
    if not compression > 0:
        raise ParameterError(f"compression must be > 0, got {compression}")
    out_log = (u3 - u3.max()) / compression + sum(g * d for g, d in zip(gains, details))
    ratio = hdr.data / lum[:, :, None]
    ldr = np.exp(out_log)[:, :, None] * ratio
    result = normalize(Image(ldr))[0]
    result = Image(result.data)
    return PipelineResult(result, traces) if full_output else result


def texture_smooth(img, params: FilterParams | None = None, *, executor=None,
                   full_output: bool = False):
    """3x3 median prefilter followed by self-guided filtering."""
    img = as_image(img)
    m = median3x3(img)
    out, trace = guided_filter(m, m, params or preset("texture-smooth"), executor)
    out.bitdepth = img.bitdepth
    return PipelineResult(out, [trace]) if full_output else out


def dejpeg_clipart(img, params: FilterParams | None = None, *, executor=None,
                   full_output: bool = False):
    """Self-guided filtering of decoded clip-art; no prefilter."""
    img = as_image(img)
    out, trace = guided_filter(img, img, params or preset("dejpeg"), executor)
    out.bitdepth = img.bitdepth
    return PipelineResult(out, [trace]) if full_output else out


def run_pipeline(cfg: PipelineConfig, target, guidance=None, *, executor=None) -> PipelineResult:
    """Dispatch ``cfg.application`` and always return a :class:`PipelineResult`."""
    app, p = cfg.application, cfg.params
    if app in ("depth-upsample", "flash-noflash") and guidance is None:
        raise ContractError(f"{app} needs a guidance image")
    if app == "depth-upsample":
        return depth_upsample(target, guidance, cfg.factor, p, full_output=True)
    if app == "flash-noflash":
        return flash_noflash(target, guidance, p, executor=executor, full_output=True)
    if app == "detail-enhance":
        return detail_enhance(target, cfg.boost, p, executor=executor, full_output=True)
    if app == "tonemap":
        return tonemap_hdr(target, cfg.layer_gains, cfg.compression, p, full_output=True)
    if app == "texture-smooth":
        return texture_smooth(target, p, executor=executor, full_output=True)
    return dejpeg_clipart(target, p, executor=executor, full_output=True)


__all__ = ["PipelineConfig", "PipelineResult", "guided_filter", "depth_upsample", "flash_noflash",
           "detail_enhance", "tonemap_hdr", "texture_smooth", "dejpeg_clipart", "run_pipeline",
           "luminance"]
