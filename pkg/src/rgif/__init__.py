"""Robust guided image filtering: a robust data term over a window of the
target plus a guidance-weighted robust smoothness term, minimized by
iteratively reweighted least squares."""

from .errors import ContractError, DecodeError, FormatError, ParameterError, RGIFError
from .image import Image, bicubic_resample, denormalize, load_image, median3x3, normalize, save_image
from .kernels import FilterParams, phi, phi_prime, preset
from .paramopt import LambdaMap, lambda_gradient, lambda_step, rgif_optimize
from .pipelines import (PipelineConfig, PipelineResult, depth_upsample, detail_enhance,
                        dejpeg_clipart, flash_noflash, guided_filter, texture_smooth, tonemap_hdr)
from .solver import IrlsTrace, SparseSystem, assemble_system, energy, irls_filter, pcg_solve

__version__ = "0.1.0"
