"""Per-pixel adaptation of the error-norm scale lambda.

The image and the lambda map are updated alternately: one reweighted
least-squares solve with the current map, then one steepest-descent step
on the map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError
from .image import Image, as_image, mean_abs
from .kernels import FilterParams, _phi_prime, spatial_weight
from .solver import (IrlsTrace, _as_guidance, _as_plane, energy, guidance_planes, pair_slices,
                     update_channel, window_offsets)


@dataclass
class LambdaMap:
    """Per-pixel lambda values clamped to ``[lambda_min, lambda_max]``."""

    values: np.ndarray
    lambda_min: float = 0.5
    lambda_max: float = 100.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"lambda map must be 2-D, got {self.values.shape}")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ContractError("need 0 < lambda_min <= lambda_max")
        if not np.all((self.values >= self.lambda_min) & (self.values <= self.lambda_max)):
            raise ContractError("lambda map values outside the clamp bounds")

    @classmethod
    def uniform(cls, shape, value: float, p: FilterParams | None = None) -> "LambdaMap":
        lo, hi = (p.lambda_min, p.lambda_max) if p is not None else (0.5, 100.0)
        return cls(np.full(shape, float(value)), lo, hi)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _values(lam) -> np.ndarray:
    return lam.values if isinstance(lam, LambdaMap) else np.asarray(lam, dtype=np.float64)


def discrete_laplacian(lam) -> np.ndarray:
    """Five-point Laplacian with replicated borders."""
    v = np.pad(_values(lam), 1, mode="edge")
    return v[:-2, 1:-1] + v[2:, 1:-1] + v[1:-1, :-2] + v[1:-1, 2:] - 4.0 * v[1:-1, 1:-1]


def _dphi_dlambda(x2: np.ndarray, lam, weight: np.ndarray) -> np.ndarray:
    # d/d lam of 2 lam^2 (1 - exp(-x2 / 2 lam^2))
    u = x2 / (2.0 * np.square(lam))
    return 4.0 * lam * -np.expm1(-u) - (2.0 * x2 / lam) * weight


def lambda_gradient(lam, I_n, I0, G, p: FilterParams) -> np.ndarray:
    """Derivative of the lambda-regularized energy with respect to each lambda_i.

    The smoothness regularizer ``beta * sum |grad lambda|^2`` (forward
    differences) contributes ``-2 beta * laplacian(lambda)``.
    """
    lam = _values(lam)
    I_n, I0 = _as_plane(I_n, "I_n"), _as_plane(I0, "I0")
    if not (I_n.shape == I0.shape == lam.shape):
        raise ContractError("lambda map, iterate and target must share a shape")
    if not np.all(lam > 0):
        raise ContractError("lambda must be positive")
    G = _as_guidance(G, I0.shape)
    h, w = I0.shape

    data = np.zeros((h, w))
    for di, dj in window_offsets(p.r_d):
        si, sj = pair_slices(di, dj, h, w)
        if I0[sj].size == 0:
            continue
        r = I_n[si] - I0[sj]
        x2 = r * r
        lam_i = lam[si]
        d = _phi_prime(x2, lam_i)
        data[si] += spatial_weight(di, dj, p.sigma_d) * _dphi_dlambda(x2, lam_i, d)

    smooth = np.zeros((h, w))
    for _, si, sj, wg in guidance_planes(G, p):
        x = I_n[si] - I_n[sj]
        x2 = x * x
        for sl in (si, sj):
            lam_k = lam[sl]
            smooth[sl] += wg * _dphi_dlambda(x2, lam_k, _phi_prime(x2, lam_k))

    grad = (1.0 - p.alpha) * data + p.alpha * smooth
    if p.beta:
        grad -= 2.0 * p.beta * discrete_laplacian(lam)
    return grad


def lambda_step(lam: LambdaMap, grad, tau: float) -> LambdaMap:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != lam.values.shape:
        raise ContractError(f"gradient {grad.shape} does not match lambda map {lam.values.shape}")
    values = np.clip(lam.values - tau * grad, lam.lambda_min, lam.lambda_max)
    return LambdaMap(values, lam.lambda_min, lam.lambda_max)


def lambda_energy(I, I0, G, p: FilterParams, lam) -> float:
    """Data + smoothness energy at per-pixel lambda plus the beta regularizer."""
    v = _values(lam)
    reg = float(np.sum(np.square(np.diff(v, axis=0))) + np.sum(np.square(np.diff(v, axis=1))))
    return energy(I, I0, G, p, v) + p.beta * reg


def window_count(p: FilterParams) -> int:
    """Pixels in the larger of the two windows."""
    r = max(p.r_d, p.r_s)
    return (2 * r + 1) ** 2


def rgif_optimize(I0, G, p: FilterParams, init=None, *,
                  callback: Callable[[int, Image, LambdaMap], None] | None = None,
                  track_energy: bool = True,
                  per_window: bool = True) -> tuple[Image, LambdaMap, IrlsTrace]:
    """Filter a single-channel image while adapting a per-pixel lambda map.

    The map starts at ``p.lambda0`` and drives both the data and the
    smoothness scale. Stops with the same rule as :func:`irls_filter`.

    With ``per_window`` (default) the descent step uses the gradient
    divided by :func:`window_count`, i.e. the window-mean rate, so that
    ``tau`` does not scale with the window area. ``per_window=False``
    applies ``tau`` to the raw gradient; on [0, 255] data that drives
    almost every lambda to ``lambda_min`` in the first step.
    """
    I0 = as_image(I0)
    if I0.channels != 1:
        raise ContractError("lambda optimization supports single-channel targets only")
    target = I0.data[:, :, 0]
    G = _as_guidance(G, target.shape)
    current = target.copy() if init is None else _as_plane(as_image(init), "init").copy()
    if current.shape != target.shape:
        raise ContractError(f"init {current.shape} does not match target {target.shape}")

    lam = LambdaMap.uniform(target.shape, p.lambda0, p)
    scale = float(window_count(p))
    trace = IrlsTrace()
    for n in range(1, p.irls_maxit + 1):
        res = update_channel(current, target, G, p, lam.values)
        mad = mean_abs(res.x, current)
        e = energy(res.x, target, G, p, lam.values) if track_energy else float("nan")
        trace.record(mad, e, res.iterations, res.converged)
        grad = lambda_gradient(lam, res.x, target, G, p)
        if per_window:
            grad /= scale
        lam = lambda_step(lam, grad, p.tau)
        current = res.x
        if callback is not None:
            callback(n, Image(current), lam)
        if mad < p.irls_tol:
            trace.converged = True
            break
    return Image(current, bitdepth=I0.bitdepth), lam, trace
