"""Scalar building blocks of the robust energy and the parameter record.

All weights assume samples on the [0, 255] scale.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Any, Mapping

import numpy as np

from .errors import ContractError, ParameterError

INF = math.inf

_INT_FIELDS = {"r_d", "r_s", "pcg_maxit", "irls_maxit"}


@dataclass(frozen=True)
class FilterParams:
    """Every knob of the filter, the lambda optimizer and the solvers.

    ``lambda_d``/``lambda_s`` may be ``math.inf``, which makes the
    corresponding penalty exactly quadratic.
    """

    alpha: float = 0.9
    r_d: int = 5
    r_s: int = 5
    sigma_d: float = 5.0
    sigma_s: float = 5.0
    sigma_g: float = 15.0
    lambda_d: float = 10.0
    lambda_s: float = 10.0
    beta: float = 0.5
    tau: float = 0.3
    lambda0: float = 7.0
    lambda_min: float = 0.5
    lambda_max: float = 100.0
    pcg_tol: float = 1e-8
    pcg_maxit: int = 1000
    irls_tol: float = 0.1
    irls_maxit: int = 20

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _INT_FIELDS:
                if isinstance(value, bool) or int(value) != value:
                    raise ParameterError(f"{f.name} must be an integer, got {value!r}")
                object.__setattr__(self, f.name, int(value))
            else:
                value = float(value)
                if math.isnan(value):
                    raise ParameterError(f"{f.name} is NaN")
                object.__setattr__(self, f.name, value)

        if not 0.0 <= self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.r_d < 0:
            raise ParameterError(f"r_d must be >= 0, got {self.r_d}")
        if self.r_s < 1:
            raise ParameterError(f"r_s must be >= 1, got {self.r_s}")
        for name in ("sigma_d", "sigma_s", "sigma_g", "lambda_d", "lambda_s", "lambda0"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("sigma_d", "sigma_s", "sigma_g", "lambda0", "beta", "tau",
                     "lambda_min", "lambda_max", "pcg_tol", "irls_tol"):
            if math.isinf(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.beta < 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if self.tau < 0:
            raise ParameterError(f"tau must be >= 0, got {self.tau}")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ParameterError(
                f"need 0 < lambda_min <= lambda_max, got {self.lambda_min}, {self.lambda_max}")
        if not self.pcg_tol > 0:
            raise ParameterError("pcg_tol must be > 0")
        if self.irls_tol < 0:
            raise ParameterError("irls_tol must be >= 0")
        if self.pcg_maxit < 1 or self.irls_maxit < 1:
            raise ParameterError("pcg_maxit and irls_maxit must be >= 1")

    def replace(self, **changes: Any) -> "FilterParams":
        return dataclasses.replace(self, **changes)

    def updated(self, values: Mapping[str, Any]) -> "FilterParams":
        """Return a copy with ``values`` applied; strings are parsed.

        Unknown keys raise :class:`ParameterError`.
        """
        known = {f.name for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ParameterError(f"unknown parameter {key!r}")
            changes[key] = parse_value(key, raw) if isinstance(raw, str) else raw
        return self.replace(**changes)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.as_dict().items())


def parse_value(key: str, text: str) -> float | int:
    text = text.strip()
    if text.lower() in ("inf", "+inf", "infinity", "∞"):
        value: float | int = INF
    else:
        try:
            value = float(Fraction(text)) if "/" in text else float(text)
        except (ValueError, ZeroDivisionError):
            raise ParameterError(f"cannot parse {key} = {text!r}") from None
    if key in _INT_FIELDS:
        if value != int(value):
            raise ParameterError(f"{key} must be an integer, got {text!r}")
        value = int(value)
    return value


def format_value(value: Any) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return repr(value) if isinstance(value, float) else str(value)


def _lambda_sq2(lam):
    return 2.0 * np.square(lam)


def phi(x2, lam):
    """Exponential error norm ``2 lam^2 (1 - exp(-x2 / (2 lam^2)))``.

    Quadratic (returns ``x2``) where ``lam`` is infinite.
    """
    x2 = np.asarray(x2, dtype=np.float64)
    if np.any(x2 < 0):
        raise ContractError("phi: squared difference must be non-negative")
    lam = np.asarray(lam, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        c = _lambda_sq2(lam)
        # phi <= x2 exactly; the clamp only bites on subnormal x2
        out = np.minimum(-c * np.expm1(-x2 / c), x2)
    out = np.where(np.isinf(lam), x2, out)
    return out[()] if out.ndim == 0 else out


def phi_prime(x2, lam):
    """Derivative of :func:`phi` with respect to ``x2``: ``exp(-x2 / (2 lam^2))``."""
    x2 = np.asarray(x2, dtype=np.float64)
    if np.any(x2 < 0):
        raise ContractError("phi_prime: squared difference must be non-negative")
    out = _phi_prime(x2, lam)
    return out[()] if out.ndim == 0 else out


def _phi_prime(x2: np.ndarray, lam) -> np.ndarray:
    # Hot path, no validation. 1/inf -> exp(-0) = 1 exactly.
    return np.exp(-x2 / _lambda_sq2(lam))


def spatial_weight(di, dj, sigma: float):
    if not sigma > 0:
        raise ParameterError("sigma must be > 0")
    return np.exp(-(np.square(di) + np.square(dj)) / (2.0 * sigma * sigma))


def range_weight(dist2, channels: int, sigma_g: float):
    """Guidance range factor given the channel-summed squared difference."""
    return np.exp(-dist2 / (channels * 2.0 * sigma_g * sigma_g))


def guidance_weight(i: tuple[int, int], j: tuple[int, int], G: np.ndarray,
                    sigma_s: float, sigma_g: float) -> float:
    """Bilateral guidance weight between pixels ``i`` and ``j`` of ``G``.

    ``G`` is ``(H, W)`` or ``(H, W, C)``; coordinates are ``(row, col)``.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[:, :, None]
    h, w = G.shape[:2]
    for r, c in (i, j):
        if not (0 <= r < h and 0 <= c < w):
            raise ContractError(f"pixel ({r}, {c}) outside {h}x{w} guidance")
    if not (sigma_s > 0 and sigma_g > 0):
        raise ParameterError("bandwidths must be > 0")
    # squared differences summed in a fixed order so gw(i, j) == gw(j, i)
    diff = G[i[0], i[1]] - G[j[0], j[1]]
    dist2 = float(np.sum(diff * diff))
    return float(spatial_weight(i[0] - j[0], i[1] - j[1], sigma_s)
                 * range_weight(dist2, G.shape[2], sigma_g))


# Literal parameter table per application; None marks an unused entry.
PRESET_TABLE: dict[str, dict[str, Any]] = {
    "depth-upsample": dict(alpha={2: 0.6, 4: 0.8, 8: 0.9, 16: 0.93}, r_d=7, r_s=7,
                           sigma_d=7, sigma_s=7, sigma_g=10, lambda_d=7, lambda_s=7,
                           beta=0.5, tau=0.3),
    "flash-noflash": dict(alpha=0.7, r_d=1, r_s=4, sigma_d=1, sigma_s=4, sigma_g=5,
                          lambda_d=5, lambda_s=5, beta=None, tau=None),
    "detail-enhance": dict(alpha=0.8, r_d=0, r_s=3, sigma_d=None, sigma_s=3, sigma_g=10,
                           lambda_d=INF, lambda_s=10, beta=None, tau=None),
    "tonemap": dict(alpha=(1 / 9, 1 / 2, 8 / 9), r_d=1, r_s=6, sigma_d=1, sigma_s=6,
                    sigma_g=20, lambda_d=20, lambda_s=20, beta=None, tau=None),
    "texture-smooth": dict(alpha=0.9, r_d=5, r_s=5, sigma_d=5, sigma_s=5, sigma_g=15,
                           lambda_d=10, lambda_s=10, beta=None, tau=None),
    "dejpeg": dict(alpha=0.9, r_d=5, r_s=5, sigma_d=5, sigma_s=5, sigma_g=15,
                   lambda_d=10, lambda_s=10, beta=None, tau=None),
}

APPLICATIONS = tuple(PRESET_TABLE)
DEPTH_FACTORS = (2, 4, 8, 16)
TONEMAP_ALPHAS = PRESET_TABLE["tonemap"]["alpha"]


def preset(application: str, factor: int | None = None, layer: int = 0) -> FilterParams:
    """FilterParams for one row of the parameter table.

    ``factor`` selects the depth-upsampling alpha (factor 1 reuses the 2x
    value); ``layer`` selects the tone-mapping detail layer (0, 1 or 2).
    """
    try:
        row = PRESET_TABLE[application]
    except KeyError:
        raise ParameterError(f"unknown application {application!r}") from None
    values = {k: v for k, v in row.items() if v is not None}
    if application == "depth-upsample":
        factor = 8 if factor is None else factor
        key = 2 if factor == 1 else factor
        if key not in row["alpha"]:
            raise ParameterError(f"depth factor must be one of {DEPTH_FACTORS}, got {factor}")
        values["alpha"] = row["alpha"][key]
        values["lambda0"] = row["lambda_d"]
    elif application == "tonemap":
        values["alpha"] = row["alpha"][layer]
    if application == "detail-enhance":
        # sigma_d is unused with r_d = 0; keep any positive value
        values["sigma_d"] = 1.0
    return FilterParams().replace(**values)
