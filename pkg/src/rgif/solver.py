"""Sparse system assembly, Jacobi-preconditioned CG and the IRLS loop.

The per-iteration matrix ``A = (1 - alpha) W - 2 alpha S`` is stored as a
diagonal plus one coefficient plane per positive stencil offset; the
mirrored entry ``(j, i)`` is implied by symmetry.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numba import njit

from .errors import ContractError, ParameterError
from .image import Image, as_image, mean_abs
from .kernels import FilterParams, _phi_prime, phi, range_weight, spatial_weight

# Lower bound on data-term weights; keeps every row anchored when exp() underflows.
DATA_WEIGHT_FLOOR = 1e-14


def _axis_slices(d: int, n: int) -> tuple[slice, slice]:
    if d >= 0:
        return slice(0, max(n - d, 0)), slice(d, n)
    return slice(-d, n), slice(0, max(n + d, 0))


def pair_slices(di: int, dj: int, h: int, w: int):
    """Index pairs for offset ``(di, dj)``.

    Returns ``(si, sj)`` such that pixel ``i`` at ``x[si]`` has neighbour
    ``j = i + (di, dj)`` at ``x[sj]``; pairs leaving the image are dropped.
    """
    ri, rj = _axis_slices(di, h)
    ci, cj = _axis_slices(dj, w)
    return (ri, ci), (rj, cj)


def window_offsets(r: int) -> list[tuple[int, int]]:
    return [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1)]


def half_offsets(r: int) -> list[tuple[int, int]]:
    """Offsets of a (2r+1)^2 window with (0, 0) and one of each +-pair removed."""
    return [(di, dj) for di, dj in window_offsets(r) if di > 0 or (di == 0 and dj > 0)]


def _as_guidance(G, shape) -> np.ndarray:
    G = G.data if isinstance(G, Image) else np.asarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[:, :, None]
    if G.shape[:2] != tuple(shape):
        raise ContractError(f"guidance is {G.shape[:2]}, image is {tuple(shape)}")
    return G


def _as_plane(x, name: str) -> np.ndarray:
    x = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[2] != 1:
            raise ContractError(f"{name} must be a single channel, got {x.shape[2]}")
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def resolve_lambda(p: FilterParams, lam, shape):
    """Normalize ``lam`` to a ``(lambda_d, lambda_s)`` pair.

    ``lam`` may be None (use ``p``), a ``(lambda_d, lambda_s)`` tuple of
    scalars or maps, or a single map/scalar driving both terms.
    """
    if lam is None:
        pair = (p.lambda_d, p.lambda_s)
    elif isinstance(lam, tuple):
        pair = lam
    else:
        pair = (lam, lam)
    out = []
    for v in pair:
        v = getattr(v, "values", v)
        if np.ndim(v) == 0:
            v = float(v)
            if not v > 0:
                raise ContractError(f"lambda must be > 0, got {v}")
        else:
            v = np.asarray(v, dtype=np.float64)
            if v.shape != tuple(shape):
                raise ContractError(f"lambda map is {v.shape}, image is {tuple(shape)}")
            if not np.all(v > 0):
                raise ContractError("lambda map must be positive everywhere")
        out.append(v)
    return tuple(out)


def _at(lam, sl):
    return lam if np.ndim(lam) == 0 else lam[sl]


def _smooth_weight(x2, lam_s, si, sj):
    # lambda_s(i) and lambda_s(j) averaged so the pair weight stays symmetric
    if np.ndim(lam_s) == 0:
        return _phi_prime(x2, lam_s)
    return 0.5 * (_phi_prime(x2, lam_s[si]) + _phi_prime(x2, lam_s[sj]))


def guidance_planes(G: np.ndarray, p: FilterParams):
    """Yield ``(k, si, sj, weight)`` for the non-empty offsets ``half_offsets(r_s)[k]``."""
    h, w, c = G.shape
    for k, (di, dj) in enumerate(half_offsets(p.r_s)):
        si, sj = pair_slices(di, dj, h, w)
        diff = G[si] - G[sj]
        if diff.size == 0:
            continue
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        wg = spatial_weight(di, dj, p.sigma_s) * range_weight(dist2, c, p.sigma_g)
        yield k, si, sj, wg


@njit(cache=True, nogil=True)
def _stencil_matvec(diag, planes, offsets, x, y):
    # sequential loops: fixed summation order whatever the thread count
    h, w = diag.shape
    for i in range(h):
        for j in range(w):
            y[i, j] = diag[i, j] * x[i, j]
    for k in range(offsets.shape[0]):
        di, dj = offsets[k, 0], offsets[k, 1]
        for i in range(max(0, -di), min(h, h - di)):
            for j in range(max(0, -dj), min(w, w - dj)):
                c = planes[k, i, j]
                y[i, j] += c * x[i + di, j + dj]
                y[i + di, j + dj] += c * x[i, j]


@dataclass
class SparseSystem:
    """``A x = rhs`` over one image channel in stencil-plane layout.

    ``planes[k]`` holds ``A[i, i + offsets[k]]`` at pixel ``i`` (zero where
    the neighbour falls outside the image). ``anchor`` is the data-term
    part of the diagonal, by which it exceeds the off-diagonal row sum.
    """

    diag: np.ndarray
    offsets: list[tuple[int, int]]
    planes: np.ndarray
    rhs: np.ndarray
    anchor: np.ndarray | None = None
    _pairs: list = field(default=None, init=False, repr=False)
    _offset_array: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        h, w = self.diag.shape
        self.planes = np.ascontiguousarray(self.planes, dtype=np.float64)
        self._offset_array = np.array(self.offsets, dtype=np.int64).reshape(-1, 2)
        self._pairs = []
        for k, (di, dj) in enumerate(self.offsets):
            si, sj = pair_slices(di, dj, h, w)
            self._pairs.append((si, sj, self.planes[k][si]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.diag.shape

    @property
    def n(self) -> int:
        return self.diag.size

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = np.empty_like(self.diag)
        _stencil_matvec(self.diag, self.planes, self._offset_array, np.ascontiguousarray(x), y)
        return y

    def offdiag_abs_sum(self) -> np.ndarray:
        total = np.zeros_like(self.diag)
        for si, sj, c in self._pairs:
            total[si] -= c
            total[sj] -= c
        return total

    def validate(self) -> None:
        """Raise :class:`ContractError` unless A is an SPD M-matrix."""
        if not (np.all(np.isfinite(self.diag)) and np.all(np.isfinite(self.planes))
                and np.all(np.isfinite(self.rhs))):
            raise ContractError("system has non-finite entries")
        if not np.all(self.diag > 0):
            raise ContractError("system diagonal must be positive")
        if np.any(self.planes > 0):
            raise ContractError("off-diagonal entries must be <= 0")
        offsum = self.offdiag_abs_sum()
        if self.anchor is None:
            dominant = self.diag > offsum
        else:
            # diag = anchor + offsum exactly; rounding may absorb a tiny anchor
            dominant = (self.anchor > 0) & (self.diag >= offsum)
        if not np.all(dominant):
            raise ContractError("system is not strictly diagonally dominant")

    def to_sparse(self):
        """Assemble the full matrix as ``scipy.sparse.csr_matrix``."""
        from scipy import sparse

        h, w = self.shape
        idx = np.arange(self.n).reshape(h, w)
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [self.diag.ravel()]
        for si, sj, c in self._pairs:
            a, b, v = idx[si].ravel(), idx[sj].ravel(), c.ravel()
            rows += [a, b]
            cols += [b, a]
            vals += [v, v]
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n))


def assemble_system(I_n, I0, G, p: FilterParams, lam=None) -> SparseSystem:
    """Linear system of one reweighted least-squares step.

    Robust weights are evaluated at the current iterate ``I_n``; ``lam``
    as in :func:`resolve_lambda`.
    """
    I_n, I0 = _as_plane(I_n, "I_n"), _as_plane(I0, "I0")
    if I_n.shape != I0.shape:
        raise ContractError(f"iterate {I_n.shape} and target {I0.shape} differ")
    if not 0 <= p.alpha < 1:
        raise ParameterError("alpha must lie in [0, 1)")
    G = _as_guidance(G, I0.shape)
    lam_d, lam_s = resolve_lambda(p, lam, I0.shape)
    h, w = I0.shape
    a = p.alpha

    data_w = np.zeros((h, w))
    rhs = np.zeros((h, w))
    for di, dj in window_offsets(p.r_d):
        si, sj = pair_slices(di, dj, h, w)
        if I0[sj].size == 0:
            continue
        r = I_n[si] - I0[sj]
        d = np.maximum(_phi_prime(r * r, _at(lam_d, si)), DATA_WEIGHT_FLOOR)
        t = spatial_weight(di, dj, p.sigma_d) * d
        data_w[si] += t
        rhs[si] += t * I0[sj]
    anchor = (1.0 - a) * data_w
    diag = anchor.copy()
    rhs *= 1.0 - a

    offsets = half_offsets(p.r_s)
    planes = np.zeros((len(offsets), h, w))
    for k, si, sj, wg in guidance_planes(G, p):
        x = I_n[si] - I_n[sj]
        c = 2.0 * a * wg * _smooth_weight(x * x, lam_s, si, sj)
        planes[k][si] = -c
        diag[si] += c
        diag[sj] += c
    return SparseSystem(diag, offsets, planes, rhs, anchor)


class PcgResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    # numpy's pairwise reduction: fixed order, independent of BLAS threads
    return float(np.add.reduce((a * b).ravel()))


def pcg_solve(sys: SparseSystem, x0=None, tol: float = 1e-8, maxit: int = 1000,
              check: bool = True) -> PcgResult:
    """Solve ``sys`` by conjugate gradients with a Jacobi preconditioner.

    Stops when ``||b - A x|| <= tol ||b||``; after ``maxit`` iterations
    the last iterate is returned with ``converged=False``.
    """
    if check:
        sys.validate()
    b = sys.rhs
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64).reshape(b.shape)
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return PcgResult(np.zeros_like(b), 0, True)
    threshold = tol * bnorm
    r = b - sys.matvec(x)
    rr = _dot(r, r)
    if math.sqrt(rr) <= threshold:
        return PcgResult(x, 0, True)
    inv_diag = 1.0 / sys.diag
    z = inv_diag * r
    d = z.copy()
    rz = _dot(r, z)
    for it in range(1, maxit + 1):
        Ad = sys.matvec(d)
        step = rz / _dot(d, Ad)
        x += step * d
        r -= step * Ad
        if math.sqrt(_dot(r, r)) <= threshold:
            return PcgResult(x, it, True)
        z = inv_diag * r
        rz_new = _dot(r, z)
        d *= rz_new / rz
        d += z
        rz = rz_new
    return PcgResult(x, maxit, False)


def energy(I, I0, G, p: FilterParams, lam=None) -> float:
    """Robust objective ``(1 - alpha) E_D + alpha E_S`` of one channel."""
    I, I0 = _as_plane(I, "I"), _as_plane(I0, "I0")
    G = _as_guidance(G, I0.shape)
    lam_d, lam_s = resolve_lambda(p, lam, I0.shape)
    h, w = I0.shape
    e_data = 0.0
    for di, dj in window_offsets(p.r_d):
        si, sj = pair_slices(di, dj, h, w)
        if I0[sj].size == 0:
            continue
        r = I[si] - I0[sj]
        e_data += float(np.sum(spatial_weight(di, dj, p.sigma_d) * phi(r * r, _at(lam_d, si))))
    e_smooth = 0.0
    for _, si, sj, wg in guidance_planes(G, p):
        x = I[si] - I[sj]
        x2 = x * x
        # the ordered pairs (i, j) and (j, i) each carry their own lambda
        e_smooth += float(np.sum(wg * (phi(x2, _at(lam_s, si)) + phi(x2, _at(lam_s, sj)))))
    return (1.0 - p.alpha) * e_data + p.alpha * e_smooth


@dataclass
class IrlsTrace:
    """Per-iteration record of an IRLS run (summed over channels)."""

    mad_sequence: list[float] = field(default_factory=list)
    energy_sequence: list[float] = field(default_factory=list)
    pcg_iters: list[int] = field(default_factory=list)
    converged: bool = False
    pcg_converged: bool = True

    @property
    def iterates(self) -> int:
        return len(self.mad_sequence)

    def record(self, mad: float, energy: float, pcg_iters: int, pcg_ok: bool) -> None:
        self.mad_sequence.append(mad)
        self.energy_sequence.append(energy)
        self.pcg_iters.append(pcg_iters)
        self.pcg_converged &= pcg_ok

    def rows(self):
        for k in range(self.iterates):
            yield k + 1, self.mad_sequence[k], self.energy_sequence[k], self.pcg_iters[k]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iteration", "mad", "energy", "pcg_iters"])
            for it, mad, e, n in self.rows():
                out.writerow([it, repr(mad), repr(e), n])


def update_channel(I_n, I0, G, p: FilterParams, lam=None, check: bool = True):
    """One reweighted step: assemble at ``I_n`` and solve warm-started at ``I_n``."""
    system = assemble_system(I_n, I0, G, p, lam)
    return pcg_solve(system, I_n, p.pcg_tol, p.pcg_maxit, check=check)


def irls_filter(I0, G, p: FilterParams, init=None, *, lam=None,
                callback: Callable[[int, Image], None] | None = None,
                track_energy: bool = True, executor=None) -> tuple[Image, IrlsTrace]:
    """Minimize the robust energy by iteratively reweighted least squares.

    Every channel of ``I0`` is filtered separately under the shared
    guidance ``G``. Iteration stops once the mean absolute change between
    successive iterates drops below ``p.irls_tol`` or after
    ``p.irls_maxit`` updates. ``callback(n, image)`` sees each iterate.
    """
    I0 = as_image(I0)
    G = _as_guidance(G, I0.shape[:2])
    current = I0.data.copy() if init is None else as_image(init).data.copy()
    if current.shape != I0.shape:
        raise ContractError(f"init {current.shape} does not match target {I0.shape}")
    channels = range(I0.channels)
    trace = IrlsTrace()

    def step(k):
        return update_channel(current[:, :, k], I0.data[:, :, k], G, p, lam)

    for n in range(1, p.irls_maxit + 1):
        results = list(executor.map(step, channels)) if executor else [step(k) for k in channels]
        new = np.stack([res.x for res in results], axis=2)
        mad = mean_abs(new, current)
        e = (sum(energy(new[:, :, k], I0.data[:, :, k], G, p, lam) for k in channels)
             if track_energy else math.nan)
        trace.record(mad, e, sum(res.iterations for res in results),
                     all(res.converged for res in results))
        current = new
        if callback is not None:
            callback(n, Image(current, bitdepth=I0.bitdepth))
        if mad < p.irls_tol:
            trace.converged = True
            break
    return Image(current, bitdepth=I0.bitdepth), trace
