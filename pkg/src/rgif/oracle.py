"""Brute-force references for testing the sparse solver.

Everything here enumerates all pixel pairs explicitly (``n x n`` dense
matrices), so it is limited to small images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import ContractError
from .kernels import FilterParams

MAX_PIXELS = 4096


def _norm(x2, lam):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 0 and np.isinf(lam):
        return x2
    c = 2.0 * lam * lam
    return c * (1.0 - np.exp(-x2 / c))


def _norm_prime(x2, lam):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 0 and np.isinf(lam):
        return np.ones_like(x2)
    return np.exp(-x2 / (2.0 * lam * lam))


def _column(lam, n):
    """Per-row lambda as an ``(n, 1)`` column, or a scalar."""
    if lam is None or np.ndim(lam) == 0:
        return lam
    return np.asarray(lam, dtype=np.float64).reshape(n, 1)


@dataclass
class PairGeometry:
    """All-pairs weights of a small image."""

    n: int
    data_weight: np.ndarray  # omega_ij inside N_D(i), else 0
    guide_weight: np.ndarray  # omega^g_ij inside N_S(i), j != i, else 0

    @classmethod
    def build(cls, shape, G, p: FilterParams) -> "PairGeometry":
        h, w = shape
        n = h * w
        if n > MAX_PIXELS:
            raise ContractError(f"dense oracle limited to {MAX_PIXELS} pixels, got {n}")
        G = np.asarray(G, dtype=np.float64).reshape(h, w, -1)
        rows, cols = np.divmod(np.arange(n), w)
        dr = rows[:, None] - rows[None, :]
        dc = cols[:, None] - cols[None, :]
        dist2 = (dr * dr + dc * dc).astype(np.float64)
        cheb = np.maximum(np.abs(dr), np.abs(dc))
        del dr, dc

        data_weight = np.where(cheb <= p.r_d, np.exp(-dist2 / (2 * p.sigma_d ** 2)), 0.0)
        g = G.reshape(n, -1)
        gdist = np.zeros((n, n))
        for k in range(g.shape[1]):
            gdist += (g[:, k][:, None] - g[:, k][None, :]) ** 2
        guide = np.exp(-dist2 / (2 * p.sigma_s ** 2)) * np.exp(
            -gdist / (g.shape[1] * 2 * p.sigma_g ** 2))
        guide_weight = np.where((cheb <= p.r_s) & (cheb > 0), guide, 0.0)
        return cls(n, data_weight, guide_weight)


def _lams(p, lam):
    if lam is None:
        return p.lambda_d, p.lambda_s
    if isinstance(lam, tuple):
        return lam
    lam = getattr(lam, "values", lam)
    return lam, lam


def energy(I, I0, G, p: FilterParams, lam=None, geometry: PairGeometry | None = None) -> float:
    """Robust energy by summation over every ordered pixel pair."""
    I = np.asarray(I, dtype=np.float64)
    geo = geometry or PairGeometry.build(I.shape[:2], G, p)
    n = geo.n
    u, u0 = I.reshape(n), np.asarray(I0, dtype=np.float64).reshape(n)
    lam_d, lam_s = (_column(v, n) for v in _lams(p, lam))
    data = geo.data_weight * _norm((u[:, None] - u0[None, :]) ** 2, lam_d)
    smooth = geo.guide_weight * _norm((u[:, None] - u[None, :]) ** 2, lam_s)
    return float((1 - p.alpha) * data.sum() + p.alpha * smooth.sum())


@dataclass
class DenseSystem:
    A: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.b.size

    def solve(self) -> np.ndarray:
        factor = scipy.linalg.cho_factor(self.A)
        return scipy.linalg.cho_solve(factor, self.b)


def dense_assemble(I_n, I0, G, p: FilterParams, lam=None,
                   geometry: PairGeometry | None = None) -> DenseSystem:
    """Full matrix of the reweighted normal equations, entry by entry."""
    I_n = np.asarray(I_n, dtype=np.float64)
    geo = geometry or PairGeometry.build(I_n.shape[:2], G, p)
    n = geo.n
    u, u0 = I_n.reshape(n), np.asarray(I0, dtype=np.float64).reshape(n)
    lam_d, lam_s = _lams(p, lam)
    a = p.alpha

    d = _norm_prime((u[:, None] - u0[None, :]) ** 2, _column(lam_d, n))
    Z = geo.data_weight * d
    x2 = (u[:, None] - u[None, :]) ** 2
    if np.ndim(lam_s) == 0:
        s = _norm_prime(x2, lam_s)
    else:
        # per-pixel scales: the pair weight is the mean of both rows' weights
        col = _column(lam_s, n)
        s = 0.5 * (_norm_prime(x2, col) + _norm_prime(x2, col.T))
    S = geo.guide_weight * s

    A = -2 * a * S
    A[np.diag_indices(n)] = (1 - a) * Z.sum(axis=1) + 2 * a * S.sum(axis=1)
    b = (1 - a) * Z @ u0
    return DenseSystem(A, b)


def dense_assemble_solve(I_n, I0, G, p: FilterParams, lam=None) -> np.ndarray:
    """Solution of :func:`dense_assemble` by Cholesky factorization, shaped like ``I0``."""
    system = dense_assemble(I_n, I0, G, p, lam)
    return system.solve().reshape(np.shape(I0))


def _pair_operator(h, w, r, weight_fn, include_center):
    """Sparse rows ``sqrt(c_ij) (e_i - e_j)`` style pair lists, enumerated per offset."""
    rows, cols, vals = [], [], []
    idx = np.arange(h * w).reshape(h, w)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if not include_center and di == 0 and dj == 0:
                continue
            i0, i1 = max(0, -di), min(h, h - di)
            j0, j1 = max(0, -dj), min(w, w - dj)
            if i0 >= i1 or j0 >= j1:
                continue
            a = idx[i0:i1, j0:j1].ravel()
            b = idx[i0 + di:i1 + di, j0 + dj:j1 + dj].ravel()
            rows.append(a)
            cols.append(b)
            vals.append(weight_fn(a, b, di, dj))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def wls_solve(I0, G, p: FilterParams, init=None) -> np.ndarray:
    """Minimize the weighted least-squares objective directly.

    Objective: ``(1-alpha) sum c_ij (I_i - I0_j)^2 + alpha sum k_ij (I_i - I_j)^2``
    with ``c = omega`` over N_D (``c = delta`` when ``r_d = 0``) and
    ``k = omega^g`` over N_S. With ``init`` given and a finite
    ``lambda_s``, ``k = omega^g * s`` with ``s`` evaluated on ``init``.
    Solved as sparse linear least squares via its normal equations, so
    it scales past the dense oracle's size limit.
    """
    I0 = np.asarray(I0, dtype=np.float64)
    h, w = I0.shape[:2]
    n = h * w
    g = np.asarray(G, dtype=np.float64).reshape(n, -1)
    u0 = I0.reshape(n)
    a = p.alpha

    def data_c(i, j, di, dj):
        return np.full(i.size, np.exp(-(di * di + dj * dj) / (2 * p.sigma_d ** 2)))

    def smooth_k(i, j, di, dj):
        k = np.exp(-(di * di + dj * dj) / (2 * p.sigma_s ** 2)) * np.exp(
            -np.sum((g[i] - g[j]) ** 2, axis=1) / (g.shape[1] * 2 * p.sigma_g ** 2))
        if init is not None and not np.isinf(p.lambda_s):
            v = np.asarray(init, dtype=np.float64).reshape(n)
            k = k * _norm_prime((v[i] - v[j]) ** 2, p.lambda_s)
        return k

    di_, dj_, c = _pair_operator(h, w, p.r_d, data_c, include_center=True)
    si, sj, k = _pair_operator(h, w, p.r_s, smooth_k, include_center=False)

    # residual rows: sqrt((1-a) c) (I_i - I0_j) and sqrt(a k) (I_i - I_j)
    m_d, m_s = di_.size, si.size
    sd, ss = np.sqrt((1 - a) * c), np.sqrt(a * k)
    M = sparse.vstack([
        sparse.csr_matrix((sd, (np.arange(m_d), di_)), shape=(m_d, n)),
        sparse.csr_matrix((np.concatenate([ss, -ss]),
                           (np.tile(np.arange(m_s), 2), np.concatenate([si, sj]))),
                          shape=(m_s, n)),
    ]).tocsr()
    y = np.concatenate([sd * u0[dj_], np.zeros(m_s)])
    x = spsolve((M.T @ M).tocsc(), M.T @ y)
    return x.reshape(I0.shape)
