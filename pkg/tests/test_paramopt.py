import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgif import oracle
from rgif.errors import ContractError
from rgif.kernels import FilterParams
from rgif.paramopt import (LambdaMap, discrete_laplacian, lambda_energy, lambda_gradient,
                           lambda_step, rgif_optimize, window_count)
from rgif.solver import irls_filter
from scenes import depth_scene

# r = 10, lambda = 7, alpha = 0.9 on a single pixel, evaluated at 30 digits (mpmath)
SINGLE_PIXEL_GRADIENT = 0.760895367360898142595337841789


def dense_laplacian_matrix(h, w):
    """Graph Laplacian of the 4-neighbour grid (Neumann borders), built entry by entry."""
    n = h * w
    L = np.zeros((n, n))
    for a in range(h):
        for b in range(w):
            i = a * w + b
            for c, d in ((a - 1, b), (a + 1, b), (a, b - 1), (a, b + 1)):
                if 0 <= c < h and 0 <= d < w:
                    L[i, c * w + d] += 1
                    L[i, i] -= 1
    return L


def test_laplacian_examples():
    assert np.all(discrete_laplacian(np.full((5, 5), 3.0)) == 0)
    bump = np.full((5, 5), 2.0)
    bump[2, 2] += 0.5
    lap = discrete_laplacian(bump)
    assert lap[2, 2] == -2.0
    for a, b in ((1, 2), (3, 2), (2, 1), (2, 3)):
        assert lap[a, b] == 0.5
    assert np.count_nonzero(lap) == 5


def test_laplacian_vs_matrix():
    lam = np.random.default_rng(0).uniform(0.5, 100, (8, 8))
    ref = (dense_laplacian_matrix(8, 8) @ lam.ravel()).reshape(8, 8)
    np.testing.assert_allclose(discrete_laplacian(LambdaMap(lam)), ref, atol=1e-12)


def test_zero_gradient_on_constant():
    I = np.full((6, 6), 80.0)
    G = np.random.default_rng(1).uniform(0, 255, (6, 6, 3))
    g = lambda_gradient(LambdaMap.uniform((6, 6), 7.0), I, I, G, FilterParams(r_d=2, r_s=2))
    assert np.all(g == 0)


def test_single_pixel_gradient():
    p = FilterParams(alpha=0.9, r_d=0, r_s=1, beta=0.0)
    g = lambda_gradient(LambdaMap.uniform((1, 1), 7.0), np.array([[10.0]]), np.array([[0.0]]),
                        np.zeros((1, 1)), p)
    assert g[0, 0] == pytest.approx(SINGLE_PIXEL_GRADIENT, rel=1e-13)


def _fd_case(seed, shape=(7, 8)):
    rng = np.random.default_rng(seed)
    I0 = rng.uniform(0, 255, shape)
    In = I0 + rng.normal(0, 8, shape)
    G = rng.uniform(0, 255, shape + (3,))
    lam = rng.uniform(2, 30, shape)
    return I0, In, G, lam


def test_gradient_matches_finite_differences():
    I0, In, G, lam = _fd_case(2)
    p = FilterParams(alpha=0.8, r_d=1, r_s=2, sigma_d=1.5, sigma_s=2, sigma_g=25, beta=0.0)
    grad = lambda_gradient(lam, In, I0, G, p)
    h = 1e-4
    for i in range(lam.shape[0]):
        for j in range(lam.shape[1]):
            up, dn = lam.copy(), lam.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd = (oracle.energy(In, I0, G, p, up) - oracle.energy(In, I0, G, p, dn)) / (2 * h)
            assert abs(fd - grad[i, j]) < 1e-5


def test_full_gradient_with_beta():
    I0, In, G, lam = _fd_case(3, (6, 6))
    p = FilterParams(alpha=0.8, r_d=1, r_s=1, beta=0.7)
    grad = lambda_gradient(lam, In, I0, G, p)
    base = lambda_gradient(lam, In, I0, G, p.replace(beta=0.0))
    reg = -2 * 0.7 * (dense_laplacian_matrix(6, 6) @ lam.ravel()).reshape(6, 6)
    np.testing.assert_allclose(grad, base + reg, rtol=1e-12, atol=1e-12)
    # and the whole thing is the derivative of the regularized energy
    h = 1e-4
    for i, j in [(0, 0), (2, 3), (5, 5), (3, 0)]:
        up, dn = lam.copy(), lam.copy()
        up[i, j] += h
        dn[i, j] -= h
        fd = (lambda_energy(In, I0, G, p, up) - lambda_energy(In, I0, G, p, dn)) / (2 * h)
        assert abs(fd - grad[i, j]) < 1e-5


def test_gradient_rejects_nonpositive_lambda():
    with pytest.raises(ContractError):
        lambda_gradient(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                        FilterParams(r_s=1))


def test_lambda_step_examples():
    lam = LambdaMap.uniform((2, 2), 7.0)
    assert np.all(lambda_step(lam, np.zeros((2, 2)), 0.3).values == 7.0)
    assert np.all(lambda_step(lam, np.full((2, 2), 10.0), 0.3).values == pytest.approx(4.0))
    low = LambdaMap(np.array([[0.6]]), lambda_min=0.5)
    assert lambda_step(low, np.array([[10.0]]), 0.3).values[0, 0] == 0.5
    assert lambda_step(lam, np.full((2, 2), -1e6), 0.3).values.max() == 100.0


def test_lambda_map_bounds():
    with pytest.raises(ContractError):
        LambdaMap(np.array([[0.1]]))
    with pytest.raises(ContractError):
        LambdaMap(np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 5.0))
def test_step_stays_in_bounds(seed, tau):
    rng = np.random.default_rng(seed)
    lam = LambdaMap(rng.uniform(0.5, 100, (4, 4)))
    out = lambda_step(lam, rng.normal(0, 200, (4, 4)), tau)
    assert np.all((out.values >= 0.5) & (out.values <= 100))


def test_beta_only_bump_decays():
    I = np.full((7, 7), 100.0)
    p = FilterParams(r_d=1, r_s=1, beta=0.5, tau=0.1)
    values = np.full((7, 7), 7.0)
    values[3, 3] = 12.0
    lam = LambdaMap(values)
    amplitude = 5.0
    for _ in range(6):
        lam = lambda_step(lam, lambda_gradient(lam, I, I, I, p), p.tau)
        new = lam.values[3, 3] - np.median(lam.values)
        assert new < amplitude
        amplitude = new


def test_optimize_constant_fixed_point():
    I = np.full((8, 8), 50.0)
    G = np.random.default_rng(4).uniform(0, 255, (8, 8, 3))
    out, lam, trace = rgif_optimize(I, G, FilterParams(r_d=2, r_s=2, lambda0=7))
    np.testing.assert_allclose(out.data, 50.0, rtol=1e-12)
    assert np.all(lam.values == 7.0) and trace.converged


@pytest.mark.parametrize("per_window", [True, False])
def test_tau_zero_reproduces_irls(per_window):
    rng = np.random.default_rng(5)
    I0, G = rng.uniform(0, 255, (10, 10)), rng.uniform(0, 255, (10, 10, 3))
    p = FilterParams(r_d=2, r_s=2, lambda_d=7, lambda_s=7, lambda0=7, tau=0.0, irls_maxit=6)
    a, lam, ta = rgif_optimize(I0, G, p, per_window=per_window)
    b, tb = irls_filter(I0, G, p)
    np.testing.assert_array_equal(a.data, b.data)
    assert ta.mad_sequence == tb.mad_sequence
    assert np.all(lam.values == 7.0)


def test_optimize_single_channel_only():
    with pytest.raises(ContractError):
        rgif_optimize(np.zeros((4, 4, 3)), np.zeros((4, 4)), FilterParams(r_s=1))


def test_window_count():
    assert window_count(FilterParams(r_d=7, r_s=7)) == 225
    assert window_count(FilterParams(r_d=0, r_s=3)) == 49


def test_per_window_step_is_scaled_gradient():
    rng = np.random.default_rng(6)
    I0, G = rng.uniform(0, 255, (9, 9)), rng.uniform(0, 255, (9, 9))
    p = FilterParams(r_d=1, r_s=2, irls_maxit=1, lambda0=7)
    seen = {}
    out, lam, _ = rgif_optimize(I0, G, p, callback=lambda n, img, m: seen.update(x=img.data))
    grad = lambda_gradient(LambdaMap.uniform((9, 9), 7.0), seen["x"][:, :, 0], I0, G, p)
    expected = np.clip(7.0 - p.tau * grad / window_count(p), 0.5, 100)
    np.testing.assert_array_equal(lam.values, expected)


def test_edge_lambda_below_flat_lambda():
    truth, color, low, obj, tex = depth_scene(size=32, factor=4, seed=1)
    from rgif.image import Image, bicubic_resample
    from scipy import ndimage

    init = bicubic_resample(Image(low), 4)
    p = FilterParams(alpha=0.8, r_d=3, r_s=3, sigma_d=3, sigma_s=3, sigma_g=10, lambda0=7)
    _, lam, trace = rgif_optimize(init, color, p, init)
    band = ndimage.binary_dilation(obj, iterations=3) & ~ndimage.binary_erosion(obj, iterations=3)
    assert lam.values[band].mean() < lam.values[~band].mean()
    assert np.all((lam.values >= p.lambda_min) & (lam.values <= p.lambda_max))
