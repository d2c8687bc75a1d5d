"""Synthetic test scenes shared by the test modules."""

import numpy as np

CELL = 2


def depth_scene(size=64, factor=8, noise=5.0, seed=0):
    """Two-plateau depth (60 / 180) with a checkerboard-textured colour guide.

    The texture sits in the flat background next to the object edge.
    Returns ``(truth, color, lowres, object_mask, texture_mask)``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    obj = ((yy >= size * 5 // 16) & (yy < size * 13 // 16)
           & (xx >= size * 7 // 16) & (xx < size * 15 // 16))
    truth = np.where(obj, 180.0, 60.0)
    color = np.empty((size, size, 3))
    color[...] = (40, 90, 160)
    color[obj] = (200, 120, 60)
    tex = (yy >= size // 8) & (yy < size * 7 // 8) & (xx >= size // 16) & (xx < size * 6 // 16)
    checker = ((yy // CELL + xx // CELL) % 2) * 2 - 1
    color[tex] += 50 * checker[tex][:, None]
    low = truth.reshape(size // factor, factor, size // factor, factor).mean(axis=(1, 3))
    low = low + rng.normal(0, noise, low.shape)
    return truth, color, low, obj, tex
