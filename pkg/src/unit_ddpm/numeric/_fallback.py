"""Pure-numpy im2col / col2im, used when the compiled extension is unavailable.

Column layout is ``[C*k*k, B*Ho*Wo]`` (row index ``(c, ki, kj)``, column
index ``(b, i, j)``), identical to the compiled kernels. ``lo`` / ``hi`` are
implicit zero padding on both spatial axes.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, lo, hi):
    if lo == 0 and hi == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)))


def im2col(x: np.ndarray, k: int, stride: int, lo: int = 0, hi: int = 0) -> np.ndarray:
    B, C = x.shape[:2]
    win = sliding_window_view(_pad(x, lo, hi), (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2:4]
    # (B, C, Ho, Wo, k, k) -> (C, k, k, B, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * k * k, B * Ho * Wo)


def col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, lo: int = 0, hi: int = 0) -> np.ndarray:
    B, C, H, W = shape
    Hp, Wp = H + lo + hi, W + lo + hi
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    blocks = cols.reshape(C, k, k, B, Ho, Wo)
    out = np.zeros((B, C, Hp, Wp), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += blocks[:, ki, kj].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out[:, :, lo:lo + H, lo:lo + W])
