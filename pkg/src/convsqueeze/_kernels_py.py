"""Pure-NumPy implementations of the hot numeric kernels.

These mirror ``convsqueeze._kernels`` (the compiled extension) exactly; the
dispatcher in :mod:`convsqueeze.kernels` picks whichever is available. All
functions take contiguous float64 arrays — 1-D for the reductions, the natural
layout for the convolution.
"""
from __future__ import annotations

import numpy as np


def sq_taylor_loss(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squares of ``g * (a - b)`` over flat float64 arrays."""
    d = g * (a - b)
    return float(np.dot(d, d))


def metric_terms(g: np.ndarray, wo: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Fused reductions used by the fast importance metric.

    Returns ``(A, B, C)`` with
      A = sum((g * (wo - w))**2)
      B = sum(g**2 * (wo - w) * wo)
      C = sum((g * wo)**2)
    """
    gd = g * (wo - w)
    gw = g * wo
    return float(np.dot(gd, gd)), float(np.dot(gd, gw)), float(np.dot(gw, gw))


def direct_conv(w: np.ndarray, x: np.ndarray, stride: int) -> np.ndarray:
    """Valid-padding 2-D convolution (no flip), NCHW single image.

    ``w`` is (n, c, k, k), ``x`` is (c, h_in, w_in); returns (n, h_out, w_out)
    with h_out = (h_in - k) // stride + 1.
    """
    k = w.shape[2]
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    return np.einsum("nckl,chwkl->nhw", w, windows, optimize=True)
