"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

Set ``CONVSQUEEZE_NO_EXT=1`` to force the pure-NumPy backend (useful for
benchmarking and for debugging suspected extension issues). ``BACKEND`` names
the active implementation.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("CONVSQUEEZE_NO_EXT"):
    _impl = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "numpy"


def _flat(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def sq_taylor_loss(g: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """``sum((g * (a - b))**2)`` over arrays of identical shape."""
    return float(_impl.sq_taylor_loss(_flat(g), _flat(a), _flat(b)))


def sq_weighted_norm(g: np.ndarray, w: np.ndarray) -> float:
    """``sum((g * w)**2)``, the loss normalizer."""
    return float(_impl.sq_taylor_loss(_flat(g), _flat(w), np.zeros(w.size)))


def metric_terms(g: np.ndarray, wo: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Fused ``(A, B, C)`` reductions for the fast importance metric."""
    ta, tb, tc = _impl.metric_terms(_flat(g), _flat(wo), _flat(w))
    return float(ta), float(tb), float(tc)


def direct_conv(w: np.ndarray, x: np.ndarray, stride: int) -> np.ndarray:
    """Valid-padding NCHW convolution of one image.

    Always uses the vectorized NumPy implementation: the naive compiled
    loop benchmarks ~8x slower than the BLAS-backed einsum here (see
    ``benchmarks/bench_kernels.py``), and this helper sits outside the
    scoring hot path anyway.  The compiled variant is kept in the
    extension purely as an independent cross-check for the tests.
    """
    w64 = np.ascontiguousarray(w, dtype=np.float64)
    x64 = np.ascontiguousarray(x, dtype=np.float64)
    return np.asarray(_kernels_py.direct_conv(w64, x64, stride))
