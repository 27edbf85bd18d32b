"""Benchmark the compiled kernels against the pure-numpy fallback.

Times each kernel implementation pair (``sq_taylor_loss``,
``metric_terms``, ``direct_conv``) on representative layer shapes and
prints per-call times plus the compiled-over-numpy speedup.  The two
implementation modules are imported directly so both can be measured in
one process regardless of which backend the dispatcher picked.

Findings baked into the package: the fused reductions are what the
extension is for (2-6x on typical shapes, and they dominate candidate
scoring, which calls them O((c+r)^2) times per layer); the naive
compiled convolution loses to the BLAS-backed einsum fallback, so the
dispatcher routes ``direct_conv`` to numpy unconditionally.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from convsqueeze import _kernels_py

try:
    from convsqueeze import _kernels
except ImportError:
    _kernels = None

_CASES = [
    # (label, n, c, k, h_out, w_out)
    ("small  64x64x3", 64, 64, 3, 16, 16),
    ("medium 128x128x3", 128, 128, 3, 14, 14),
    ("large  256x256x3", 256, 256, 3, 7, 7),
]


def _time(fn, repeats: int) -> float:
    return timeit.timeit(fn, number=repeats) / repeats


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    if _kernels is None:
        print("compiled extension not importable; nothing to compare")
        return 1

    rng = np.random.default_rng(7)
    rows = []
    for label, n, c, k, h, w in _CASES:
        g = rng.standard_normal(n * c * k * k)
        a = rng.standard_normal(n * c * k * k)
        b = rng.standard_normal(n * c * k * k)
        x = np.ascontiguousarray(rng.standard_normal((c, h + k - 1, w + k - 1)))
        wt = np.ascontiguousarray(rng.standard_normal((n, c, k, k)))
        conv_reps = max(1, args.repeats // 10)

        rows.append(
            (
                f"sq_taylor_loss/{label}",
                _time(lambda: _kernels.sq_taylor_loss(g, a, b), args.repeats),
                _time(lambda: _kernels_py.sq_taylor_loss(g, a, b), args.repeats),
            )
        )
        rows.append(
            (
                f"metric_terms/{label}",
                _time(lambda: _kernels.metric_terms(g, a, b), args.repeats),
                _time(lambda: _kernels_py.metric_terms(g, a, b), args.repeats),
            )
        )
        rows.append(
            (
                f"direct_conv/{label}",
                _time(lambda: _kernels.direct_conv(wt, x, 1), conv_reps),
                _time(lambda: _kernels_py.direct_conv(wt, x, 1), conv_reps),
            )
        )

    print(f"{'kernel / case':<34} {'compiled':>12} {'numpy':>12} {'speedup':>8}")
    print("-" * 70)
    for name, tc, tn in rows:
        print(f"{name:<34} {tc * 1e6:>10.1f}us {tn * 1e6:>10.1f}us {tn / tc:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
