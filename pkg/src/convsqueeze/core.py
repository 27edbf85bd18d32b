"""Compression primitives for 4-D convolution weight tensors.

A layer's weights ``W`` of shape (n, c, k, k) are compressed by removing
*units* of two kinds:

* an **input channel** ``i`` — the slice ``W[:, i]`` is zeroed and later
  dropped from storage;
* a **singular value** ``sigma_j`` of the matricized weights (n x c*k*k) —
  the rank-one component ``sigma_j * u_j v_j^T`` is subtracted from the
  approximation.

:class:`ApproxState` tracks the running approximation, its current
factorization and the removal counts (t1 pruned channels, t2 removed singular
values); :func:`realize` converts a state into the compact stored form — a
slimmed dense tensor when only channels were removed, or a (k x k, 1 x 1)
factor pair otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, NumericalError

CHANNEL = "channel"
SINGULAR_VALUE = "singular_value"

#: Singular values below this fraction of sigma_max count as structural zeros
#: (rank deficiency), both for the current-rank count and unit eligibility.
STRUCTURAL_ZERO_RTOL = 1e-10


class Unit(NamedTuple):
    """A removable unit: an input channel or a singular-value position."""

    kind: str
    index: int


def matricize(w: np.ndarray) -> np.ndarray:
    """Reshape (n, c, k, k) weights to the (n, c*k*k) matrix.

    Row-major flattening: columns ``j*k*k .. (j+1)*k*k - 1`` hold input
    channel ``j``, so zeroing a channel slice zeroes a contiguous column block.
    """
    _check_weight_tensor(w)
    n = w.shape[0]
    return w.reshape(n, -1)


def dematricize(m: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of :func:`matricize` for the given 4-D shape."""
    n, c, kh, kw = shape
    if m.ndim != 2 or m.shape != (n, c * kh * kw):
        raise DataError(f"matrix {m.shape} does not match tensor shape {shape}")
    return m.reshape(shape)


def _check_weight_tensor(w: np.ndarray) -> None:
    if w.ndim != 4:
        raise DataError(f"weights must be 4-D (n, c, k, k), got {w.ndim}-D")
    if w.shape[2] != w.shape[3]:
        raise DataError(f"only square kernels are supported, got {w.shape[2:]}")
    if min(w.shape) < 1:
        raise DataError(f"degenerate weight shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("weights contain non-finite values")


@dataclass(frozen=True)
class ApproxState:
    """Immutable snapshot of a partially compressed layer.

    ``approx`` is the running approximation W-bar; ``original`` the untouched
    reference W used by the loss metrics. ``u, s, vt`` hold the thin SVD of
    ``matricize(approx)`` as of the last recompute, with explicitly removed
    positions zeroed in ``s`` and listed in ``removed_positions`` (the marker
    set resets whenever a channel prune triggers a fresh SVD).
    """

    original: np.ndarray
    approx: np.ndarray
    pruned_channels: frozenset[int]
    removed_sv_count: int
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    removed_positions: frozenset[int]

    @classmethod
    def from_weights(cls, w: np.ndarray) -> "ApproxState":
        _check_weight_tensor(w)
        w64 = np.array(w, dtype=np.float64)
        u, s, vt = np.linalg.svd(matricize(w64), full_matrices=False)
        return cls(
            original=w64,
            approx=w64.copy(),
            pruned_channels=frozenset(),
            removed_sv_count=0,
            u=u,
            s=s,
            vt=vt,
            removed_positions=frozenset(),
        )

    # -- shape accessors -------------------------------------------------
    @property
    def n(self) -> int:
        return self.approx.shape[0]

    @property
    def c(self) -> int:
        return self.approx.shape[1]

    @property
    def k(self) -> int:
        return self.approx.shape[2]

    @property
    def r(self) -> int:
        """Full spectrum length min(n, c*k*k); constant across operations."""
        return self.s.shape[0]

    @property
    def t1(self) -> int:
        return len(self.pruned_channels)

    @property
    def t2(self) -> int:
        return self.removed_sv_count

    @property
    def sigma_max(self) -> float:
        return float(self.s.max(initial=0.0))

    @property
    def r_current(self) -> int:
        """Number of singular values above the structural-zero threshold."""
        return int(np.count_nonzero(self.s > STRUCTURAL_ZERO_RTOL * self.sigma_max))

    def retained_positions(self) -> list[int]:
        """Positions still carrying signal: above threshold, not removed."""
        tol = STRUCTURAL_ZERO_RTOL * self.sigma_max
        return [
            j
            for j in range(self.r)
            if self.s[j] > tol and j not in self.removed_positions
        ]


def prune_channel(state: ApproxState, i: int) -> ApproxState:
    """Zero input channel ``i`` of the approximation and refresh the SVD."""
    if not 0 <= i < state.c:
        raise DataError(f"channel {i} out of range for c={state.c}")
    if i in state.pruned_channels:
        raise DataError(f"channel {i} is already pruned")
    approx = state.approx.copy()
    approx[:, i] = 0.0
    u, s, vt = np.linalg.svd(matricize(approx), full_matrices=False)
    return ApproxState(
        original=state.original,
        approx=approx,
        pruned_channels=state.pruned_channels | {i},
        removed_sv_count=state.removed_sv_count,
        u=u,
        s=s,
        vt=vt,
        removed_positions=frozenset(),
    )


def remove_singular_value(state: ApproxState, j: int) -> ApproxState:
    """Subtract the rank-one component at spectrum position ``j``.

    The approximation changes by exactly ``s[j]`` in Frobenius norm. Pruned
    channel columns are re-zeroed afterwards so they stay exactly zero.
    Positions already removed since the last factor recompute are rejected.
    """
    if not 0 <= j < state.r:
        raise DataError(f"singular value {j} out of range for r={state.r}")
    if j in state.removed_positions:
        raise DataError(f"singular value {j} was already removed")
    approx_m = matricize(state.approx) - state.s[j] * np.outer(state.u[:, j], state.vt[j])
    approx = dematricize(approx_m, state.approx.shape)
    if state.pruned_channels:
        approx[:, sorted(state.pruned_channels)] = 0.0
    s = state.s.copy()
    s[j] = 0.0
    return ApproxState(
        original=state.original,
        approx=approx,
        pruned_channels=state.pruned_channels,
        removed_sv_count=state.removed_sv_count + 1,
        u=state.u,
        s=s,
        vt=state.vt,
        removed_positions=state.removed_positions | {j},
    )


def apply_unit(state: ApproxState, unit: Unit) -> ApproxState:
    """Dispatch a unit removal to the matching operation."""
    if unit.kind == CHANNEL:
        return prune_channel(state, unit.index)
    if unit.kind == SINGULAR_VALUE:
        return remove_singular_value(state, unit.index)
    raise DataError(f"unknown unit kind {unit.kind!r}")


def compression_rate(n: int, c: int, k: int, t1: int, t2: int, r: int) -> float:
    """Parameter-reduction rate after pruning t1 channels / removing t2 sigmas.

    With the factorized form the layer stores (r - t2) * ((c - t1) * k*k + n)
    parameters against n * c * k*k originally; with t2 == 0 no factorization is
    stored and the rate is the pruned fraction t1 / c.
    """
    if not (0 <= t1 <= c and 0 <= t2 <= r):
        raise DataError(f"removal counts t1={t1}, t2={t2} out of range (c={c}, r={r})")
    if min(n, c, k, r) < 1:
        raise DataError("layer dimensions must be positive")
    if t2 == 0:
        return t1 / c
    kept = (r - t2) * ((c - t1) * k * k + n)
    return 1.0 - kept / (n * c * k * k)


def state_rate(state: ApproxState) -> float:
    """Eq.-style rate of the state's removal counts."""
    return compression_rate(state.n, state.c, state.k, state.t1, state.t2, state.r)


@dataclass(frozen=True)
class CompressedLayer:
    """Realized storage for one layer.

    ``variant`` is ``"pruned"`` (dense ``weights`` of shape
    (n, len(kept_channels), k, k)) or ``"decomposed"`` (``w1`` of shape
    (r_bar, len(kept_channels), k, k) followed by the 1x1 ``w2`` of shape
    (n, r_bar, 1, 1)). ``kept_channels`` are ascending indices into the
    original input channels.
    """

    source_layer: str
    variant: str
    kept_channels: tuple[int, ...]
    weights: np.ndarray | None = None
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.variant == "pruned":
            if self.weights is None or self.w1 is not None or self.w2 is not None:
                raise DataError("pruned variant stores exactly one dense tensor")
            if self.weights.shape[1] != len(self.kept_channels):
                raise DataError("kept-channel list does not match the weights")
        elif self.variant == "decomposed":
            if self.weights is not None or self.w1 is None or self.w2 is None:
                raise DataError("decomposed variant stores exactly two factors")
            if self.w1.shape[1] != len(self.kept_channels):
                raise DataError("kept-channel list does not match w1")
            if self.w2.shape[2:] != (1, 1) or self.w2.shape[1] != self.w1.shape[0]:
                raise DataError("w2 must be 1x1 with input width r_bar")
        else:
            raise DataError(f"unknown variant {self.variant!r}")
        if list(self.kept_channels) != sorted(set(self.kept_channels)):
            raise DataError("kept_channels must be strictly ascending")

    @property
    def n(self) -> int:
        return self.weights.shape[0] if self.variant == "pruned" else self.w2.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[2] if self.variant == "pruned" else self.w1.shape[2]

    @property
    def r_bar(self) -> int | None:
        return None if self.variant == "pruned" else self.w1.shape[0]

    def param_count(self) -> int:
        if self.variant == "pruned":
            return int(self.weights.size)
        return int(self.w1.size + self.w2.size)

    def expand(self, c: int) -> np.ndarray:
        """Reconstruct the full (n, c, k, k) approximation this layer stores."""
        out = np.zeros((self.n, c, self.k, self.k))
        kept = list(self.kept_channels)
        if self.variant == "pruned":
            out[:, kept] = self.weights
        else:
            r_bar = self.w1.shape[0]
            w1m = self.w1.reshape(r_bar, -1)
            w2m = self.w2.reshape(self.n, r_bar)
            out[:, kept] = (w2m @ w1m).reshape(self.n, len(kept), self.k, self.k)
        return out


def realize(state: ApproxState, source_layer: str = "") -> CompressedLayer:
    """Convert a state into compact storage.

    With ``t2 == 0`` the pruned channels are simply dropped from the dense
    tensor. Otherwise the factors keep the top (r - t2) spectrum positions:
    ``w1 = sqrt(S) V^T`` restricted to kept channel blocks (a k x k conv with
    r_bar filters) and ``w2 = U sqrt(S)`` (a 1x1 conv back to n outputs).
    """
    kept = sorted(set(range(state.c)) - state.pruned_channels)
    if not kept:
        raise NumericalError("all input channels pruned; layer is unrealizable")
    if state.t2 == 0:
        return CompressedLayer(
            source_layer=source_layer,
            variant="pruned",
            kept_channels=tuple(kept),
            weights=state.approx[:, kept].copy(),
        )
    r_bar = state.r - state.t2
    if r_bar < 1 or state.r_current < 1:
        raise NumericalError("no singular values retained; layer is unrealizable")
    order = np.argsort(-state.s, kind="stable")[:r_bar]
    positions = np.sort(order)
    sqrt_s = np.sqrt(state.s[positions])
    w1_rows = sqrt_s[:, None] * state.vt[positions]
    w1 = w1_rows.reshape(r_bar, state.c, state.k, state.k)[:, kept].copy()
    w2 = (state.u[:, positions] * sqrt_s[None, :]).reshape(state.n, r_bar, 1, 1).copy()
    return CompressedLayer(
        source_layer=source_layer,
        variant="decomposed",
        kept_channels=tuple(kept),
        w1=w1,
        w2=w2,
    )


# -- cost model ----------------------------------------------------------


def layer_flops(n: int, c: int, k: int, h_out: int, w_out: int) -> int:
    """Multiply count of the dense layer: n * c * k*k per output position."""
    if min(n, c, k, h_out, w_out) < 1:
        raise DataError("layer dimensions must be positive")
    return n * c * k * k * h_out * w_out


def compressed_flops(layer: CompressedLayer, h_out: int, w_out: int) -> int:
    """Multiply count of the realized layer at the given output resolution."""
    if min(h_out, w_out) < 1:
        raise DataError("output resolution must be positive")
    c_kept = len(layer.kept_channels)
    if layer.variant == "pruned":
        return layer.n * c_kept * layer.k * layer.k * h_out * w_out
    r_bar = layer.w1.shape[0]
    return h_out * w_out * (r_bar * c_kept * layer.k * layer.k + layer.n * r_bar)


# -- reference execution --------------------------------------------------


def reference_conv(
    weights: np.ndarray | CompressedLayer, x: np.ndarray, stride: int = 1
) -> np.ndarray:
    """Run a layer (dense tensor or realized compressed form) on one image.

    ``x`` is (c, h_in, w_in) with the *original* channel count; compressed
    layers first select their kept channels. Valid padding throughout; the
    decomposed variant applies the k x k factor at ``stride`` then the 1x1
    factor at stride 1, which matches the dense output exactly in exact
    arithmetic.
    """
    if x.ndim != 3:
        raise DataError(f"input must be (c, h, w), got {x.ndim}-D")
    if not np.all(np.isfinite(x)):
        raise DataError("input contains non-finite values")
    if stride < 1:
        raise DataError("stride must be >= 1")

    if isinstance(weights, CompressedLayer):
        layer = weights
        if layer.kept_channels and layer.kept_channels[-1] >= x.shape[0]:
            raise DataError("kept-channel indices exceed the input channel count")
        x_sel = np.ascontiguousarray(x[list(layer.kept_channels)])
        if layer.variant == "pruned":
            return _dense_conv(layer.weights, x_sel, stride)
        mid = _dense_conv(layer.w1, x_sel, stride)
        return _dense_conv(layer.w2, mid, 1)

    _check_weight_tensor(weights)
    if weights.shape[1] != x.shape[0]:
        raise DataError(
            f"weights expect {weights.shape[1]} input channels, image has {x.shape[0]}"
        )
    return _dense_conv(weights, x, stride)


def _dense_conv(w: np.ndarray, x: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[2]
    if x.shape[1] < k or x.shape[2] < k:
        raise DataError(f"input {x.shape[1:]} smaller than the {k}x{k} kernel")
    return kernels.direct_conv(w, x, stride)
