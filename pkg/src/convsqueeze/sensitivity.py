"""Per-layer sensitivity curves: information loss as a function of rate.

Every removable unit of a layer is scored once on the untouched weights, then
removed in ascending order of that score; after each removal the normalized
information loss

    I = sum((G * (W_bar - W))**2) / sum((G * W)**2)

is recorded against the parameter-reduction rate R. The resulting curve is
summarized by a two-parameter exponential ``I = a * exp(b * R)`` fitted
log-linearly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    CHANNEL,
    SINGULAR_VALUE,
    ApproxState,
    Unit,
    apply_unit,
    state_rate,
)
from .errors import DataError, NumericalError

#: Loss values at or below this are treated as zero and excluded from the fit
#: (their logarithm would dominate the regression with pure noise).
FIT_LOSS_FLOOR = 1e-12

#: Ranking ties in the removal schedule break by kind, singular values first.
_KIND_ORDER = {SINGULAR_VALUE: 0, CHANNEL: 1}


@dataclass(frozen=True)
class SensitivityCurve:
    """Fitted curve for one layer: ``I ~ a * exp(b * R)``."""

    points: tuple[tuple[float, float], ...]
    a: float
    b: float
    r_squared: float


def unit_information_loss(state: ApproxState, g: np.ndarray, unit: Unit) -> float:
    """Loss sum((G * (f(W_bar, o) - W))**2) of removing one unit from ``state``.

    ``f`` zeroes a channel slice or subtracts one rank-one component; the
    reference ``W`` is the state's original tensor.
    """
    if g.shape != state.approx.shape:
        raise DataError(f"gradient shape {g.shape} does not match weights")
    if unit.kind == CHANNEL:
        if not 0 <= unit.index < state.c or unit.index in state.pruned_channels:
            raise DataError(f"channel {unit.index} is not removable in this state")
        candidate = state.approx.copy()
        candidate[:, unit.index] = 0.0
    elif unit.kind == SINGULAR_VALUE:
        if not 0 <= unit.index < state.r or unit.index in state.removed_positions:
            raise DataError(f"singular value {unit.index} is not removable in this state")
        delta = state.s[unit.index] * np.outer(state.u[:, unit.index], state.vt[unit.index])
        candidate = state.approx - delta.reshape(state.approx.shape)
    else:
        raise DataError(f"unknown unit kind {unit.kind!r}")
    return kernels.sq_taylor_loss(g, candidate, state.original)


def build_curve(w: np.ndarray, g: np.ndarray) -> list[tuple[float, float]]:
    """Progressive-removal curve of (rate, normalized loss) points."""
    points, _ = build_curve_trace(w, g)
    return points


def build_curve_trace(
    w: np.ndarray, g: np.ndarray
) -> tuple[list[tuple[float, float]], list[Unit]]:
    """Like :func:`build_curve`, also returning the removal order used.

    Units are ranked once on the original weights by their individual loss
    (ties: singular values before channels, then by index) and removed in that
    order. The last point always has I exactly 1: once every channel is pruned
    the approximation is identically zero, so the loss equals the normalizer.
    """
    state = ApproxState.from_weights(w)
    if g.shape != state.approx.shape:
        raise DataError(f"gradient shape {g.shape} does not match weights {state.approx.shape}")
    if not np.all(np.isfinite(g)):
        raise DataError("gradients contain non-finite values")
    normalizer = kernels.sq_weighted_norm(g, state.original)
    if normalizer <= 0.0:
        raise NumericalError("zero loss normalizer: G * W vanishes everywhere")

    units = [Unit(SINGULAR_VALUE, j) for j in range(state.r)] + [
        Unit(CHANNEL, i) for i in range(state.c)
    ]
    scored = [(unit_information_loss(state, g, u), _KIND_ORDER[u.kind], u.index, u) for u in units]
    scored.sort(key=lambda t: t[:3])

    points: list[tuple[float, float]] = []
    order: list[Unit] = []
    for _, _, _, unit in scored:
        state = apply_unit(state, unit)
        loss = kernels.sq_taylor_loss(g, state.approx, state.original)
        points.append((state_rate(state), loss / normalizer))
        order.append(unit)
    return points, order


def fit_exponential(points: list[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares fit of ``I = a * exp(b * R)`` on the log scale.

    Points with ``I <= FIT_LOSS_FLOOR`` are excluded; at least three must
    remain. Returns ``(a, b, r_squared)`` with the coefficient of
    determination computed on the original (unlogged) scale over the included
    points.
    """
    included = [(r, i) for r, i in points if i > FIT_LOSS_FLOOR]
    if len(included) < 3:
        raise NumericalError(
            f"exponential fit needs >= 3 points above {FIT_LOSS_FLOOR:g}, "
            f"got {len(included)}"
        )
    rates = np.array([r for r, _ in included])
    losses = np.array([i for _, i in included])
    if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(losses))):
        raise NumericalError("non-finite curve points")
    if np.ptp(rates) == 0.0:
        raise NumericalError("all curve points share one rate; slope is undetermined")

    design = np.column_stack([np.ones_like(rates), rates])
    coef, *_ = np.linalg.lstsq(design, np.log(losses), rcond=None)
    a = float(np.exp(coef[0]))
    b = float(coef[1])

    predicted = a * np.exp(b * rates)
    ss_res = float(np.sum((losses - predicted) ** 2))
    ss_tot = float(np.sum((losses - losses.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return a, b, r_squared


def sensitivity_curve(w: np.ndarray, g: np.ndarray) -> SensitivityCurve:
    """Build the removal curve for one layer and fit its exponential."""
    points = build_curve(w, g)
    a, b, r_squared = fit_exponential(points)
    return SensitivityCurve(points=tuple(points), a=a, b=b, r_squared=r_squared)
