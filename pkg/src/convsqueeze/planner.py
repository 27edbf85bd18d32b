"""Whole-network rate allocation from fitted sensitivity curves.

Given per-layer exponential models ``I^l = a_l * exp(b_l * R_l)`` and FLOP
counts ``F_l``, the planner finds the common information-loss level ``I_bar``
at which every layer operates, such that the FLOP-weighted rates hit the
network target:

    sum_l F_l * R_l(I_bar) = C * F_total,
    R_l = (1 / b_l) * ln(I_bar / (a_l * b_l))

The level is found by gradient descent on the squared residual

    J(x) = (sum_l (F_l / b_l) * ln(x / (a_l b_l)) - C * F_total)^2

whose gradient is ``2 h(x) * W / x`` with ``W = sum_l F_l / b_l``. By default
the step is rescaled every iteration to ``x^2 / (4 W^2)`` and the update is
floored at a halving of ``x`` — the residual is monotone in ln(x), so this
safeguarded descent converges from any positive start. Passing ``eta``
explicitly disables the safeguards and applies the raw update verbatim.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError, PlannerError

#: Convergence test on the squared residual of sum(F_l R_l) - C*F.
DEFAULT_STOP_THRESHOLD = 1e4

#: Starting information-loss level for the descent.
DEFAULT_I_BAR0 = 0.1

#: Planned rates are clamped to [0, DEFAULT_R_MAX] after the solve.
DEFAULT_R_MAX = 0.95

DEFAULT_MAX_ITERATIONS = 1_000_000


@dataclass(frozen=True)
class RatePlan:
    """Joint solve result; tuples follow the input layer order."""

    rates: tuple[float, ...]
    rates_raw: tuple[float, ...]
    clamped: tuple[bool, ...]
    i_bar: float
    iterations: int
    target_flops_sum: float
    achieved_flops_sum_raw: float
    achieved_flops_sum: float


def rate_from_sensitivity(a: float, b: float, i_bar: float) -> float:
    """Per-layer rate at loss level ``i_bar``: (1 / b) * ln(i_bar / (a * b))."""
    if a <= 0.0 or b <= 0.0:
        raise DataError(f"exponential model needs a > 0 and b > 0, got a={a}, b={b}")
    if i_bar <= 0.0:
        raise DataError(f"information-loss level must be positive, got {i_bar}")
    return math.log(i_bar / (a * b)) / b


def plan_rates(
    models: Sequence[tuple[float, float]],
    flops: Sequence[int],
    total_flops: int,
    target: float,
    eta: float | None = None,
    stop_threshold: float = DEFAULT_STOP_THRESHOLD,
    i_bar0: float = DEFAULT_I_BAR0,
    r_max: float = DEFAULT_R_MAX,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> RatePlan:
    """Solve for the shared loss level and per-layer rates.

    ``models`` holds (a, b) per layer, ``flops`` the matching F_l, and
    ``total_flops`` the F of the whole network (it may exceed ``sum(flops)``
    when some layers are excluded from the joint solve and carry fixed rates).
    ``target`` is the desired overall FLOP-reduction fraction C applied to
    ``total_flops``. Raw (un-clamped) rates satisfy
    ``|sum_l F_l * rates_raw_l - target * total_flops| <= sqrt(stop_threshold)``.
    """
    if len(models) != len(flops):
        raise DataError("models and flops must align")
    if not models:
        raise DataError("no layers to plan")
    if not 0.0 < target < 1.0:
        raise DataError(f"target rate must lie in (0, 1), got {target}")
    if total_flops <= 0 or any(f <= 0 for f in flops):
        raise DataError("FLOP counts must be positive")
    for a, b in models:
        if a <= 0.0 or b <= 0.0:
            raise DataError(
                f"every fitted model needs a > 0 and b > 0 (got a={a}, b={b}); "
                "exclude unusable fits before planning"
            )
    if i_bar0 <= 0.0:
        raise DataError("starting loss level must be positive")
    if stop_threshold <= 0.0:
        raise DataError("stop threshold must be positive")
    if not 0.0 < r_max <= 1.0:
        raise DataError(f"r_max must lie in (0, 1], got {r_max}")
    if eta is not None and eta <= 0.0:
        raise DataError("eta must be positive")

    f_arr = np.array(flops, dtype=np.float64)
    a_arr = np.array([m[0] for m in models])
    b_arr = np.array([m[1] for m in models])
    weights = f_arr / b_arr
    w_sum = float(weights.sum())
    log_const = float(np.dot(weights, np.log(a_arr * b_arr)))
    target_sum = target * float(total_flops)

    def residual(x: float) -> float:
        # h(x) = sum_l (F_l / b_l) ln(x / (a_l b_l)) - C * F_total
        return w_sum * math.log(x) - log_const - target_sum

    x = float(i_bar0)
    iterations = 0
    h = residual(x)
    while h * h > stop_threshold:
        if iterations >= max_iterations:
            raise PlannerError(
                f"rate solve did not converge within {max_iterations} iterations "
                f"(residual {h:.6g})",
                i_bar=x,
                iterations=iterations,
                residual=h,
            )
        grad = 2.0 * h * w_sum / x
        if eta is not None:
            x_new = x - eta * grad
        else:
            x_new = x - (x * x / (4.0 * w_sum * w_sum)) * grad
            x_new = max(x_new, 0.5 * x)
        if not math.isfinite(x_new):
            raise PlannerError(
                "rate solve diverged (non-finite loss level); try a smaller --eta",
                i_bar=x,
                iterations=iterations + 1,
                residual=h,
            )
        # The level is a positive quantity; project back into the domain.
        x = max(x_new, 1e-12)
        iterations += 1
        h = residual(x)

    rates_raw = tuple(rate_from_sensitivity(a, b, x) for a, b in models)
    rates = tuple(min(max(r, 0.0), r_max) for r in rates_raw)
    clamped = tuple(r != raw for r, raw in zip(rates, rates_raw))
    return RatePlan(
        rates=rates,
        rates_raw=rates_raw,
        clamped=clamped,
        i_bar=x,
        iterations=iterations,
        target_flops_sum=target_sum,
        achieved_flops_sum_raw=float(np.dot(f_arr, rates_raw)),
        achieved_flops_sum=float(np.dot(f_arr, rates)),
    )
