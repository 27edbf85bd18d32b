"""Importance-guided joint compression of a single layer.

A unit's importance blends its own information loss with the average loss of
every unit still remaining *after* its removal:

    P_o = I_o + gamma / |U_o| * sum_{i in U_o} I_{i | o}

where U_o are the units removable from the candidate state (|U_o| = |U| - 1
except when a channel removal collapses the factorization rank).

:func:`importance_bruteforce` evaluates that double loop literally;
:func:`importance_fast` collapses the inner sum into four fused reductions
over the candidate approximation (plus one spectrum reduction), which is
algebraically identical and turns an O(|U|^2) scan into O(|U|) per round.
:func:`compress_layer` removes the lowest-importance units in small batches
until the layer's parameter-reduction rate reaches its target, falling back to
pure channel pruning when pruning alone already satisfies the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    CHANNEL,
    SINGULAR_VALUE,
    ApproxState,
    CompressedLayer,
    Unit,
    apply_unit,
    matricize,
    prune_channel,
    realize,
    state_rate,
)
from .errors import DataError, NumericalError
from .sensitivity import unit_information_loss

#: Tie-breaks in removal order: channels before singular values, then index.
_KIND_ORDER = {CHANNEL: 0, SINGULAR_VALUE: 1}


@dataclass(frozen=True)
class UnitImportance:
    """A unit together with its importance score (lower = remove first)."""

    unit: Unit
    score: float


@dataclass(frozen=True)
class HeuristicConfig:
    """Knobs for :func:`compress_layer`.

    ``interval_fraction`` sizes the removal batch: T = max(1,
    floor(interval_fraction * (c + r))) units are removed per scoring round.
    ``pruning_only`` restricts candidates to channels, ``decompose_only`` to
    singular values.
    """

    target_rate: float
    gamma: float = 0.5
    interval_fraction: float = 0.01
    use_fast_metric: bool = True
    pruning_only: bool = False
    decompose_only: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.target_rate < 1.0:
            raise DataError(f"target rate must lie in (0, 1), got {self.target_rate}")
        if self.gamma < 0.0:
            raise DataError(f"gamma must be non-negative, got {self.gamma}")
        if not 0.0 < self.interval_fraction <= 1.0:
            raise DataError(
                f"interval fraction must lie in (0, 1], got {self.interval_fraction}"
            )
        if self.pruning_only and self.decompose_only:
            raise DataError("pruning_only and decompose_only are mutually exclusive")

    def batch_size(self, c: int, r: int) -> int:
        return max(1, math.floor(self.interval_fraction * (c + r)))


def eligible_units(state: ApproxState) -> list[Unit]:
    """Units removable from ``state``: unpruned channels and retained sigmas."""
    units = [Unit(CHANNEL, i) for i in range(state.c) if i not in state.pruned_channels]
    units += [Unit(SINGULAR_VALUE, j) for j in state.retained_positions()]
    return units


def _validate_candidate(state: ApproxState, g: np.ndarray, o: Unit) -> None:
    units = eligible_units(state)
    if o not in units:
        raise DataError(f"unit {o} is not removable in this state")
    if len(units) < 2:
        raise DataError("importance is undefined on a singleton unit set")
    if g.shape != state.approx.shape:
        raise DataError(f"gradient shape {g.shape} does not match weights")


def importance_bruteforce(
    state: ApproxState, w_orig: np.ndarray, g: np.ndarray, o: Unit, gamma: float
) -> float:
    """Literal double-loop importance of removing ``o`` from ``state``.

    The candidate state is materialized, every unit still removable from it is
    applied on top, and the conditioned losses against ``w_orig`` are
    averaged. A candidate with no remaining units scores by its own loss.
    """
    _validate_candidate(state, g, o)
    cand = apply_unit(state, o)
    own = kernels.sq_taylor_loss(g, cand.approx, w_orig)
    remaining = eligible_units(cand)
    if not remaining:
        return own

    total = 0.0
    for other in remaining:
        if other.kind == CHANNEL:
            follow = cand.approx.copy()
            follow[:, other.index] = 0.0
        else:
            delta = cand.s[other.index] * np.outer(cand.u[:, other.index], cand.vt[other.index])
            follow = cand.approx - delta.reshape(cand.approx.shape)
        total += kernels.sq_taylor_loss(g, follow, w_orig)
    return own + gamma * total / len(remaining)


def importance_fast(
    state: ApproxState, w_orig: np.ndarray, g: np.ndarray, o: Unit, gamma: float
) -> float:
    """Closed-form importance, algebraically equal to the brute-force scan.

    Expanding each conditioned loss around the candidate approximation W_o
    turns the double loop into

        (1 + gamma) * A - gamma/|U_o| * (4 B - C - D)

    with |U_o| the number of units remaining after the removal,
    A = sum((G (W_o - W))^2), B = sum(G^2 (W_o - W) W_o), C = sum((G W_o)^2),
    and D = sum(G^2 phi(U^2 S^2 V^T^2)) summing the squared rank-one
    components of the candidate's factorization. The sum over remaining
    channels telescopes against W_o because pruned columns are exactly zero;
    the sum over remaining singular values telescopes against the candidate's
    own reconstruction, leaving only sub-threshold residue ~1e-10 * sigma_max.
    """
    _validate_candidate(state, g, o)
    cand = apply_unit(state, o)
    term_a, term_b, term_c = kernels.metric_terms(g, cand.approx, w_orig)
    denom = len(eligible_units(cand))
    if denom == 0:
        return term_a

    g2 = matricize(g) ** 2
    # D = sum_j s_j^2 * sum_{a,b} g2[a,b] u[a,j]^2 vt[j,b]^2, batched via BLAS.
    proj = g2 @ (cand.vt**2).T
    term_d = float(np.einsum("aj,j,aj->", cand.u**2, cand.s**2, proj))

    return (1.0 + gamma) * term_a - gamma * (4.0 * term_b - term_c - term_d) / denom


def score_units(
    state: ApproxState,
    g: np.ndarray,
    gamma: float,
    units: list[Unit] | None = None,
    use_fast_metric: bool = True,
) -> list[UnitImportance]:
    """Score units (default: all eligible) in deterministic removal order.

    Sorted ascending by (score, channel-before-singular-value, index). When
    only one unit remains the averaging term of the importance has no peers
    and is defined as zero, so the unit scores by its own loss.
    """
    if units is None:
        units = eligible_units(state)
    singleton = len(eligible_units(state)) < 2
    scorer = importance_fast if use_fast_metric else importance_bruteforce
    scored = []
    for unit in units:
        if singleton:
            score = unit_information_loss(state, g, unit)
        else:
            score = scorer(state, state.original, g, unit, gamma)
        scored.append(UnitImportance(unit=unit, score=score))
    scored.sort(key=lambda ui: (ui.score, _KIND_ORDER[ui.unit.kind], ui.unit.index))
    return scored


def _removal_candidates(state: ApproxState, cfg: HeuristicConfig) -> list[Unit]:
    """Eligible units minus those whose removal would be unrealizable."""
    units = []
    unpruned = state.c - state.t1
    retained_rank = state.r - state.t2
    for unit in eligible_units(state):
        if unit.kind == CHANNEL:
            if cfg.decompose_only or unpruned <= 1:
                continue
        else:
            if cfg.pruning_only or retained_rank <= 1:
                continue
        units.append(unit)
    return units


def compress_layer(
    w: np.ndarray,
    g: np.ndarray,
    cfg: HeuristicConfig,
    source_layer: str = "",
) -> CompressedLayer:
    """Compress one layer to (at least) its target parameter-reduction rate.

    Rounds of scoring remove the T least-important units one at a time; after
    every single removal the rate check runs first, then the pruning-fallback
    check — if the pruned fraction t1/c alone meets the target, the layer is
    rebuilt from the original weights with only the channel prunings applied
    (cheaper storage, no factorization).
    """
    state = ApproxState.from_weights(w)
    if g.shape != state.approx.shape:
        raise DataError(f"gradient shape {g.shape} does not match weights {state.approx.shape}")
    if not np.all(np.isfinite(g)):
        raise DataError("gradients contain non-finite values")
    batch = cfg.batch_size(state.c, state.r)

    while True:
        candidates = _removal_candidates(state, cfg)
        if not candidates:
            raise NumericalError(
                f"target rate {cfg.target_rate} is unreachable for layer "
                f"{source_layer or '<unnamed>'}: no removable units remain "
                f"(rate reached {state_rate(state):.4f})"
            )
        scored = score_units(
            state, g, cfg.gamma, units=candidates, use_fast_metric=cfg.use_fast_metric
        )

        for ranked in scored[:batch]:
            unit = ranked.unit
            # Re-check realizability: earlier removals in this round may have
            # exhausted the unit's kind.
            if unit.kind == CHANNEL and state.c - state.t1 <= 1:
                continue
            if unit.kind == SINGULAR_VALUE and state.r - state.t2 <= 1:
                continue
            state = apply_unit(state, unit)
            if state_rate(state) >= cfg.target_rate:
                return realize(state, source_layer)
            if state.t1 / state.c >= cfg.target_rate:
                return realize(_pruning_only_rebuild(state), source_layer)


def _pruning_only_rebuild(state: ApproxState) -> ApproxState:
    """Fresh state from the original weights with only the prunings applied."""
    rebuilt = ApproxState.from_weights(state.original)
    for i in sorted(state.pruned_channels):
        rebuilt = prune_channel(rebuilt, i)
    return rebuilt
