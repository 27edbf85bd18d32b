"""Progressive-removal curves and the exponential loss model.

The curve builder is checked against from-scratch recomputation of every
recorded point, and the fitter against synthetic data with known
parameters.
"""

from __future__ import annotations

import numpy as np
import pytest

from convsqueeze.core import (
    CHANNEL,
    SINGULAR_VALUE,
    ApproxState,
    Unit,
    apply_unit,
    state_rate,
)
from convsqueeze.errors import DataError, NumericalError
from convsqueeze.sensitivity import (
    FIT_LOSS_FLOOR,
    build_curve,
    build_curve_trace,
    fit_exponential,
    sensitivity_curve,
    unit_information_loss,
)

from conftest import random_layer


class TestUnitInformationLoss:
    def test_matches_direct_computation(self, rng):
        """Loss of one removal equals sum((g*(W_after - W))^2) by hand."""
        for _ in range(30):
            w, g = random_layer(rng, 5, 4, 3)
            state = ApproxState.from_weights(w)
            unit = (
                Unit(CHANNEL, int(rng.integers(0, 4)))
                if rng.random() < 0.5
                else Unit(SINGULAR_VALUE, int(rng.integers(0, state.r)))
            )
            after = apply_unit(state, unit)
            expected = float(np.sum((g * (after.approx - w)) ** 2))
            got = unit_information_loss(state, g, unit)
            assert got == pytest.approx(expected, rel=1e-10)

    def test_channel_loss_closed_form(self, rng):
        """Pruning channel i from a fresh state loses sum((g_i * w_i)^2)."""
        w, g = random_layer(rng, 5, 4, 3)
        state = ApproxState.from_weights(w)
        got = unit_information_loss(state, g, Unit(CHANNEL, 2))
        assert got == pytest.approx(float(np.sum((g[:, 2] * w[:, 2]) ** 2)), rel=1e-9)

    def test_removed_unit_rejected(self, rng):
        w, g = random_layer(rng, 4, 4, 3)
        state = apply_unit(ApproxState.from_weights(w), Unit(CHANNEL, 0))
        with pytest.raises(DataError):
            unit_information_loss(state, g, Unit(CHANNEL, 0))


class TestBuildCurve:
    def test_terminal_loss_is_one(self, rng):
        """The last point removes everything, so I == 1 by construction."""
        for _ in range(50):
            n = int(rng.integers(2, 7))
            c = int(rng.integers(2, 7))
            k = int(rng.choice([1, 3]))
            w, g = random_layer(rng, n, c, k)
            points = build_curve(w, g)
            assert points[-1][1] == pytest.approx(1.0, abs=1e-6)

    def test_point_count_is_unit_count(self, rng):
        w, g = random_layer(rng, 4, 5, 3)
        state = ApproxState.from_weights(w)
        points = build_curve(w, g)
        assert len(points) == state.c + state.r

    def test_points_match_fresh_replay(self, rng):
        """Every recorded (R, I) agrees with an independent replay."""
        for _ in range(10):
            w, g = random_layer(rng, 5, 4, 3)
            points, order = build_curve_trace(w, g)
            normalizer = float(np.sum((g * w) ** 2))
            state = ApproxState.from_weights(w)
            for (rate, loss), unit in zip(points, order):
                state = apply_unit(state, unit)
                want_loss = float(np.sum((g * (state.approx - w)) ** 2)) / normalizer
                assert loss == pytest.approx(want_loss, abs=1e-9)
                assert rate == pytest.approx(state_rate(state), abs=1e-12)

    def test_rates_nondecreasing_within_branch(self, rng):
        """After the first decomposition step the rate grows monotonically."""
        w, g = random_layer(rng, 5, 5, 3)
        points, order = build_curve_trace(w, g)
        seen_sv = False
        prev = None
        for (rate, _), unit in zip(points, order):
            if unit.kind == SINGULAR_VALUE:
                seen_sv = True
            if seen_sv and prev is not None:
                assert rate >= prev - 1e-12
            prev = rate

    def test_removal_order_sorted_by_initial_loss(self, rng):
        w, g = random_layer(rng, 4, 4, 3)
        state = ApproxState.from_weights(w)
        _, order = build_curve_trace(w, g)
        losses = [unit_information_loss(state, g, u) for u in order]
        assert losses == sorted(losses)

    def test_zero_normalizer_rejected(self):
        w = np.zeros((3, 3, 3, 3))
        g = np.ones((3, 3, 3, 3))
        with pytest.raises(NumericalError):
            build_curve(w, g)

    def test_gradient_shape_mismatch_rejected(self, rng):
        w, _ = random_layer(rng, 3, 3, 3)
        with pytest.raises(DataError):
            build_curve(w, np.ones((3, 3, 2, 2)))


class TestFitExponential:
    def test_recovers_noiseless_parameters(self, rng):
        """An exact a*exp(b*R) curve is recovered with R^2 ~ 1."""
        for _ in range(20):
            a = float(10 ** rng.uniform(-6, -1))
            b = float(rng.uniform(1.0, 12.0))
            rates = np.linspace(0.05, 0.95, 15)
            points = [(float(r), float(a * np.exp(b * r))) for r in rates]
            a_hat, b_hat, r2 = fit_exponential(points)
            assert a_hat == pytest.approx(a, rel=1e-9)
            assert b_hat == pytest.approx(b, rel=1e-9)
            assert r2 >= 1.0 - 1e-9

    def test_noisy_recovery_median_error(self, rng):
        """Additive noise (sigma=0.005) keeps median b error under 10%."""
        a, b = 1e-3, 8.0
        errors = []
        for _ in range(100):
            rates = np.linspace(0.05, 0.95, 25)
            clean = a * np.exp(b * rates)
            noisy = clean + rng.normal(0.0, 0.005, size=rates.size)
            points = [
                (float(r), float(i)) for r, i in zip(rates, noisy)
            ]
            _, b_hat, _ = fit_exponential(points)
            errors.append(abs(b_hat - b) / b)
        assert float(np.median(errors)) < 0.10

    def test_floor_points_excluded(self):
        points = [(0.0, 0.0), (0.1, 1e-15)] + [
            (0.2 + 0.1 * i, 1e-3 * np.exp(5.0 * (0.2 + 0.1 * i))) for i in range(6)
        ]
        a_hat, b_hat, _ = fit_exponential(points)
        assert a_hat == pytest.approx(1e-3, rel=1e-9)
        assert b_hat == pytest.approx(5.0, rel=1e-9)

    def test_too_few_usable_points_rejected(self):
        with pytest.raises(NumericalError):
            fit_exponential([(0.1, 1e-3), (0.2, 2e-3)])
        with pytest.raises(NumericalError):
            fit_exponential([(0.1, 0.0), (0.2, 0.0), (0.3, 1e-3), (0.4, 2e-3)])

    def test_degenerate_rate_spread_rejected(self):
        points = [(0.5, 1e-3), (0.5, 2e-3), (0.5, 3e-3)]
        with pytest.raises(NumericalError):
            fit_exponential(points)

    def test_r_squared_on_original_scale(self):
        """R^2 uses residuals of I, not log I.

        For data that is exactly exponential plus a single outlier at
        small I, the log fit is pulled hard but original-scale R^2 stays
        defined and below 1.
        """
        points = [(0.1 * i, 1e-3 * np.exp(6.0 * 0.1 * i)) for i in range(1, 9)]
        points.append((0.05, 1e-9))
        _, _, r2 = fit_exponential(points)
        assert r2 < 1.0 - 1e-9


class TestSensitivityCurve:
    def test_bundles_points_and_fit(self, rng):
        w, g = random_layer(rng, 6, 6, 3)
        curve = sensitivity_curve(w, g)
        assert len(curve.points) == 6 + ApproxState.from_weights(w).r
        assert curve.a > 0
        # Progressive removal of least-important-first units produces an
        # increasing loss profile, so the fitted exponent is positive.
        assert curve.b > 0
        assert 0.0 <= curve.r_squared <= 1.0

    def test_curve_deterministic(self, rng):
        w, g = random_layer(rng, 5, 5, 3)
        c1 = sensitivity_curve(w, g)
        c2 = sensitivity_curve(w, g)
        assert c1.points == c2.points
        assert (c1.a, c1.b, c1.r_squared) == (c2.a, c2.b, c2.r_squared)
