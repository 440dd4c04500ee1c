"""Tests for driven linear flows and the quasi-contraction test."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mjls_bounds.errors import DimensionError
from mjls_bounds.jsr_bounds import SAMPLED_LABEL
from mjls_bounds.matrix_core import matrix_exponential
from mjls_bounds.ode_flow import (
    CircleRotation,
    LinearFlow,
    PeriodicOrbit,
    TrigGenerator,
    cocycle_residual,
    dilation_probe,
    ergodic_average_criterion,
    fundamental_matrices,
    fundamental_matrix,
    liao_constants,
    log_norm_series,
    periodic_growth_rate,
    quasi_contraction_test,
    step_halving_error,
    uniform_decay_fit,
    xi_T,
)

TWO_PI = 2.0 * math.pi


def constant_flow(x: list[list[float]], period: float = 2.0) -> LinearFlow:
    return LinearFlow.create(PeriodicOrbit(period), TrigGenerator.create(x))


@pytest.fixture()
def contraction_flow() -> LinearFlow:
    """-I plus a 0.1 symmetric trigonometric perturbation on a 2 pi orbit."""
    generator = TrigGenerator.create(
        -np.eye(2),
        cos_terms=[[[0.1, 0.0], [0.0, -0.1]]],
        sin_terms=[[[0.0, 0.1], [0.1, 0.0]]],
    )
    return LinearFlow.create(PeriodicOrbit(TWO_PI), generator)


@pytest.fixture()
def trace_flow() -> LinearFlow:
    """Generator with a time-varying trace, driven by a rotation."""
    generator = TrigGenerator.create(
        [[-0.5, 1.0], [-1.0, -0.2]],
        cos_terms=[[[0.2, 0.0], [0.3, 0.1]]],
        sin_terms=[[[0.0, -0.4], [0.0, 0.3]]],
    )
    return LinearFlow.create(CircleRotation(0.3), generator)


class TestDriving:
    """Test the driving systems."""

    def test_rotation_advance(self) -> None:
        driving = CircleRotation(0.25)
        advanced = driving.advance(0.5, [0.0, 1.0, 2.0, 4.0])
        np.testing.assert_allclose(advanced, [0.5, 0.75, 0.0, 0.5])
        assert driving.period == 4.0

    def test_rotation_at_rest_has_no_period(self) -> None:
        assert CircleRotation(0.0).period is None

    def test_periodic_orbit_returns(self) -> None:
        orbit = PeriodicOrbit(3.0)
        assert float(orbit.advance(0.2, 3.0)) == pytest.approx(0.2)

    def test_periodic_orbit_rejects_zero_period(self) -> None:
        with pytest.raises(DimensionError):
            PeriodicOrbit(0.0)


class TestGenerator:
    """Test trigonometric generators."""

    def test_evaluate(self) -> None:
        generator = TrigGenerator.create(
            np.zeros((2, 2)), cos_terms=[np.eye(2)], sin_terms=[[[0.0, 1.0], [0.0, 0.0]]]
        )
        values = generator.evaluate([0.0, 0.25])
        assert values.shape == (2, 2, 2)
        np.testing.assert_allclose(values[0], np.eye(2), atol=1e-15)
        np.testing.assert_allclose(values[1], [[0.0, 1.0], [0.0, 0.0]], atol=1e-15)

    def test_unequal_term_counts_are_padded(self) -> None:
        generator = TrigGenerator.create(np.eye(2), cos_terms=[np.eye(2), np.eye(2)])
        assert generator.sin_terms.shape == (2, 2, 2)
        assert not generator.sin_terms.any()

    def test_term_dimension_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            TrigGenerator.create(np.eye(2), cos_terms=[np.eye(3)])

    def test_shifted(self) -> None:
        generator = TrigGenerator.create(np.zeros((2, 2))).shifted(0.5)
        np.testing.assert_allclose(generator.evaluate(0.3)[0], 0.5 * np.eye(2))

    def test_a_star_bounds_samples(self, contraction_flow: LinearFlow) -> None:
        norms = np.linalg.norm(
            contraction_flow.generator.evaluate(np.linspace(0.0, 1.0, 97)), ord=2, axis=(1, 2)
        )
        assert contraction_flow.a_star >= norms.max()


class TestFundamentalMatrix:
    """Test the Runge-Kutta kernel."""

    def test_constant_matches_exponential(self) -> None:
        x = np.array([[-1.0, 0.5], [0.3, -0.8]])
        flow = constant_flow(x.tolist())
        for t in (0.37, 2.0, 10.0):
            expected = matrix_exponential(t * x)
            result = fundamental_matrix(flow, 0.0, t, 1e-3)
            error = np.linalg.norm(result - expected, 2) / np.linalg.norm(expected, 2)
            assert error <= 1e-6

    def test_time_zero_is_identity(self, trace_flow: LinearFlow) -> None:
        np.testing.assert_array_equal(fundamental_matrix(trace_flow, 0.1, 0.0, 1e-2), np.eye(2))

    def test_batched_times_match_single(self, trace_flow: LinearFlow) -> None:
        batched = fundamental_matrices(trace_flow, 0.2, [0.5, 1.0], 1e-2)
        single = fundamental_matrix(trace_flow, 0.2, 1.0, 1e-2)
        np.testing.assert_allclose(batched[1], single, rtol=1e-10)

    def test_times_must_increase(self, trace_flow: LinearFlow) -> None:
        with pytest.raises(DimensionError):
            fundamental_matrices(trace_flow, 0.0, [1.0, 0.5], 1e-2)

    def test_step_must_be_positive(self, trace_flow: LinearFlow) -> None:
        with pytest.raises(DimensionError):
            fundamental_matrix(trace_flow, 0.0, 1.0, 0.0)

    def test_liouville(self, trace_flow: LinearFlow) -> None:
        w, t, speed = 0.1, 4.0, 0.3
        phi = fundamental_matrix(trace_flow, w, t, 1e-3)
        # trace X(theta) = -0.7 + 0.3 cos(2 pi theta) + 0.3 sin(2 pi theta), theta = w + speed s
        a, b = 2.0 * math.pi * w, 2.0 * math.pi * (w + speed * t)
        integral = -0.7 * t + 0.3 * (math.sin(b) - math.sin(a) - math.cos(b) + math.cos(a)) / (
            2.0 * math.pi * speed
        )
        assert np.linalg.det(phi) == pytest.approx(math.exp(integral), rel=1e-6)

    def test_cocycle_residual_constant(self) -> None:
        flow = constant_flow([[-1.0, 0.5], [0.3, -0.8]])
        assert cocycle_residual(flow, 0.0, 2.0, 3.0, 1e-3) <= 1e-8

    def test_cocycle_residual_driven(self, trace_flow: LinearFlow) -> None:
        assert cocycle_residual(trace_flow, 0.3, 1.3, 2.1, 1e-3) <= 1e-6

    def test_step_halving_order(self, trace_flow: LinearFlow) -> None:
        coarse = step_halving_error(trace_flow, 0.0, 2.0, 0.1)
        fine = step_halving_error(trace_flow, 0.0, 2.0, 0.05)
        assert coarse >= 8.0 * fine

    def test_cocycle_residual_step_halving(self) -> None:
        # s and t fall off the step grid, so the split product takes shortened steps
        flow = constant_flow([[-1.0, 2.0], [-2.0, -1.0]])
        coarse = cocycle_residual(flow, 0.0, 1.33, 2.07, 0.05)
        fine = cocycle_residual(flow, 0.0, 1.33, 2.07, 0.025)
        assert coarse > 1e-12
        assert coarse >= 8.0 * fine

    def test_residual_needs_nonnegative_times(self, trace_flow: LinearFlow) -> None:
        with pytest.raises(DimensionError):
            cocycle_residual(trace_flow, 0.0, -1.0, 1.0, 1e-2)


class TestLiaoConstants:
    """Test the perturbation constants."""

    def test_identities(self) -> None:
        c = liao_constants(0.1, 1.1)
        assert c.delta == 0.05
        assert c.rho_pert == pytest.approx(0.0125)
        assert c.lam == c.rho_pert / (4.0 * math.exp(2.0 * 1.1))
        assert c.lambda_star == (c.lam / 2.0) * math.exp(-c.rho_pert / 2.0)
        assert c.t_bar == (32.0 / (c.lam * c.rho_pert)) * math.log(32.0 / c.lambda_star**2)
        assert c.big_t >= c.t_bar + 2.0
        assert c.big_t >= 16.0 * c.a_star * c.t_bar / c.rho_pert

    def test_at_rest_generator(self) -> None:
        c = liao_constants(0.1, 0.0)
        assert c.lam == c.rho_pert / 4.0
        tail = 2.0 * c.lam * c.t_bar + (64.0 / c.rho_pert) * math.log(2.0 / c.lambda_star)
        assert c.big_t == max(tail, c.t_bar + 2.0)

    def test_big_t_increases_with_a_star(self) -> None:
        values = [liao_constants(0.1, a).big_t for a in (0.0, 0.5, 1.0, 2.0)]
        assert all(a < b for a, b in zip(values, values[1:], strict=False))

    def test_rho_capped_for_large_epsilon(self) -> None:
        assert liao_constants(10.0, 0.0).rho_pert == 0.25

    def test_epsilon_must_be_positive(self) -> None:
        with pytest.raises(DimensionError):
            liao_constants(0.0, 1.0)


class TestQuasiContraction:
    """Test the averaged segment-wise log-norm criterion."""

    def test_trig_contraction(self, contraction_flow: LinearFlow) -> None:
        subdivision = [TWO_PI * i / 6 for i in range(7)]
        report = quasi_contraction_test(contraction_flow, subdivision, -0.85, 1e-3)
        assert report.passed
        assert report.average <= -0.9 + 1e-3
        assert report.average == pytest.approx(
            math.fsum(report.per_segment_log_norms) / report.period, abs=1e-12
        )
        assert report.submultiplicative
        assert report.period_log_radius / report.period <= report.average + 1e-8

    def test_threads_do_not_change_result(self, contraction_flow: LinearFlow) -> None:
        subdivision = [0.0, 2.0, 4.0, TWO_PI]
        single = quasi_contraction_test(contraction_flow, subdivision, -0.5, 1e-2)
        pooled = quasi_contraction_test(contraction_flow, subdivision, -0.5, 1e-2, threads=3)
        assert single == pooled

    def test_fails_above_beta(self) -> None:
        flow = constant_flow([[-0.2, 0.0], [0.0, -1.0]])
        report = quasi_contraction_test(flow, [0.0, 1.0, 2.0], -0.5, 1e-2)
        assert not report.passed
        assert report.average == pytest.approx(-0.2, abs=1e-8)

    def test_subdivision_must_span_period(self, contraction_flow: LinearFlow) -> None:
        with pytest.raises(DimensionError, match="period"):
            quasi_contraction_test(contraction_flow, [0.0, 1.0, 2.0], -0.5, 1e-2)

    def test_subdivision_must_increase(self) -> None:
        flow = constant_flow([[-1.0]])
        with pytest.raises(DimensionError, match="increasing"):
            quasi_contraction_test(flow, [0.0, 1.5, 1.0, 2.0], -0.5, 1e-2)

    def test_beta_must_be_negative(self) -> None:
        with pytest.raises(DimensionError):
            quasi_contraction_test(constant_flow([[-1.0]]), [0.0, 2.0], 0.0, 1e-2)

    def test_needs_periodic_orbit(self) -> None:
        flow = LinearFlow.create(CircleRotation(0.0), TrigGenerator.create([[-1.0]]))
        with pytest.raises(DimensionError, match="periodic"):
            quasi_contraction_test(flow, [0.0, 1.0], -0.5, 1e-2)


class TestErgodicCriterion:
    """Test finite-time exponents and their orbit average."""

    def test_xi_constant(self) -> None:
        flow = constant_flow([[-1.0, 0.0], [0.0, -2.0]])
        assert xi_T(flow, 0.0, 1.5, 1e-3) == pytest.approx(-1.0, abs=1e-9)

    def test_xi_scales_with_generator(self) -> None:
        x = [[-1.0, 0.0], [0.0, -2.0]]
        base = xi_T(constant_flow(x), 0.0, 0.5, 1e-3)
        scaled = xi_T(constant_flow((3.0 * np.array(x)).tolist()), 0.0, 0.5, 1e-3)
        assert scaled == pytest.approx(3.0 * base, rel=1e-8)

    def test_xi_needs_positive_horizon(self) -> None:
        with pytest.raises(DimensionError):
            xi_T(constant_flow([[-1.0]]), 0.0, 0.0, 1e-3)

    def test_trig_contraction_average(self, contraction_flow: LinearFlow) -> None:
        estimate = ergodic_average_criterion(contraction_flow, 1.0, 16, 1e-3)
        assert estimate <= -0.9 + 2e-3

    def test_single_sample(self) -> None:
        flow = constant_flow([[-0.4]])
        assert ergodic_average_criterion(flow, 1.0, 1, 1e-3) == pytest.approx(-0.4, abs=1e-9)


class TestDecay:
    """Test the decay fit, growth rates and the dilation probe."""

    def test_minus_identity(self) -> None:
        fit = uniform_decay_fit(constant_flow([[-1.0, 0.0], [0.0, -1.0]]), [0.0], 5.0, 1e-3)
        assert fit is not None
        assert fit.gamma == pytest.approx(math.exp(-1.0), abs=1e-4)
        assert fit.c <= 1.0 + 1e-4

    def test_normal_generator_rate(self) -> None:
        flow = constant_flow([[-1.0, 0.5], [0.5, -1.0]])
        fit = uniform_decay_fit(flow, [0.0, 0.5], 6.0, 1e-3)
        assert fit is not None
        assert fit.gamma == pytest.approx(math.exp(-0.5), abs=1e-3)

    def test_no_decay(self) -> None:
        assert uniform_decay_fit(constant_flow([[0.0, 0.0], [0.0, 0.0]]), [0.0], 2.0, 1e-2) is None

    def test_sample_points_required(self) -> None:
        with pytest.raises(DimensionError):
            uniform_decay_fit(constant_flow([[-1.0]]), [], 1.0, 1e-2)

    def test_log_norm_series(self) -> None:
        times, values = log_norm_series(constant_flow([[-2.0]]), 0.0, 1.0, 1e-3, 5)
        np.testing.assert_allclose(times, [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(values, -2.0 * times, atol=1e-10)

    def test_periodic_growth_rate(self) -> None:
        flow = constant_flow([[-0.3, 0.0], [0.0, -0.6]], period=2.0)
        assert periodic_growth_rate(flow, 0.0, 1e-3) == pytest.approx(-0.3, abs=1e-9)

    def test_dilation_probe(self) -> None:
        flow = constant_flow([[-0.3]], period=2.0)
        small = dilation_probe(flow, 0.2, 0.0, 1e-3)
        assert small.passed
        assert small.shifted_rate == pytest.approx(small.rate + 0.1, abs=1e-9)
        assert small.label == SAMPLED_LABEL
        assert not dilation_probe(flow, 1.0, 0.0, 1e-3).passed
