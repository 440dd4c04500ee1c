"""Linear differential systems driven by a rotation or a periodic orbit.

The state equation is ``x' = X(t.w) x`` where ``t.w`` is the driving point after
time t and X a built-in generator (constant or trigonometric polynomial in the
driving angle). Driving points are angles in [0, 1).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import structlog
from numpy.typing import ArrayLike, NDArray

from mjls_bounds.errors import DimensionError
from mjls_bounds.jsr_bounds import SAMPLED_LABEL
from mjls_bounds.matrix_core import (
    Matrix,
    MatrixStack,
    NormKind,
    as_matrix,
    operator_norm,
    operator_norms,
    spectral_radius,
)

logger = structlog.get_logger()

A_STAR_SAMPLES = 4096
A_STAR_SAFETY = 1.01
FLAT_SLOPE = 1e-12
SUBMULTIPLICATIVE_SLACK = 1e-8


@dataclass(frozen=True)
class CircleRotation:
    """``t.w = w + speed * t mod 1``."""

    speed: float

    def advance(self, w: float, t: ArrayLike) -> NDArray[np.float64]:
        return np.mod(w + self.speed * np.asarray(t, dtype=np.float64), 1.0)

    @property
    def period(self) -> float | None:
        return None if self.speed == 0.0 else 1.0 / abs(self.speed)


@dataclass(frozen=True)
class PeriodicOrbit:
    """A closed orbit of the given period, parametrized by phase in [0, 1)."""

    period: float

    def __post_init__(self) -> None:
        if not self.period > 0.0:
            raise DimensionError(f"period must be positive, got {self.period}")

    def advance(self, w: float, t: ArrayLike) -> NDArray[np.float64]:
        return np.mod(w + np.asarray(t, dtype=np.float64) / self.period, 1.0)


Driving = CircleRotation | PeriodicOrbit


def _term_stack(terms: Sequence[ArrayLike], d: int) -> MatrixStack:
    if len(terms) == 0:
        return np.zeros((0, d, d))
    stack = np.array(terms, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1:] != (d, d):
        raise DimensionError(f"generator coefficients must be {d}x{d} matrices")
    if not np.all(np.isfinite(stack)):
        raise DimensionError("generator coefficients must be finite")
    return stack


@dataclass(frozen=True, eq=False)
class TrigGenerator:
    """``X(theta) = C + sum_k cos(2 pi k theta) A_k + sin(2 pi k theta) B_k``."""

    constant: Matrix
    cos_terms: MatrixStack
    sin_terms: MatrixStack

    @classmethod
    def create(
        cls,
        constant: ArrayLike,
        cos_terms: Sequence[ArrayLike] = (),
        sin_terms: Sequence[ArrayLike] = (),
    ) -> TrigGenerator:
        base = as_matrix(constant)
        d = base.shape[0]
        cos_stack = _term_stack(cos_terms, d)
        sin_stack = _term_stack(sin_terms, d)
        size = max(len(cos_stack), len(sin_stack))
        cos_stack = np.concatenate([cos_stack, np.zeros((size - len(cos_stack), d, d))])
        sin_stack = np.concatenate([sin_stack, np.zeros((size - len(sin_stack), d, d))])
        return cls(constant=base, cos_terms=cos_stack, sin_terms=sin_stack)

    @property
    def dim(self) -> int:
        return int(self.constant.shape[0])

    def evaluate(self, theta: ArrayLike) -> MatrixStack:
        """Generator at every angle of a 1-d array, shape (n, d, d)."""
        angles = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        out = np.broadcast_to(self.constant, (angles.size, self.dim, self.dim)).copy()
        if len(self.cos_terms):
            phase = 2.0 * np.pi * np.outer(angles, np.arange(1, len(self.cos_terms) + 1))
            out += np.einsum("nm,mij->nij", np.cos(phase), self.cos_terms)
            out += np.einsum("nm,mij->nij", np.sin(phase), self.sin_terms)
        return out

    def shifted(self, shift: float) -> TrigGenerator:
        """``X + shift * I``."""
        return TrigGenerator(
            constant=self.constant + shift * np.eye(self.dim),
            cos_terms=self.cos_terms,
            sin_terms=self.sin_terms,
        )


@dataclass(frozen=True, eq=False)
class LinearFlow:
    driving: Driving
    generator: TrigGenerator
    a_star: float

    @classmethod
    def create(cls, driving: Driving, generator: TrigGenerator) -> LinearFlow:
        """Attach the bound ``a_star`` from dense sampling of ``||X||``."""
        thetas = np.arange(A_STAR_SAMPLES) / A_STAR_SAMPLES
        sampled = float(operator_norms(generator.evaluate(thetas), NormKind.SPECTRAL2).max())
        return cls(driving=driving, generator=generator, a_star=A_STAR_SAFETY * sampled)

    @property
    def period(self) -> float | None:
        return self.driving.period

    def shifted(self, shift: float) -> LinearFlow:
        return LinearFlow.create(self.driving, self.generator.shifted(shift))


@dataclass(frozen=True)
class LiaoConstants:
    epsilon: float
    delta: float
    a_star: float
    rho_pert: float
    lam: float
    lambda_star: float
    t_bar: float
    big_t: float


@dataclass(frozen=True)
class QuasiContractionReport:
    period: float
    subdivision: tuple[float, ...]
    per_segment_log_norms: tuple[float, ...]
    average: float
    threshold_beta: float
    passed: bool
    period_log_radius: float
    submultiplicative: bool


@dataclass(frozen=True)
class DecayFit:
    """``||X(t, w)|| <= c * gamma**t`` on every observed point."""

    c: float
    gamma: float
    slope: float
    intercept: float


@dataclass(frozen=True)
class DilationProbe:
    rate: float
    shifted_rate: float
    epsilon: float
    passed: bool
    label: str = SAMPLED_LABEL


def _step_sizes(duration: float, step: float) -> NDArray[np.float64]:
    n = max(1, math.ceil(duration / step - 1e-9))
    sizes = np.full(n, step)
    sizes[-1] = duration - (n - 1) * step
    return sizes


def _rk4_segment(
    flow: LinearFlow, w: float, start: float, duration: float, step: float, phi: Matrix
) -> Matrix:
    sizes = _step_sizes(duration, step)
    starts = start + np.arange(len(sizes)) * step
    left = flow.generator.evaluate(flow.driving.advance(w, starts))
    mid = flow.generator.evaluate(flow.driving.advance(w, starts + sizes / 2.0))
    right = flow.generator.evaluate(flow.driving.advance(w, starts + sizes))
    for h, g0, g1, g2 in zip(sizes, left, mid, right, strict=True):
        k1 = g0 @ phi
        k2 = g1 @ (phi + 0.5 * h * k1)
        k3 = g1 @ (phi + 0.5 * h * k2)
        k4 = g2 @ (phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return phi


def _check_step(step: float) -> None:
    if not step > 0.0:
        raise DimensionError(f"integration step must be positive, got {step}")


def fundamental_matrices(
    flow: LinearFlow, w: float, times: Sequence[float], step: float
) -> list[Matrix]:
    """Fundamental matrix at each of the nondecreasing ``times``, in one pass."""
    _check_step(step)
    phi = np.eye(flow.generator.dim)
    out = []
    current = 0.0
    for t in times:
        if t < current:
            raise DimensionError("times must be nonnegative and nondecreasing")
        if t > current:
            phi = _rk4_segment(flow, w, current, t - current, step, phi)
            current = t
        out.append(phi)
    return out


def fundamental_matrix(flow: LinearFlow, w: float, t: float, step: float) -> Matrix:
    """``X(t, w)`` by fixed-step classical Runge-Kutta from the identity.

    The final step is shortened to land on t.
    """
    return fundamental_matrices(flow, w, [t], step)[0]


def step_halving_error(flow: LinearFlow, w: float, t: float, step: float) -> float:
    """Richardson estimate ``||X_h - X_(h/2)|| / 15`` of the error at step h/2."""
    coarse = fundamental_matrix(flow, w, t, step)
    fine = fundamental_matrix(flow, w, t, step / 2.0)
    return operator_norm(coarse - fine, NormKind.SPECTRAL2) / 15.0


def cocycle_residual(flow: LinearFlow, w: float, s: float, t: float, step: float) -> float:
    """``||X(t + s, w) - X(t, s.w) X(s, w)||``; vanishes up to integrator error."""
    if s < 0.0 or t < 0.0:
        raise DimensionError("cocycle residual needs s, t >= 0")
    whole = fundamental_matrix(flow, w, t + s, step)
    shifted = float(flow.driving.advance(w, s))
    split = fundamental_matrix(flow, shifted, t, step) @ fundamental_matrix(flow, w, s, step)
    return operator_norm(whole - split, NormKind.SPECTRAL2)


def liao_constants(epsilon: float, a_star: float) -> LiaoConstants:
    """Perturbation constants for tolerance epsilon and generator bound ``a_star``.

    Uses ``delta = epsilon / 2`` and ``rho = min(delta, 1) / 4``.
    """
    if not epsilon > 0.0:
        raise DimensionError(f"epsilon must be positive, got {epsilon}")
    if a_star < 0.0:
        raise DimensionError(f"a_star must be nonnegative, got {a_star}")
    delta = epsilon / 2.0
    rho = min(delta, 1.0) / 4.0
    lam = rho / (4.0 * math.exp(2.0 * a_star))
    lambda_star = (lam / 2.0) * math.exp(-rho / 2.0)
    t_bar = (32.0 / (lam * rho)) * math.log(32.0 / lambda_star**2)
    big_t = max(
        16.0 * a_star * t_bar / rho,
        2.0 * lam * t_bar + (64.0 / rho) * math.log(2.0 / lambda_star),
        t_bar + 2.0,
    )
    return LiaoConstants(
        epsilon=epsilon,
        delta=delta,
        a_star=a_star,
        rho_pert=rho,
        lam=lam,
        lambda_star=lambda_star,
        t_bar=t_bar,
        big_t=big_t,
    )


def _require_period(flow: LinearFlow) -> float:
    period = flow.period
    if period is None:
        raise DimensionError("a periodic driving orbit is required")
    return period


def _log_norm(m: Matrix) -> float:
    norm = operator_norm(m, NormKind.SPECTRAL2)
    return math.log(norm) if norm > 0.0 else -math.inf


def quasi_contraction_test(
    flow: LinearFlow,
    subdivision: Sequence[float],
    beta: float,
    step: float,
    w: float = 0.0,
    threads: int = 1,
) -> QuasiContractionReport:
    """Average segment-wise log-norm over one period, tested against beta < 0.

    Also checks ``log rho(X(period, w)) <= sum of segment log-norms``, which
    holds by submultiplicativity.
    """
    period = _require_period(flow)
    if beta >= 0.0:
        raise DimensionError(f"beta must be negative, got {beta}")
    points = [float(t) for t in subdivision]
    if len(points) < 2 or points[0] != 0.0 or abs(points[-1] - period) > 1e-12 * period:
        raise DimensionError(f"subdivision must run from 0 to the period {period}")
    points[-1] = period
    if any(b <= a for a, b in zip(points, points[1:], strict=False)):
        raise DimensionError("subdivision must be strictly increasing")

    def segment(bounds: tuple[float, float]) -> float:
        t0, t1 = bounds
        start = float(flow.driving.advance(w, t0))
        return _log_norm(fundamental_matrix(flow, start, t1 - t0, step))

    pairs = list(zip(points, points[1:], strict=False))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            logs = list(pool.map(segment, pairs))
    else:
        logs = [segment(pair) for pair in pairs]

    average = math.fsum(logs) / period
    rho = spectral_radius(fundamental_matrix(flow, w, period, step))
    period_log_radius = math.log(rho) if rho > 0.0 else -math.inf
    submultiplicative = period_log_radius / period <= average + SUBMULTIPLICATIVE_SLACK
    passed = average <= beta
    logger.info(
        "quasi_contraction",
        segments=len(logs),
        average=average,
        beta=beta,
        passed=passed,
        submultiplicative=submultiplicative,
    )
    return QuasiContractionReport(
        period=period,
        subdivision=tuple(points),
        per_segment_log_norms=tuple(logs),
        average=average,
        threshold_beta=beta,
        passed=passed,
        period_log_radius=period_log_radius,
        submultiplicative=submultiplicative,
    )


def xi_T(flow: LinearFlow, w: float, T: float, step: float) -> float:
    """``(1/T) log ||X(T, w)||``."""
    if not T > 0.0:
        raise DimensionError(f"T must be positive, got {T}")
    return _log_norm(fundamental_matrix(flow, w, T, step)) / T


def ergodic_average_criterion(
    flow: LinearFlow, T: float, samples: int, step: float, w: float = 0.0
) -> float:
    """Orbit average of ``xi_T`` by the trapezoid rule on ``samples`` points.

    The invariant measure on a periodic orbit is uniform in time, so this is
    ``(1/period) * integral of xi_T(s.w) over one period``. A negative value
    is the hypothesis of the ergodic stability criterion.
    """
    period = _require_period(flow)
    if samples < 1:
        raise DimensionError(f"samples must be positive, got {samples}")
    if samples == 1:
        return xi_T(flow, w, T, step)
    times = np.linspace(0.0, period, samples)
    values = [xi_T(flow, float(flow.driving.advance(w, s)), T, step) for s in times]
    estimate = float(scipy.integrate.trapezoid(values, times)) / period
    logger.info("ergodic_average", T=T, samples=samples, estimate=estimate)
    return estimate


def log_norm_series(
    flow: LinearFlow, w: float, horizon: float, step: float, points: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(t, log ||X(t, w)||)`` on ``points`` equally spaced times in [0, horizon]."""
    if not horizon > 0.0:
        raise DimensionError(f"horizon must be positive, got {horizon}")
    times = np.linspace(0.0, horizon, points)
    mats = fundamental_matrices(flow, w, times.tolist(), step)
    return times, np.array([_log_norm(m) for m in mats])


def uniform_decay_fit(
    flow: LinearFlow,
    sample_points: Sequence[float],
    horizon: float,
    step: float,
    grid: int = 65,
) -> DecayFit | None:
    """Least-squares line through ``log ||X(t, w)||`` over time and sample points.

    ``gamma = exp(slope)`` and c is raised by the largest positive residual so
    the bound covers every observation. None when the fitted slope is not
    negative.
    """
    if not sample_points:
        raise DimensionError("at least one sample point is required")
    ts, ys = [], []
    for w in sample_points:
        t, y = log_norm_series(flow, w, horizon, step, grid)
        ts.append(t)
        ys.append(y)
    t_all = np.concatenate(ts)
    y_all = np.concatenate(ys)
    slope, intercept = np.polyfit(t_all, y_all, 1)
    if slope >= -FLAT_SLOPE:
        logger.info("no_uniform_decay", slope=float(slope))
        return None
    residual = float((y_all - (intercept + slope * t_all)).max())
    return DecayFit(
        c=math.exp(float(intercept) + max(residual, 0.0)),
        gamma=math.exp(float(slope)),
        slope=float(slope),
        intercept=float(intercept),
    )


def periodic_growth_rate(flow: LinearFlow, w: float, step: float) -> float:
    """``(1/period) log rho(X(period, w))``."""
    period = _require_period(flow)
    rho = spectral_radius(fundamental_matrix(flow, w, period, step))
    return math.log(rho) / period if rho > 0.0 else -math.inf


def dilation_probe(flow: LinearFlow, epsilon: float, w: float, step: float) -> DilationProbe:
    """Growth rate of ``X + (epsilon/2) I`` over one period.

    A scalar shift commutes with everything, so the rate moves up by exactly
    epsilon / 2; a nonnegative shifted rate means an epsilon-perturbation of the
    system is not periodically stable.
    """
    if not epsilon > 0.0:
        raise DimensionError(f"epsilon must be positive, got {epsilon}")
    rate = periodic_growth_rate(flow, w, step)
    shifted = periodic_growth_rate(flow.shifted(epsilon / 2.0), w, step)
    return DilationProbe(rate=rate, shifted_rate=shifted, epsilon=epsilon, passed=shifted < 0.0)
