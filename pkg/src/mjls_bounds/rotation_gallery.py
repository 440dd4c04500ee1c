"""Irrational-rotation cocycles where periodic data cannot see the uniform behavior.

The driving space is ``({p_n/q_n} | {omega}) x circle`` with the map
``(y, z) -> (y, z + y mod 1)``. Every computation here is fiber-wise: the map
preserves y, the fibers y = p_n/q_n are periodic with period q_n, and the
fiber y = omega carries the irrational rotation.

Two cocycles are provided:

* ``SpectralFinitenessCocycle``: ``C(y, z) = (y / omega) A`` with A the unit
  upper-triangular all-ones matrix. Its joint spectral radius is 1, but every
  periodic fiber has spectral growth ``p_n / (q_n omega) < 1``.
* ``FiberContractionCocycle``: the scalar cocycle equal to ``gamma**(1/q_n)``
  on the fiber p_n/q_n and 1 on the omega fiber. Every periodic orbit contracts
  by gamma per period, yet the omega fiber never decays.

omega is given by its continued-fraction coefficients so the convergents are
exact integers; its float value is used only for distances.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction

import numpy as np
import structlog

from mjls_bounds.errors import DimensionError
from mjls_bounds.matrix_core import (
    Matrix,
    NormKind,
    chain_products,
    operator_norm,
    spectral_radius,
)

logger = structlog.get_logger()

PRODUCT_TOL = 1e-12
PERIODIC_NOT_UNIFORM = "completely periodically stable on probed orbits, not uniformly stable"


class Side(StrEnum):
    """Which convergents to keep: below omega, above it, or all of them."""

    BELOW = "below"
    ABOVE = "above"
    ALTERNATING = "alternating"


@dataclass(frozen=True)
class RotationSystem:
    coefficients: tuple[int, ...]
    omega: float
    convergents: tuple[tuple[int, int], ...]
    side: Side


@dataclass(frozen=True)
class ClosingCheck:
    p: int
    q: int
    z0: float
    deviation: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class SpectralFinitenessCocycle:
    system: RotationSystem
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DimensionError(f"dimension must be positive, got {self.dim}")
        if any(p / q > self.system.omega for p, q in self.system.convergents):
            raise DimensionError("periodic fibers must lie below omega")

    @property
    def matrix(self) -> Matrix:
        return np.triu(np.ones((self.dim, self.dim)))


@dataclass(frozen=True)
class FiberContractionCocycle:
    system: RotationSystem
    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise DimensionError(f"gamma must lie in (0, 1), got {self.gamma}")


RotationCocycle = SpectralFinitenessCocycle | FiberContractionCocycle


@dataclass(frozen=True)
class PeriodicSpectralData:
    """q-th root of the spectral radius of the q-step product on fiber p/q."""

    p: int
    q: int
    closed_form: float
    numeric: float
    relative_error: float


@dataclass(frozen=True)
class SpectralFinitenessReport:
    periodic: tuple[PeriodicSpectralData, ...]
    n_values: tuple[int, ...]
    upper: tuple[float, ...]
    fiber_rates: tuple[tuple[float, float], ...]
    lower_sup: float
    gap: float
    failure_exhibited: bool


@dataclass(frozen=True)
class PeriodicNotUniformReport:
    fiber_products: tuple[tuple[int, int, float], ...]
    omega_log_norms: tuple[float, ...]
    periodic_margin: float
    omega_exponent: float
    eventual_margin: float
    verdict: str


def periodic_coefficients(head: Sequence[int], period: Sequence[int], depth: int) -> list[int]:
    """Expand ``[head; period, period, ...]`` to ``depth`` coefficients."""
    coefficients = list(head)
    if period:
        while len(coefficients) < depth:
            coefficients.extend(period)
    return coefficients[:depth] if period else coefficients


def _evaluate(coefficients: Sequence[int]) -> Fraction:
    value = Fraction(0)
    for a in reversed(coefficients[1:]):
        value = 1 / (a + value)
    return coefficients[0] + value


def convergents(
    cf_coefficients: Sequence[int], count: int, side: Side | str = Side.BELOW
) -> RotationSystem:
    """The first ``count`` convergents of omega in (0, 1) on the requested side.

    Uses ``p_n = a_n p_(n-1) + p_(n-2)`` and ``q_n = a_n q_(n-1) + q_(n-2)``;
    even-indexed convergents lie below omega, odd-indexed ones above. The last
    convergent of the list is omega itself and is never returned.
    """
    side = Side(side)
    cf = [int(a) for a in cf_coefficients]
    if len(cf) < 3 or cf[0] != 0 or any(a < 1 for a in cf[1:]):
        raise DimensionError("coefficients must read [0; a_1, a_2, ...] with a_i >= 1")
    if count < 1:
        raise DimensionError(f"count must be positive, got {count}")
    omega = float(_evaluate(cf))

    kept: list[tuple[int, int]] = []
    p_prev, p = 1, cf[0]
    q_prev, q = 0, 1
    for index in range(1, len(cf) - 1):
        a = cf[index]
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        if not 0 < p < q:
            continue
        below = index % 2 == 0
        if side is Side.ALTERNATING or below == (side is Side.BELOW):
            kept.append((p, q))
            if len(kept) == count:
                break
    if len(kept) < count:
        raise DimensionError(
            f"{len(cf)} coefficients give only {len(kept)} {side} convergents, {count} requested"
        )
    return RotationSystem(
        coefficients=tuple(cf), omega=omega, convergents=tuple(kept), side=side
    )


def dirichlet_holds(system: RotationSystem) -> bool:
    return all(abs(system.omega - p / q) < 1.0 / q**2 for p, q in system.convergents)


def closing_check(
    system: RotationSystem, index: int, z0: float = 0.0, tolerance_factor: float = 1.0
) -> ClosingCheck:
    """Distance between the rotation orbit and its periodic shadow over one period.

    Compares ``z0 + k omega`` with ``z0 + k p/q`` on the circle for 0 <= k < q.
    """
    p, q = system.convergents[index]
    k = np.arange(q)
    irrational = np.mod(z0 + k * system.omega, 1.0)
    periodic = np.mod(z0 + np.mod(k * p, q) / q, 1.0)
    delta = np.abs(irrational - periodic)
    deviation = float(np.minimum(delta, 1.0 - delta).max())
    bound = tolerance_factor / q
    return ClosingCheck(
        p=p, q=q, z0=z0, deviation=deviation, bound=bound, passed=deviation < bound
    )


def periodic_spectral_data(cocycle: SpectralFinitenessCocycle, index: int) -> PeriodicSpectralData:
    """Spectral growth per step over the periodic fiber of the index-th convergent.

    The product over q steps is ``(p / (q omega))**q A**q`` and rho(A) = 1, so
    the closed form is ``p / (q omega)``. The numeric value multiplies the q
    factors out and takes the spectral radius in log scale.
    """
    p, q = cocycle.system.convergents[index]
    closed_form = p / (q * cocycle.system.omega)
    letter = (closed_form * cocycle.matrix)[np.newaxis]
    normalized, log_scale = chain_products(letter, np.zeros((1, q), dtype=np.intp))
    numeric = math.exp((float(log_scale[0]) + math.log(spectral_radius(normalized[0]))) / q)
    return PeriodicSpectralData(
        p=p,
        q=q,
        closed_form=closed_form,
        numeric=numeric,
        relative_error=abs(numeric - closed_form) / closed_form,
    )


def spectral_finiteness_report(
    cocycle: SpectralFinitenessCocycle, n_max: int, fiber_samples: int
) -> SpectralFinitenessReport:
    """Periodic values against fiber-wise upper estimates.

    On fiber y the n-step product is ``(y / omega)**n A**n``, so the upper
    estimate ``max_y (y / omega) ||A**n||**(1/n)`` is attained at y = omega and
    decreases to 1. Periodic values stay strictly below 1: the radius is never
    realized by a periodic orbit.
    """
    if n_max < 1:
        raise DimensionError(f"n_max must be positive, got {n_max}")
    system = cocycle.system
    periodic = tuple(periodic_spectral_data(cocycle, i) for i in range(len(system.convergents)))

    n_values = tuple(range(1, n_max + 1))
    power_rates = [
        operator_norm(np.linalg.matrix_power(cocycle.matrix, n), NormKind.SPECTRAL2) ** (1.0 / n)
        for n in n_values
    ]
    fibers = [system.omega] + [p / q for p, q in system.convergents[:fiber_samples]]
    fiber_rates = tuple((y, (y / system.omega) * power_rates[-1]) for y in fibers)
    upper = tuple(max(y / system.omega for y in fibers) * r for r in power_rates)

    lower_sup = max(row.closed_form for row in periodic)
    gap = upper[-1] - lower_sup
    failure = (
        all(row.closed_form < 1.0 for row in periodic)
        and all(u >= 1.0 for u in upper)
        and all(abs(u - row.closed_form) > 1e-6 for u in upper for row in periodic)
    )
    logger.info(
        "spectral_finiteness",
        convergents=len(periodic),
        lower_sup=lower_sup,
        upper=upper[-1],
        gap=gap,
        failure_exhibited=failure,
    )
    return SpectralFinitenessReport(
        periodic=periodic,
        n_values=n_values,
        upper=upper,
        fiber_rates=fiber_rates,
        lower_sup=lower_sup,
        gap=gap,
        failure_exhibited=failure,
    )


def _fiber_log(cocycle: FiberContractionCocycle, y: float | Fraction) -> float:
    point = Fraction(y)
    for p, q in cocycle.system.convergents:
        if point == Fraction(p, q):
            return math.log(cocycle.gamma) / q
    return 0.0


def fiber_value(cocycle: FiberContractionCocycle, y: float | Fraction) -> float:
    """One-step multiplier on fiber y: ``gamma**(1/q)`` on a convergent p/q, 1 elsewhere."""
    return math.exp(_fiber_log(cocycle, y))


def fiber_product(cocycle: FiberContractionCocycle, index: int, steps: int) -> float:
    """``steps``-step product on the periodic fiber of the index-th convergent."""
    p, q = cocycle.system.convergents[index]
    return math.exp(steps * _fiber_log(cocycle, Fraction(p, q)))


def eventual_periodic_margin(cocycle: FiberContractionCocycle, start_n: int, n_max: int) -> float:
    """sup of the n-step fiber products over probed fibers and start_n <= n <= n_max.

    Tends to 1 once fibers with q > n are probed.
    """
    if not 1 <= start_n <= n_max:
        raise DimensionError(f"need 1 <= start_n <= n_max, got {start_n}, {n_max}")
    return max(
        fiber_product(cocycle, i, n)
        for i in range(len(cocycle.system.convergents))
        for n in range(start_n, n_max + 1)
    )


def periodic_not_uniform_report(
    cocycle: FiberContractionCocycle, n_max: int
) -> PeriodicNotUniformReport:
    """Every periodic orbit contracts by gamma while the omega fiber stays at norm 1."""
    if n_max < 1:
        raise DimensionError(f"n_max must be positive, got {n_max}")
    products = tuple(
        (p, q, fiber_product(cocycle, i, q))
        for i, (p, q) in enumerate(cocycle.system.convergents)
    )
    omega_step = math.log(fiber_value(cocycle, cocycle.system.omega))
    omega_log_norms = tuple(float(x) for x in np.cumsum(np.full(n_max, omega_step)))
    periodic_margin = max(value for _, _, value in products)
    omega_exponent = omega_log_norms[-1] / n_max

    periodic_ok = all(abs(value - cocycle.gamma) <= PRODUCT_TOL for _, _, value in products)
    verdict = (
        PERIODIC_NOT_UNIFORM
        if periodic_ok and periodic_margin < 1.0 and omega_exponent == 0.0
        else "inconsistent"
    )
    eventual = eventual_periodic_margin(cocycle, 1, n_max)
    logger.info(
        "periodic_not_uniform",
        gamma=cocycle.gamma,
        periodic_margin=periodic_margin,
        eventual_margin=eventual,
        verdict=verdict,
    )
    return PeriodicNotUniformReport(
        fiber_products=products,
        omega_log_norms=omega_log_norms,
        periodic_margin=periodic_margin,
        omega_exponent=omega_exponent,
        eventual_margin=eventual,
        verdict=verdict,
    )
