"""Markov measures on switching laws and Lyapunov exponents of the jump system.

Randomness comes from numpy's PCG64 generator. Every stochastic routine takes
an integer seed, and trial ``i`` of a run uses the i-th child of
``SeedSequence(seed)``, so results are reproducible bit for bit and do not
depend on how many worker threads ran the trials.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import structlog
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from mjls_bounds.constraint_graph import Constraint, Word
from mjls_bounds.errors import DimensionError, NumericFlagError
from mjls_bounds.jsr_bounds import SAMPLED_LABEL, MatrixFamily
from mjls_bounds.matrix_core import (
    NormKind,
    exterior_power,
    operator_norm,
    spectral_radius,
)

logger = structlog.get_logger()

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-13
STATIONARY_CHECK_TOL = 1e-10
STATIONARY_MAX_ITER = 1_000_000
NON_UNIQUE_TOL = 1e-8
RENORMALIZE_EVERY = 20
DEFAULT_WINDOW = 8


@dataclass(frozen=True)
class StationaryResult:
    p_vec: NDArray[np.float64]
    iterations: int
    converged: bool
    non_unique: bool


@dataclass(frozen=True, eq=False)
class MarkovModel:
    """Row-stochastic P with stationary vector p.

    ``initial`` is the law of the first symbol when sampling; it defaults to p
    and may differ from it, e.g. to start a deterministic cycle at a given state.
    """

    p_matrix: NDArray[np.float64]
    p_vec: NDArray[np.float64]
    initial: NDArray[np.float64]
    non_unique: bool = False

    @classmethod
    def create(
        cls,
        p_matrix: ArrayLike,
        p_vec: ArrayLike | None = None,
        initial: ArrayLike | None = None,
        seed: int = 0,
    ) -> MarkovModel:
        P = _check_stochastic(p_matrix)
        non_unique = False
        if p_vec is None:
            result = stationary_distribution(P, seed)
            if not result.converged:
                raise NumericFlagError(
                    f"stationary vector not reached in {result.iterations} iterations"
                )
            p, non_unique = result.p_vec, result.non_unique
        else:
            p = _check_distribution(p_vec, P.shape[0], "p_vec")
            if np.abs(p @ P - p).max() > STATIONARY_CHECK_TOL:
                raise DimensionError("p_vec is not stationary for P")
        start = p if initial is None else _check_distribution(initial, P.shape[0], "initial")
        return cls(p_matrix=P, p_vec=p, initial=start, non_unique=non_unique)

    @property
    def k(self) -> int:
        return int(self.p_matrix.shape[0])


@dataclass(frozen=True)
class CylinderMeasure:
    value: float
    inadmissible: bool


@dataclass(frozen=True)
class LyapunovEstimate:
    """Monte-Carlo maximal exponent in nats per step."""

    estimate: float
    stderr: float
    length: int
    trials: int
    seed: int
    degenerate: bool


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: tuple[float, ...]
    trajectory_length: int
    trials: int
    standard_errors: tuple[float, ...]
    truncated: bool


@dataclass(frozen=True)
class PeriodicApproximation:
    """Exponents of closed words cut from one sampled law at its return times."""

    returns: tuple[tuple[int, float], ...]
    reference: LyapunovEstimate
    window: int
    max_length: int
    words: tuple[Word, ...] = ()


def _check_stochastic(p_matrix: ArrayLike) -> NDArray[np.float64]:
    P = np.array(p_matrix, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise DimensionError(f"transition matrix must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)) or (P < 0.0).any():
        raise DimensionError("transition probabilities must be finite and nonnegative")
    if np.abs(P.sum(axis=1) - 1.0).max() > STOCHASTIC_TOL:
        raise DimensionError("every row of the transition matrix must sum to 1")
    return P


def _check_distribution(p: ArrayLike, k: int, name: str) -> NDArray[np.float64]:
    vec = np.array(p, dtype=np.float64)
    if vec.shape != (k,) or (vec < 0.0).any() or abs(vec.sum() - 1.0) > STOCHASTIC_TOL:
        raise DimensionError(f"{name} must be a probability vector of length {k}")
    return vec


def _power_iterate(lazy: NDArray[np.float64], start: NDArray[np.float64]) -> tuple[
    NDArray[np.float64], int, bool
]:
    v = start
    for i in range(1, STATIONARY_MAX_ITER + 1):
        nxt = v @ lazy
        if np.abs(nxt - v).sum() < STATIONARY_TOL:
            return nxt / nxt.sum(), i, True
        v = nxt
    return v / v.sum(), STATIONARY_MAX_ITER, False


def stationary_distribution(p_matrix: ArrayLike, seed: int = 0) -> StationaryResult:
    """Stationary row vector reached by power iteration from the uniform vector.

    Iterates the lazy chain (P + I) / 2, which has the same stationary vectors
    and no periodicity. A second run from a random start that lands elsewhere
    marks the answer non-unique (reducible chain).
    """
    P = _check_stochastic(p_matrix)
    k = P.shape[0]
    lazy = 0.5 * (P + np.eye(k))
    p, iterations, converged = _power_iterate(lazy, np.full(k, 1.0 / k))
    if not converged:
        logger.warning("stationary_not_converged", iterations=iterations)

    probe = np.random.default_rng(seed).uniform(size=k)
    other, _, _ = _power_iterate(lazy, probe / probe.sum())
    non_unique = bool(np.abs(other - p).max() > NON_UNIQUE_TOL)
    if non_unique:
        logger.warning("stationary_not_unique", k=k)
    return StationaryResult(
        p_vec=p, iterations=iterations, converged=converged, non_unique=non_unique
    )


def constraint_of(model: MarkovModel) -> Constraint:
    """Allowed transitions are exactly the positive entries of P."""
    return Constraint(entries=(model.p_matrix > 0.0).astype(np.int64))


def cylinder_measure(model: MarkovModel, w: Sequence[int]) -> CylinderMeasure:
    """Probability that the stationary chain starts with the symbols of ``w``."""
    if not w:
        raise DimensionError("words have length at least 1")
    if any(not 1 <= s <= model.k for s in w):
        raise DimensionError(f"symbols of {tuple(w)} outside 1..{model.k}")
    value = float(model.p_vec[w[0] - 1])
    for a, b in zip(w, w[1:], strict=False):
        value *= float(model.p_matrix[a - 1, b - 1])
    pairs = zip(w, w[1:], strict=False)
    inadmissible = any(model.p_matrix[a - 1, b - 1] == 0.0 for a, b in pairs)
    return CylinderMeasure(value=0.0 if inadmissible else value, inadmissible=inadmissible)


def _sample_indices(
    model: MarkovModel, length: int, rng: np.random.Generator
) -> NDArray[np.intp]:
    """Zero-based symbols of a sampled law.

    Draws use ``searchsorted(..., side="right")`` on cumulative sums, so a
    zero-probability transition can never be chosen.
    """
    if length < 1:
        raise DimensionError(f"length must be positive, got {length}")
    draws = rng.random(length)
    start_cum = np.cumsum(model.initial)
    row_cum = np.cumsum(model.p_matrix, axis=1)
    out = np.empty(length, dtype=np.intp)
    out[0] = np.searchsorted(start_cum, draws[0] * start_cum[-1], side="right")
    for j in range(1, length):
        cum = row_cum[out[j - 1]]
        out[j] = np.searchsorted(cum, draws[j] * cum[-1], side="right")
    return out


def sample_switching_law(model: MarkovModel, length: int, seed: int) -> Word:
    """A Markov switching law of the given length (1-based symbols)."""
    rng = np.random.default_rng(seed)
    return tuple(int(s) + 1 for s in _sample_indices(model, length, rng))


def _check_compatible(f: MatrixFamily, model: MarkovModel) -> None:
    if model.k != f.k:
        raise DimensionError(f"model has {model.k} states but family has {f.k} matrices")
    allowed = constraint_of(model).entries
    if (allowed > f.constraint.entries).any():
        raise DimensionError("the chain makes transitions the family constraint forbids")


def _log_growth(f: MatrixFamily, indices: NDArray[np.intp]) -> float:
    """``log ||A_sn ... A_s1||`` with renormalization every few steps."""
    product = np.eye(f.dim)
    log_acc = 0.0
    for j, s in enumerate(indices, start=1):
        product = f.matrices[s] @ product
        if j % RENORMALIZE_EVERY == 0:
            scale = operator_norm(product, NormKind.SPECTRAL2)
            if scale == 0.0:
                return -math.inf
            product /= scale
            log_acc += math.log(scale)
    final = operator_norm(product, NormKind.SPECTRAL2)
    return -math.inf if final == 0.0 else log_acc + math.log(final)


def _run_trials(
    trials: int, seed: int, threads: int, work: Callable[[np.random.SeedSequence], float]
) -> list[float]:
    children = np.random.SeedSequence(seed).spawn(trials)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, children))
    return [work(child) for child in children]


def max_lyapunov_mc(
    f: MatrixFamily,
    model: MarkovModel,
    length: int,
    trials: int,
    seed: int,
    threads: int = 1,
) -> LyapunovEstimate:
    """Average of ``(1/n) log ||A_sigma(n) ... A_sigma(1)||`` over sampled laws."""
    _check_compatible(f, model)
    if trials < 1:
        raise DimensionError(f"trials must be positive, got {trials}")

    def one_trial(child: np.random.SeedSequence) -> float:
        rng = np.random.default_rng(child)
        return _log_growth(f, _sample_indices(model, length, rng)) / length

    samples = np.array(_run_trials(trials, seed, threads, one_trial))
    degenerate = bool(np.isneginf(samples).any())
    if degenerate:
        logger.warning("lyapunov_degenerate", zero_products=int(np.isneginf(samples).sum()))
        estimate, stderr = -math.inf, 0.0
    else:
        estimate = float(samples.mean())
        stderr = float(samples.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    logger.info("lyapunov_mc", estimate=estimate, stderr=stderr, length=length, trials=trials)
    return LyapunovEstimate(
        estimate=estimate,
        stderr=stderr,
        length=length,
        trials=trials,
        seed=seed,
        degenerate=degenerate,
    )


def almost_sure_stability(result: LyapunovEstimate) -> str:
    """Three-sigma verdict on the sign of the maximal exponent."""
    if result.estimate + 3.0 * result.stderr < 0.0:
        verdict = "stable"
    elif result.estimate - 3.0 * result.stderr > 0.0:
        verdict = "unstable"
    else:
        verdict = "inconclusive"
    return f"{verdict} ({SAMPLED_LABEL})"


def lyapunov_spectrum_qr(
    f: MatrixFamily,
    model: MarkovModel,
    length: int,
    seed: int,
    trials: int = 1,
    batches: int = 20,
) -> LyapunovSpectrum:
    """Full spectrum by QR re-orthogonalization along sampled laws.

    Standard errors come from batch means over ``batches`` equal blocks of each
    trajectory. A vanishing diagonal entry of R (singular product) drops that
    direction and every weaker one from the spectrum.
    """
    _check_compatible(f, model)
    if length < batches:
        raise DimensionError(f"length {length} shorter than the {batches} batches")
    d = f.dim
    block = length // batches
    block_means: list[NDArray[np.float64]] = []
    totals = np.zeros(d)
    keep = d

    for child in np.random.SeedSequence(seed).spawn(trials):
        indices = _sample_indices(model, length, np.random.default_rng(child))
        Q = np.eye(d)
        acc = np.zeros(d)
        block_acc = np.zeros(d)
        blocks = 0
        for j, s in enumerate(indices, start=1):
            Q, R = np.linalg.qr(f.matrices[s] @ Q)
            diag = np.abs(np.diag(R))
            zero = np.flatnonzero(diag < 1e-300)
            if zero.size:
                keep = min(keep, int(zero[0]))
                diag = np.where(diag < 1e-300, 1.0, diag)
            logs = np.log(diag)
            acc += logs
            block_acc += logs
            if j % block == 0 and blocks < batches:
                block_means.append(block_acc / block)
                block_acc = np.zeros(d)
                blocks += 1
        totals += acc / length

    means = np.array(block_means)
    order = np.argsort(-totals[:keep], kind="stable")
    exponents = totals[:keep][order] / trials
    errors = means[:, :keep].std(axis=0, ddof=1)[order] / math.sqrt(len(means))
    truncated = keep < d
    if truncated:
        logger.warning("spectrum_truncated", kept=keep, dim=d)
    logger.info("lyapunov_spectrum", exponents=exponents.tolist(), length=length)
    return LyapunovSpectrum(
        exponents=tuple(float(x) for x in exponents),
        trajectory_length=length,
        trials=trials,
        standard_errors=tuple(float(x) for x in errors),
        truncated=truncated,
    )


def exterior_lift(f: MatrixFamily, order: int) -> MatrixFamily:
    """The family of exterior powers, same constraint.

    Its maximal exponent is the sum of the ``order`` largest exponents of f.
    """
    if not 1 <= order <= f.dim:
        raise DimensionError(f"exterior order {order} outside 1..{f.dim}")
    lifted = np.stack([exterior_power(m, order) for m in f.matrices])
    return MatrixFamily(matrices=lifted, constraint=f.constraint, kept_indices=f.kept_indices)


def return_times(indices: NDArray[np.intp], window: int, max_length: int) -> NDArray[np.intp]:
    """Shifts n in 1..max_length where the law repeats its first ``window`` symbols."""
    views = sliding_window_view(indices[: max_length + window], window)[1 : max_length + 1]
    matches = (views == indices[:window]).all(axis=1)
    return np.flatnonzero(matches) + 1


def periodic_approximation(
    f: MatrixFamily,
    model: MarkovModel,
    seed: int,
    window: int = DEFAULT_WINDOW,
    max_length: int = 100_000,
    mc_trials: int = 4,
    keep_words: bool = False,
) -> PeriodicApproximation:
    """Closed words from near-returns of one sampled law, with their exponents.

    When the law repeats its first ``window`` symbols at shift n, the prefix of
    length n is a closed admissible word, since its last symbol is followed by
    the first one. Each such word contributes ``(1/n) log rho(product)``.
    """
    _check_compatible(f, model)
    if window < 1:
        raise DimensionError(f"window must be positive, got {window}")
    rng = np.random.default_rng(seed)
    indices = _sample_indices(model, max_length + window, rng)
    times = set(return_times(indices, window, max_length).tolist())

    returns: list[tuple[int, float]] = []
    words: list[Word] = []
    product = np.eye(f.dim)
    log_scale = 0.0
    for n, s in enumerate(indices[:max_length], start=1):
        product = f.matrices[s] @ product
        scale = float(np.sqrt(np.einsum("ij,ij->", product, product)))
        if scale == 0.0:
            log_scale = -math.inf
        else:
            product /= scale
            log_scale += math.log(scale)
        if n in times:
            rho = spectral_radius(product)
            exponent = (log_scale + math.log(rho)) / n if rho > 0.0 else -math.inf
            returns.append((n, exponent))
            if keep_words:
                words.append(tuple(int(x) + 1 for x in indices[:n]))

    if not returns:
        logger.warning("no_return_times", window=window, max_length=max_length)
    reference = max_lyapunov_mc(f, model, max_length, mc_trials, seed)
    logger.info("periodic_approximation", returns=len(returns), reference=reference.estimate)
    return PeriodicApproximation(
        returns=tuple(returns),
        reference=reference,
        window=window,
        max_length=max_length,
        words=tuple(words),
    )


def random_markov_model(k: int, seed: int, zero_fraction: float = 0.0) -> MarkovModel:
    """Random chain with about ``zero_fraction`` forbidden transitions.

    Each row keeps at least one positive entry.
    """
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.05, 1.0, size=(k, k))
    mask = rng.random((k, k)) < zero_fraction
    for i in range(k):
        if mask[i].all():
            mask[i, rng.integers(k)] = False
    weights[mask] = 0.0
    P = weights / weights.sum(axis=1, keepdims=True)
    return MarkovModel.create(P, seed=seed)
