"""Finite-n bounds on the constrained joint spectral radius and the checks built on them.

For a family A_1..A_K and a trimmed constraint, every n gives a rigorous bracket

    beta_n = max over closed words w of length n of rho(A_wn ... A_w1)^(1/n)
           <= jsr <=
    alpha_n = max over admissible words w of length n of ||A_wn ... A_w1||^(1/n)

and the sup of the left side equals the inf of the right side in the limit. We
never claim the limit itself: reports carry the bracket and the probed horizon.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray

from mjls_bounds.constraint_graph import (
    Constraint,
    PeriodicWord,
    Word,
    enumerate_periodic_words,
    trim,
)
from mjls_bounds.errors import DimensionError, NumericFlagError
from mjls_bounds.matrix_core import (
    MatrixStack,
    NormKind,
    as_stack,
    chain_products,
    operator_norm,
    operator_norms,
    spectral_radii,
)

logger = structlog.get_logger()

# Words are pushed through numpy in batches of this many.
CHUNK_SIZE = 4096
SANDWICH_SLACK = 1e-9
CERTIFICATE_SLACK = 1e-9
# Used in place of gamma when the decaying block norm is exactly zero.
GAMMA_FLOOR = 1e-6
SAMPLED_LABEL = "sampled, not certified"


@dataclass(frozen=True, eq=False)
class MatrixFamily:
    """Ordered matrices A_1..A_K with a trimmed constraint.

    ``kept_indices`` maps position k (1-based) back to the symbol the caller
    used before trimming removed dead symbols.
    """

    matrices: MatrixStack
    constraint: Constraint
    kept_indices: tuple[int, ...]

    @classmethod
    def create(cls, matrices: ArrayLike, constraint: Constraint | None = None) -> MatrixFamily:
        stack = as_stack(matrices)
        k = stack.shape[0]
        if constraint is None:
            constraint = Constraint.full(k)
        if constraint.k != k:
            raise DimensionError(f"constraint has {constraint.k} symbols but family has {k}")
        result = trim(constraint)
        keep = [i - 1 for i in result.kept_indices]
        return cls(
            matrices=stack[keep].copy(),
            constraint=result.trimmed,
            kept_indices=result.kept_indices,
        )

    @property
    def k(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrices.shape[1])

    def scaled(self, factor: float) -> MatrixFamily:
        return MatrixFamily(self.matrices * factor, self.constraint, self.kept_indices)

    def perturbed(self, direction: ArrayLike, delta: float) -> MatrixFamily:
        """``A_k + delta * D_k`` on the trimmed symbols, constraint unchanged."""
        shift = as_stack(direction)
        if shift.shape != self.matrices.shape:
            raise DimensionError(
                f"perturbation shape {shift.shape} does not match family {self.matrices.shape}"
            )
        return MatrixFamily(self.matrices + delta * shift, self.constraint, self.kept_indices)

    def original_word(self, word: Sequence[int]) -> Word:
        """Translate a word over trimmed positions back to the caller's symbols."""
        return tuple(self.kept_indices[s - 1] for s in word)


@dataclass(frozen=True)
class BoundsTrace:
    """Per-length bounds with running aggregates."""

    n_values: tuple[int, ...]
    lower: tuple[float | None, ...]
    upper: tuple[float, ...]
    norm: NormKind
    lower_running: tuple[float | None, ...]
    upper_running: tuple[float, ...]

    @property
    def lower_sup(self) -> float | None:
        return self.lower_running[-1] if self.lower_running else None

    @property
    def upper_inf(self) -> float:
        return self.upper_running[-1]

    @property
    def gap(self) -> float | None:
        if self.lower_sup is None:
            return None
        return self.upper_inf - self.lower_sup


@dataclass(frozen=True)
class DecayCertificate:
    """``||A_wm ... A_w1|| <= c * gamma**m`` for every admissible word."""

    c: float
    gamma: float
    witness_n: int
    verified_up_to: int


@dataclass(frozen=True)
class DilationResult:
    passed: bool
    witness: PeriodicWord | None
    witness_value: float | None
    worst_value: float
    max_n: int


@dataclass(frozen=True)
class RobustnessProbe:
    passed: bool
    worst_margin: float
    worst_source: str
    worst_perturbation: MatrixStack | None
    samples: int
    max_n: int
    label: str = SAMPLED_LABEL


@dataclass(frozen=True)
class ContinuityRow:
    delta: float
    lower_sup: float | None
    upper_inf: float
    lower_shift: float | None
    upper_shift: float


@dataclass
class _Best:
    """Running maxima of log word norms keyed by length."""

    values: dict[int, float] = field(default_factory=dict)

    def merge(self, other: _Best) -> None:
        for n, v in other.values.items():
            self.values[n] = max(self.values.get(n, -math.inf), v)


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def _periodic_log_radii(
    f: MatrixFamily, n: int, dedupe_rotations: bool = True
) -> Iterator[tuple[list[PeriodicWord], NDArray[np.float64]]]:
    """Chunks of closed words of length n with ``log rho`` of their products."""
    words = enumerate_periodic_words(n, f.constraint, dedupe_rotations=dedupe_rotations)
    while True:
        chunk = [w for _, w in zip(range(CHUNK_SIZE), words, strict=False)]
        if not chunk:
            return
        indices = np.array(chunk, dtype=np.intp) - 1
        products, log_scale = chain_products(f.matrices, indices)
        radii = spectral_radii(products)
        with np.errstate(divide="ignore"):
            log_rho = log_scale + np.log(radii)
        yield chunk, log_rho


def _max_log_radius(f: MatrixFamily, n: int) -> tuple[float, PeriodicWord | None]:
    best, witness = -math.inf, None
    for chunk, log_rho in _periodic_log_radii(f, n):
        i = int(np.argmax(log_rho))
        if witness is None or log_rho[i] > best:
            best, witness = float(log_rho[i]), chunk[i]
    return best, witness


def lower_bound(f: MatrixFamily, n: int) -> float | None:
    """beta_n, or None when no closed word of length n exists."""
    if n < 1:
        raise DimensionError(f"length must be positive, got {n}")
    log_rho, witness = _max_log_radius(f, n)
    if witness is None:
        return None
    return math.exp(log_rho / n)


def _search_word_norms(
    f: MatrixFamily,
    targets: frozenset[int],
    norm: NormKind,
    prune: bool,
    first: int,
) -> _Best:
    """Depth-first maxima of ``log ||product||`` over words starting at ``first``.

    A prefix of length m with log norm ``v`` is abandoned once
    ``v + (t - m) * log(max_k ||A_k||)`` cannot beat the best for any target t > m;
    submultiplicativity makes this sound for the maxima.
    """
    top = max(targets)
    letters = f.matrices
    succ = f.constraint.successors()
    log_letter = _safe_log(float(operator_norms(letters, norm).max()))
    best = _Best({t: -math.inf for t in targets})

    def visit(symbol: int, depth: int, product: NDArray[np.float64], log_scale: float) -> None:
        log_norm = log_scale + _safe_log(operator_norm(product, norm))
        if depth in targets and log_norm > best.values[depth]:
            best.values[depth] = log_norm
        if depth == top:
            return
        if prune and all(
            log_norm + (t - depth) * log_letter <= best.values[t] for t in targets if t > depth
        ):
            return
        for nxt in succ[symbol]:
            child = letters[nxt - 1] @ product
            scale = float(np.sqrt(np.einsum("ij,ij->", child, child)))
            if scale == 0.0:
                visit(nxt, depth + 1, child, -math.inf)
            else:
                visit(nxt, depth + 1, child / scale, log_scale + math.log(scale))

    start = letters[first - 1]
    scale = float(np.sqrt(np.einsum("ij,ij->", start, start)))
    if scale == 0.0:
        visit(first, 1, start, -math.inf)
    else:
        visit(first, 1, start / scale, math.log(scale))
    return best


def max_log_word_norms(
    f: MatrixFamily,
    lengths: Sequence[int],
    norm: NormKind = NormKind.SPECTRAL2,
    prune: bool = True,
    threads: int = 1,
) -> dict[int, float]:
    """``max log ||A_wn ... A_w1||`` over admissible words, for each requested length.

    The search is partitioned by first symbol; with ``threads > 1`` the parts run
    on a thread pool and their maxima are merged.
    """
    targets = frozenset(lengths)
    if not targets or min(targets) < 1:
        raise DimensionError(f"lengths must be positive, got {sorted(targets)}")
    firsts = range(1, f.k + 1)
    total = _Best({t: -math.inf for t in targets})
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(lambda s: _search_word_norms(f, targets, norm, prune, s), firsts)
            )
    else:
        parts = [_search_word_norms(f, targets, norm, prune, s) for s in firsts]
    for part in parts:
        total.merge(part)
    return total.values


def upper_bound(
    f: MatrixFamily,
    n: int,
    norm: NormKind = NormKind.SPECTRAL2,
    prune: bool = True,
    threads: int = 1,
) -> float:
    """alpha_n under the given norm."""
    log_norm = max_log_word_norms(f, [n], norm, prune, threads)[n]
    return math.exp(log_norm / n)


def estimate_jsr(
    f: MatrixFamily,
    max_n: int,
    norm: NormKind = NormKind.SPECTRAL2,
    prune: bool = True,
    threads: int = 1,
) -> BoundsTrace:
    """beta_n and alpha_n for n = 1..max_n with their running sup and inf."""
    if max_n < 1:
        raise DimensionError(f"max_n must be positive, got {max_n}")
    n_values = tuple(range(1, max_n + 1))
    log_norms = max_log_word_norms(f, n_values, norm, prune, threads)

    lower: list[float | None] = []
    upper: list[float] = []
    lower_running: list[float | None] = []
    upper_running: list[float] = []
    sup: float | None = None
    inf = math.inf
    for n in n_values:
        beta = lower_bound(f, n)
        alpha = math.exp(log_norms[n] / n)
        lower.append(beta)
        upper.append(alpha)
        if beta is not None:
            sup = beta if sup is None else max(sup, beta)
        inf = min(inf, alpha)
        lower_running.append(sup)
        upper_running.append(inf)
        logger.debug("bounds_at_length", n=n, lower=beta, upper=alpha)

    trace = BoundsTrace(
        n_values=n_values,
        lower=tuple(lower),
        upper=tuple(upper),
        norm=norm,
        lower_running=tuple(lower_running),
        upper_running=tuple(upper_running),
    )
    if trace.gap is not None and trace.gap < -SANDWICH_SLACK:
        raise NumericFlagError(
            f"bracket inverted: lower {trace.lower_sup!r} exceeds upper {trace.upper_inf!r}"
        )
    logger.info(
        "jsr_bracket",
        max_n=max_n,
        norm=str(norm),
        lower_sup=trace.lower_sup,
        upper_inf=trace.upper_inf,
    )
    return trace


def complete_periodic_stability_margin(f: MatrixFamily, max_n: int) -> float:
    """max rho(A_wn ... A_w1) over closed words of length at most max_n (not rooted).

    Returns 0.0 when no closed word of length at most max_n exists.
    """
    return eventual_stability_margin(f, 1, max_n)


def eventual_stability_margin(f: MatrixFamily, start_n: int, max_n: int) -> float:
    """max rho(A_wn ... A_w1) over closed words with start_n <= n <= max_n."""
    if not 1 <= start_n <= max_n:
        raise DimensionError(f"need 1 <= start_n <= max_n, got {start_n}, {max_n}")
    best = -math.inf
    for n in range(start_n, max_n + 1):
        log_rho, _ = _max_log_radius(f, n)
        best = max(best, log_rho)
    if best == -math.inf:
        logger.warning("no_closed_words_probed", start_n=start_n, max_n=max_n)
    return math.exp(best)


def dilation_check(f: MatrixFamily, alpha: float, max_n: int) -> DilationResult:
    """Check ``alpha**n * rho(product) < 1`` for every closed word with n <= max_n.

    The witness is the first violating word in (length, lexicographic) order.
    """
    if alpha < 1.0:
        raise DimensionError(f"dilation factor must be >= 1, got {alpha}")
    log_alpha = math.log(alpha)
    worst = -math.inf
    witness: PeriodicWord | None = None
    witness_value: float | None = None
    for n in range(1, max_n + 1):
        for chunk, log_rho in _periodic_log_radii(f, n):
            dilated = n * log_alpha + log_rho
            worst = max(worst, float(dilated.max()))
            if witness is None:
                bad = np.flatnonzero(dilated >= 0.0)
                if bad.size:
                    witness = chunk[int(bad[0])]
                    witness_value = math.exp(float(dilated[bad[0]]))
    return DilationResult(
        passed=witness is None,
        witness=witness,
        witness_value=witness_value,
        worst_value=math.exp(worst),
        max_n=max_n,
    )


def _random_perturbation(
    rng: np.random.Generator, shape: tuple[int, ...], epsilon: float
) -> MatrixStack:
    """Perturbation with every slice of spectral norm strictly below epsilon."""
    raw = rng.standard_normal(shape)
    norms = operator_norms(raw, NormKind.SPECTRAL2)
    norms = np.where(norms == 0.0, 1.0, norms)
    radius = epsilon * rng.uniform(0.0, 1.0, size=shape[0]) * (1.0 - 1e-9)
    return np.asarray(raw / norms[:, None, None] * radius[:, None, None], dtype=np.float64)


def robust_periodic_stability_probe(
    f: MatrixFamily, epsilon: float, max_n: int, samples: int, seed: int
) -> RobustnessProbe:
    """Sample the epsilon-ball around the family for a periodically unstable member.

    Always tests the dilation ``(1 + epsilon/2) A_k`` first. Passing is only a
    necessary condition: a finite sample cannot certify the whole ball.
    """
    if epsilon <= 0.0:
        raise DimensionError(f"epsilon must be positive, got {epsilon}")
    dilated = f.scaled(1.0 + epsilon / 2.0)
    worst = complete_periodic_stability_margin(dilated, max_n)
    worst_source = "dilation"
    worst_perturbation: MatrixStack | None = dilated.matrices - f.matrices

    rng = np.random.default_rng(seed)
    for i in range(samples):
        shift = _random_perturbation(rng, f.matrices.shape, epsilon)
        candidate = MatrixFamily(f.matrices + shift, f.constraint, f.kept_indices)
        margin = complete_periodic_stability_margin(candidate, max_n)
        if margin > worst:
            worst, worst_source, worst_perturbation = margin, f"sample[{i}]", shift

    passed = worst < 1.0
    logger.info(
        "robustness_probe",
        epsilon=epsilon,
        samples=samples,
        worst_margin=worst,
        source=worst_source,
        passed=passed,
    )
    return RobustnessProbe(
        passed=passed,
        worst_margin=worst,
        worst_source=worst_source,
        worst_perturbation=worst_perturbation,
        samples=samples,
        max_n=max_n,
    )


def verify_certificate(f: MatrixFamily, certificate: DecayCertificate, max_length: int) -> float:
    """Largest ``||product|| - c * gamma**m`` over admissible words of length <= max_length."""
    lengths = range(1, max_length + 1)
    log_norms = max_log_word_norms(f, lengths, NormKind.SPECTRAL2)
    return max(
        math.exp(log_norms[m]) - certificate.c * certificate.gamma**m for m in lengths
    )


def stability_certificate(f: MatrixFamily, max_n: int) -> DecayCertificate | None:
    """Uniform exponential decay certificate from the first alpha_n below 1.

    Any word splits into blocks of length n* plus a remainder r < n*, so
    ``||product|| <= N_r * gamma**(m - r)`` with ``N_r`` the largest norm of a
    length-r word (``N_0 = 1``). Hence ``c = max(1, max_r N_r / gamma**r)``.
    """
    if max_n < 1:
        raise DimensionError(f"max_n must be positive, got {max_n}")
    log_norms = max_log_word_norms(f, range(1, max_n + 1), NormKind.SPECTRAL2)
    witness_n = next((n for n in range(1, max_n + 1) if log_norms[n] < 0.0), None)
    if witness_n is None:
        logger.info("no_certificate", max_n=max_n)
        return None

    gamma = max(math.exp(log_norms[witness_n] / witness_n), GAMMA_FLOOR)
    c = 1.0
    for r in range(1, witness_n):
        c = max(c, math.exp(log_norms[r] - r * math.log(gamma)))
    certificate = DecayCertificate(
        c=c, gamma=gamma, witness_n=witness_n, verified_up_to=2 * witness_n
    )

    excess = verify_certificate(f, certificate, 2 * witness_n)
    if excess > CERTIFICATE_SLACK:
        raise NumericFlagError(f"decay certificate fails by {excess:.3g}")
    logger.info("certificate", c=c, gamma=gamma, witness_n=witness_n)
    return certificate


def continuity_probe(
    f: MatrixFamily,
    direction: ArrayLike,
    deltas: Sequence[float],
    max_n: int,
    norm: NormKind = NormKind.SPECTRAL2,
) -> list[ContinuityRow]:
    """Bracket shifts of ``f + delta * direction`` relative to ``f``."""
    if any(d < 0.0 for d in deltas) or any(a < b for a, b in zip(deltas, deltas[1:], strict=False)):
        raise DimensionError("deltas must be nonnegative and nonincreasing")
    base = estimate_jsr(f, max_n, norm)
    rows = []
    for delta in deltas:
        trace = estimate_jsr(f.perturbed(direction, delta), max_n, norm)
        lower_shift = (
            None
            if trace.lower_sup is None or base.lower_sup is None
            else abs(trace.lower_sup - base.lower_sup)
        )
        rows.append(
            ContinuityRow(
                delta=delta,
                lower_sup=trace.lower_sup,
                upper_inf=trace.upper_inf,
                lower_shift=lower_shift,
                upper_shift=abs(trace.upper_inf - base.upper_inf),
            )
        )
    return rows
