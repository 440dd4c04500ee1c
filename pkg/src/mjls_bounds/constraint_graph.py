"""The {0,1} constraint matrix as a digraph: trimming, admissibility, word enumeration.

Symbols are 1-based throughout, matching the labels users write in configs.
Enumeration is streaming: the number of words grows like the spectral radius
of the constraint to the power n, so nothing is materialized.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from math import gcd

import networkx as nx
import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray

from mjls_bounds.errors import DimensionError, EmptyConstraintError

logger = structlog.get_logger()

Word = tuple[int, ...]
# A Word whose last-to-first transition is also admissible.
PeriodicWord = Word


@dataclass(frozen=True, eq=False)
class Constraint:
    """K-by-K {0,1} transition matrix; ``entries[i-1, j-1] == 1`` allows i -> j."""

    entries: NDArray[np.int64]

    @classmethod
    def from_rows(cls, rows: ArrayLike) -> Constraint:
        arr = np.array(rows)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimensionError(f"constraint must be a non-empty square array, got {arr.shape}")
        if not np.all((arr == 0) | (arr == 1)):
            raise DimensionError("constraint entries must be 0 or 1")
        return cls(entries=arr.astype(np.int64))

    @classmethod
    def full(cls, k: int) -> Constraint:
        """Unconstrained switching among k symbols."""
        return cls(entries=np.ones((k, k), dtype=np.int64))

    @property
    def k(self) -> int:
        return int(self.entries.shape[0])

    def allows(self, i: int, j: int) -> bool:
        return bool(self.entries[i - 1, j - 1])

    def successors(self) -> dict[int, tuple[int, ...]]:
        """Admissible next symbols for every symbol, ascending."""
        return {
            i + 1: tuple(int(j) + 1 for j in np.flatnonzero(self.entries[i]))
            for i in range(self.k)
        }

    def is_trimmed(self) -> bool:
        return bool(self.entries.any(axis=1).all() and self.entries.any(axis=0).all())

    def to_rows(self) -> list[list[int]]:
        return [[int(x) for x in row] for row in self.entries]


@dataclass(frozen=True)
class TrimResult:
    """Surviving 1-based symbols and the induced constraint on them."""

    kept_indices: tuple[int, ...]
    trimmed: Constraint


@dataclass(frozen=True)
class Primitivity:
    """Graph diagnostics of a constraint; ``period`` is 0 when reducible."""

    irreducible: bool
    aperiodic: bool
    period: int


def trim(c: Constraint) -> TrimResult:
    """Delete symbols with an empty row or column until none remain.

    The result satisfies the standing assumption that every row and every column
    holds a 1. Raises EmptyConstraintError when nothing survives.
    """
    alive = np.ones(c.k, dtype=bool)
    while True:
        sub = c.entries[np.ix_(alive, alive)]
        keep = sub.any(axis=1) & sub.any(axis=0)
        if keep.all():
            break
        alive[np.flatnonzero(alive)[~keep]] = False
        if not alive.any():
            raise EmptyConstraintError(
                "trimming removed every symbol: no admissible infinite switching law exists"
            )

    kept = tuple(int(i) + 1 for i in np.flatnonzero(alive))
    if len(kept) < c.k:
        logger.info("constraint_trimmed", kept=kept, removed=c.k - len(kept))
    return TrimResult(kept_indices=kept, trimmed=Constraint(entries=sub.copy()))


def _check_symbols(w: Sequence[int], c: Constraint) -> None:
    if not w:
        raise DimensionError("words have length at least 1")
    bad = [s for s in w if not 1 <= s <= c.k]
    if bad:
        raise DimensionError(f"symbols {bad} outside 1..{c.k}")


def is_admissible(w: Sequence[int], c: Constraint) -> bool:
    """True iff every adjacent pair of ``w`` is allowed by ``c``."""
    _check_symbols(w, c)
    return all(c.allows(a, b) for a, b in zip(w, w[1:], strict=False))


def is_periodic_word(w: Sequence[int], c: Constraint) -> bool:
    """Admissible and closes a cycle: the last-to-first transition is allowed too."""
    return is_admissible(w, c) and c.allows(w[-1], w[0])


def rotation_representative(w: Sequence[int]) -> Word:
    """Lexicographically minimal cyclic rotation of ``w``."""
    word = tuple(w)
    return min(word[i:] + word[:i] for i in range(len(word)))


def _walk(
    start: int, n: int, succ: dict[int, tuple[int, ...]], floor: int = 1
) -> Iterator[Word]:
    """Depth-first walk of all admissible words of length n beginning at ``start``.

    Symbols below ``floor`` are never visited after the first position.
    """
    if n == 1:
        yield (start,)
        return
    word = [start]
    stack = [iter(succ[start])]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            word.pop()
            continue
        if nxt < floor:
            continue
        word.append(nxt)
        if len(word) == n:
            yield tuple(word)
            word.pop()
        else:
            stack.append(iter(succ[nxt]))


def enumerate_words(n: int, c: Constraint, first: int | None = None) -> Iterator[Word]:
    """Every admissible word of length n exactly once, in lexicographic order.

    ``first`` restricts the stream to words starting with that symbol, which is
    how callers partition the work.
    """
    if n < 1:
        raise DimensionError(f"word length must be positive, got {n}")
    succ = c.successors()
    starts = range(1, c.k + 1) if first is None else (first,)
    for start in starts:
        yield from _walk(start, n, succ)


def enumerate_periodic_words(
    n: int, c: Constraint, dedupe_rotations: bool = False, first: int | None = None
) -> Iterator[PeriodicWord]:
    """Every closed admissible word of length n, optionally one per rotation class.

    With ``dedupe_rotations`` only the lexicographically minimal rotation of each
    class is produced; it starts with the smallest symbol it contains, so the walk
    never descends below the first symbol.
    """
    if n < 1:
        raise DimensionError(f"word length must be positive, got {n}")
    succ = c.successors()
    starts = range(1, c.k + 1) if first is None else (first,)
    for start in starts:
        floor = start if dedupe_rotations else 1
        for word in _walk(start, n, succ, floor):
            if not c.allows(word[-1], start):
                continue
            if dedupe_rotations and word != rotation_representative(word):
                continue
            yield word


def _integer_power(c: Constraint, n: int) -> NDArray[np.object_]:
    base = c.entries.astype(object)
    result = np.identity(c.k, dtype=int).astype(object)
    for _ in range(n):
        result = result @ base
    return result


def count_words(n: int, c: Constraint) -> int:
    """Exact number of admissible words of length n: the entry sum of A^(n-1)."""
    return int(_integer_power(c, n - 1).sum())


def count_periodic_words(n: int, c: Constraint) -> int:
    """Exact number of closed words of length n: trace(A^n)."""
    return int(np.trace(_integer_power(c, n)))


def primitivity(c: Constraint) -> Primitivity:
    """Irreducibility, aperiodicity, and period of the constraint digraph."""
    graph = nx.from_numpy_array(c.entries, create_using=nx.DiGraph)
    irreducible = bool(nx.is_strongly_connected(graph))
    if not irreducible:
        return Primitivity(irreducible=False, aperiodic=False, period=0)

    levels = nx.single_source_shortest_path_length(graph, 0)
    period = 0
    for u, v in graph.edges():
        period = gcd(period, levels[u] + 1 - levels[v])
    return Primitivity(irreducible=True, aperiodic=period == 1, period=period)
