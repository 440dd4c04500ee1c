"""Tests for constraint trimming, admissibility and word enumeration."""

from __future__ import annotations

import numpy as np
import pytest

from mjls_bounds.constraint_graph import (
    Constraint,
    count_periodic_words,
    count_words,
    enumerate_periodic_words,
    enumerate_words,
    is_admissible,
    is_periodic_word,
    primitivity,
    rotation_representative,
    trim,
)
from mjls_bounds.errors import DimensionError, EmptyConstraintError
from tests.oracles import random_trimmed_constraint

GOLDEN_MEAN = Constraint.from_rows([[1, 1], [1, 0]])


class TestConstraint:
    """Test construction and basic queries."""

    def test_from_rows_rejects_non_binary(self) -> None:
        with pytest.raises(DimensionError):
            Constraint.from_rows([[1, 2], [0, 1]])

    def test_from_rows_rejects_non_square(self) -> None:
        with pytest.raises(DimensionError):
            Constraint.from_rows([[1, 1, 0]])

    def test_successors_are_one_based(self) -> None:
        assert GOLDEN_MEAN.successors() == {1: (1, 2), 2: (1,)}

    def test_full(self) -> None:
        c = Constraint.full(3)
        assert c.k == 3
        assert c.is_trimmed()
        assert c.to_rows() == [[1, 1, 1]] * 3


class TestTrim:
    """Test deletion of dead symbols."""

    def test_already_trimmed(self) -> None:
        result = trim(GOLDEN_MEAN)
        assert result.kept_indices == (1, 2)
        assert result.trimmed.to_rows() == GOLDEN_MEAN.to_rows()

    def test_removes_source_and_sink(self) -> None:
        # 1 is never entered, 3 never left.
        c = Constraint.from_rows([[0, 1, 0], [0, 1, 1], [0, 0, 0]])
        result = trim(c)
        assert result.kept_indices == (2,)
        assert result.trimmed.to_rows() == [[1]]

    def test_cascading_removal(self) -> None:
        c = Constraint.from_rows([[1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0]])
        assert trim(c).kept_indices == (1,)

    def test_empty_result(self) -> None:
        with pytest.raises(EmptyConstraintError):
            trim(Constraint.from_rows([[0, 1], [0, 0]]))

    def test_result_is_trimmed(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(50):
            c = Constraint(entries=(rng.random((5, 5)) < 0.35).astype(np.int64))
            try:
                result = trim(c)
            except EmptyConstraintError:
                continue
            assert result.trimmed.is_trimmed()


class TestWords:
    """Test admissibility predicates."""

    def test_admissible(self) -> None:
        assert is_admissible((1, 1, 2, 1), GOLDEN_MEAN)
        assert not is_admissible((1, 2, 2), GOLDEN_MEAN)

    def test_single_symbol_is_admissible(self) -> None:
        assert is_admissible((2,), GOLDEN_MEAN)

    def test_periodic_needs_wrap(self) -> None:
        assert is_periodic_word((1, 2), GOLDEN_MEAN)
        assert not is_periodic_word((2,), GOLDEN_MEAN)

    def test_symbol_out_of_range(self) -> None:
        with pytest.raises(DimensionError):
            is_admissible((1, 3), GOLDEN_MEAN)

    def test_empty_word(self) -> None:
        with pytest.raises(DimensionError):
            is_admissible((), GOLDEN_MEAN)

    def test_rotation_representative(self) -> None:
        assert rotation_representative((2, 1, 1)) == (1, 1, 2)
        assert rotation_representative((1, 2, 1, 2)) == (1, 2, 1, 2)


class TestEnumeration:
    """Test streaming enumeration against exact counts."""

    def test_golden_mean_words(self) -> None:
        assert list(enumerate_words(3, GOLDEN_MEAN)) == [
            (1, 1, 1),
            (1, 1, 2),
            (1, 2, 1),
            (2, 1, 1),
            (2, 1, 2),
        ]

    def test_full_shift_count(self) -> None:
        assert sum(1 for _ in enumerate_words(5, Constraint.full(3))) == 3**5

    def test_words_are_unique_and_admissible(self) -> None:
        words = list(enumerate_words(6, GOLDEN_MEAN))
        assert len(words) == len(set(words))
        assert all(is_admissible(w, GOLDEN_MEAN) for w in words)

    def test_first_symbol_partition(self) -> None:
        c = Constraint.from_rows([[1, 1, 0], [0, 1, 1], [1, 0, 1]])
        parts = [list(enumerate_words(4, c, first=s)) for s in (1, 2, 3)]
        assert sum(parts, []) == list(enumerate_words(4, c))

    def test_word_count_matches_matrix_power(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(20):
            c = random_trimmed_constraint(rng, int(rng.integers(1, 5)))
            ones = np.ones(c.k, dtype=np.int64)
            expected = int(ones @ np.linalg.matrix_power(c.entries, 7) @ ones)
            assert count_words(8, c) == expected
            assert sum(1 for _ in enumerate_words(8, c)) == expected

    def test_periodic_count_is_trace(self) -> None:
        rng = np.random.default_rng(2)
        for _ in range(100):
            c = random_trimmed_constraint(rng, int(rng.integers(1, 6)))
            for n in range(1, 9):
                expected = int(np.trace(np.linalg.matrix_power(c.entries, n)))
                assert sum(1 for _ in enumerate_periodic_words(n, c)) == expected
                assert count_periodic_words(n, c) == expected

    def test_periodic_words_close(self) -> None:
        words = list(enumerate_periodic_words(5, GOLDEN_MEAN))
        assert words
        assert all(is_periodic_word(w, GOLDEN_MEAN) for w in words)

    def test_dedupe_keeps_one_per_rotation_class(self) -> None:
        c = Constraint.full(2)
        full = list(enumerate_periodic_words(4, c))
        deduped = list(enumerate_periodic_words(4, c, dedupe_rotations=True))
        assert set(deduped) == {rotation_representative(w) for w in full}
        assert deduped == sorted(deduped)

    def test_dedupe_on_constrained_graph(self) -> None:
        c = Constraint.from_rows([[0, 1, 0], [0, 0, 1], [1, 1, 0]])
        full = list(enumerate_periodic_words(6, c))
        deduped = set(enumerate_periodic_words(6, c, dedupe_rotations=True))
        assert deduped == {rotation_representative(w) for w in full}

    def test_no_periodic_word_of_length(self) -> None:
        c = Constraint.from_rows([[0, 1], [1, 0]])
        assert list(enumerate_periodic_words(3, c)) == []

    def test_length_must_be_positive(self) -> None:
        with pytest.raises(DimensionError):
            list(enumerate_words(0, GOLDEN_MEAN))

    def test_large_count_is_exact(self) -> None:
        # Exceeds int64 in the entry sum.
        assert count_words(60, Constraint.full(3)) == 3 * 3**59


class TestPrimitivity:
    """Test graph diagnostics."""

    def test_primitive(self) -> None:
        result = primitivity(GOLDEN_MEAN)
        assert result.irreducible
        assert result.aperiodic
        assert result.period == 1

    def test_cyclic(self) -> None:
        result = primitivity(Constraint.from_rows([[0, 1, 0], [0, 0, 1], [1, 0, 0]]))
        assert result.irreducible
        assert not result.aperiodic
        assert result.period == 3

    def test_reducible(self) -> None:
        result = primitivity(Constraint.from_rows([[1, 1], [0, 1]]))
        assert not result.irreducible
        assert result.period == 0
