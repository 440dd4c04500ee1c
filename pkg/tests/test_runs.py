"""Tests for running problem configs."""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from typing import Any

import numpy as np
import pytest

from mjls_bounds.config import OdeProblem, parse_problem
from mjls_bounds.errors import ConfigError
from mjls_bounds.runs import _default_subdivision, run_problem


def _parse(data: dict[str, Any]) -> Any:
    return parse_problem(json.dumps(data))


class TestRunJsr:
    """Test the joint spectral radius run."""

    def test_results_and_trace(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        outcome = run_problem(_parse(problem_json("jsr_small")))
        report = outcome.report
        assert report.results["kept_indices"] == [1, 2]
        assert report.results["pruned"] is True
        assert report.results["certificate"] is None
        assert "not certified" in report.verdicts["uniform_stability"]
        header, rows = outcome.traces["bounds"]
        assert header[0] == "n"
        assert [row[0] for row in rows] == [1, 2, 3, 4]

    def test_oracle_mode_matches(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        problem = _parse(problem_json("jsr_small"))
        pruned = run_problem(problem).report.results["bracket"]
        exhaustive = run_problem(problem, oracle_mode=True).report
        assert exhaustive.results["pruned"] is False
        assert exhaustive.results["bracket"]["upper_inf"] == pytest.approx(
            pruned["upper_inf"], rel=1e-12
        )

    def test_constrained_optional_stages(
        self, problem_json: Callable[[str], dict[str, Any]]
    ) -> None:
        data = problem_json("jsr_small") | {
            "matrices": [[[0.6, 0.3], [0.0, 0.5]], [[0.4, 0.0], [0.5, 0.3]]],
            "constraint": [[0, 1], [1, 1]],
            "dilation_alpha": 1.1,
            "robustness": {"epsilon": 0.01, "samples": 4, "seed": 1},
            "continuity": {
                "direction": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]],
                "deltas": [0.1, 0.01],
            },
        }
        report = run_problem(_parse(data)).report
        assert report.flags == []
        assert report.seeds == {"robustness": 1}
        assert report.results["certificate"] is not None
        assert report.results["certificate"]["gamma"] < 1.0
        assert len(report.results["continuity"]) == 2
        assert "robustness" in report.verdicts


class TestRunMarkov:
    """Test the Markov run."""

    def test_scalar_chain(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        outcome = run_problem(_parse(problem_json("markov_small")))
        report = outcome.report
        assert report.seeds == {"seed": 3}
        assert report.results["stationary"]["p_vec"] == pytest.approx([0.5, 0.5])
        assert report.verdicts["almost_sure_stability"].endswith("(sampled, not certified)")
        assert outcome.traces["periodic"][0] == ["n", "exponent"]

    def test_never_entered_state(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        data = problem_json("markov_small") | {
            "p_matrix": [[0.0, 1.0], [0.0, 1.0]],
            "p_vec": [0.0, 1.0],
        }
        with pytest.raises(ConfigError, match="never entered"):
            run_problem(_parse(data))

    def test_alternating_chain_table(self) -> None:
        a1 = [[0.5, 1.0], [0.0, 0.8]]
        a2 = [[0.9, 0.0], [0.3, 0.4]]
        data = {
            "kind": "markov",
            "matrices": [a1, a2],
            "p_matrix": [[0.0, 1.0], [1.0, 0.0]],
            "initial": [1.0, 0.0],
            "seed": 0,
            "length": 100,
            "trials": 2,
            "spectrum_length": 40,
            "window": 2,
            "max_length": 40,
        }
        outcome = run_problem(_parse(data))
        _, rows = outcome.traces["periodic"]
        assert [row[0] for row in rows] == list(range(2, 41, 2))
        expected = 0.5 * math.log(max(abs(np.linalg.eigvals(np.array(a2) @ np.array(a1)))))
        for _, exponent in rows:
            assert exponent == pytest.approx(expected, abs=1e-12)

    def test_exterior_order(self) -> None:
        data = {
            "kind": "markov",
            "matrices": [[[0.5, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 0.25]]],
            "p_matrix": [[0.5, 0.5], [0.5, 0.5]],
            "seed": 5,
            "length": 200,
            "trials": 2,
            "spectrum_length": 200,
            "window": 2,
            "max_length": 100,
            "exterior_order": 2,
        }
        exterior = run_problem(_parse(data)).report.results["exterior"]
        assert exterior["order"] == 2
        # the lifted family is scalar: log det averages to (log 1 + log 0.25) / 2
        expected = 0.5 * math.log(0.25)
        assert exterior["lyapunov_mc"]["estimate"] == pytest.approx(expected, abs=0.25)
        assert exterior["spectrum_partial_sum"] == pytest.approx(expected, abs=0.25)


class TestRunRotation:
    """Test the rotation run."""

    def test_periodic_not_uniform(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        outcome = run_problem(_parse(problem_json("rotation_small")))
        results = outcome.report.results
        assert [q for _, q in results["convergents"]] == [2, 3, 5, 8]
        assert all(row["passed"] for row in results["closing"])
        assert results["dirichlet"] is True
        assert len(outcome.traces["periodic"][1]) == 4

    def test_spectral_finiteness(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        data = problem_json("rotation_small") | {
            "cocycle": "spectral_finiteness",
            "side": "below",
        }
        outcome = run_problem(_parse(data))
        assert "no probed periodic orbit" in outcome.report.verdicts["spectral_finiteness"]
        header, rows = outcome.traces["periodic"]
        assert header == ["p", "q", "closed_form", "numeric"]
        assert rows[0][:2] == [1, 2]


class TestRunOde:
    """Test the continuous-time run."""

    def test_default_subdivision(self) -> None:
        assert _default_subdivision(2.0) == [0.0, 1.0, 2.0]
        assert _default_subdivision(0.5) == [0.0, 0.5]
        points = _default_subdivision(6.283185307179586)
        assert len(points) == 7
        assert points[-1] == 6.283185307179586
        assert all(b - a >= 1.0 for a, b in zip(points, points[1:], strict=False))

    def test_contraction(self, problem_json: Callable[[str], dict[str, Any]]) -> None:
        problem = _parse(problem_json("ode_small"))
        assert isinstance(problem, OdeProblem)
        outcome = run_problem(problem)
        results = outcome.report.results
        assert results["quasi_contraction"]["passed"] is True
        assert outcome.report.verdicts["quasi_contraction"] == "passed"
        assert results["decay_fit"] is not None
        assert len(outcome.traces["log_norm"][1]) == 11

    def test_fixed_driving_skips_periodic_stages(
        self, problem_json: Callable[[str], dict[str, Any]]
    ) -> None:
        data = problem_json("ode_small") | {"driving": "rotation", "speed": 0.0}
        del data["period"]
        results = run_problem(_parse(data)).report.results
        assert "quasi_contraction" not in results
        assert "decay_fit" in results
