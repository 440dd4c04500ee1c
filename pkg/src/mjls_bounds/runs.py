"""Run a validated problem config and assemble its report and traces."""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, TypeVar

import numpy as np
import structlog

from mjls_bounds.config import (
    JsrProblem,
    MarkovProblem,
    OdeProblem,
    ProblemConfig,
    RotationProblem,
    config_hash,
)
from mjls_bounds.constraint_graph import Constraint, primitivity
from mjls_bounds.errors import ConfigError, NumericFlagError
from mjls_bounds.jsr_bounds import (
    MatrixFamily,
    complete_periodic_stability_margin,
    continuity_probe,
    dilation_check,
    estimate_jsr,
    robust_periodic_stability_probe,
    stability_certificate,
)
from mjls_bounds.markov_mjls import (
    MarkovModel,
    almost_sure_stability,
    constraint_of,
    exterior_lift,
    lyapunov_spectrum_qr,
    max_lyapunov_mc,
    periodic_approximation,
)
from mjls_bounds.ode_flow import (
    CircleRotation,
    LinearFlow,
    PeriodicOrbit,
    TrigGenerator,
    cocycle_residual,
    dilation_probe,
    ergodic_average_criterion,
    liao_constants,
    log_norm_series,
    periodic_growth_rate,
    quasi_contraction_test,
    step_halving_error,
    uniform_decay_fit,
    xi_T,
)
from mjls_bounds.reports import RunReport, to_jsonable
from mjls_bounds.rotation_gallery import (
    FiberContractionCocycle,
    SpectralFinitenessCocycle,
    closing_check,
    convergents,
    dirichlet_holds,
    periodic_coefficients,
    periodic_not_uniform_report,
    spectral_finiteness_report,
)

logger = structlog.get_logger()

T = TypeVar("T")

Trace = tuple[list[str], list[list[Any]]]


@dataclass
class RunOutcome:
    report: RunReport
    traces: dict[str, Trace] = field(default_factory=dict)


@dataclass
class _Run:
    """Mutable accumulator for one run."""

    results: dict[str, Any] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)

    @contextmanager
    def timed(self, key: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[key] = time.perf_counter() - start

    def guarded(self, key: str, fn: Callable[[], T]) -> T | None:
        """Run an optional stage; a numeric flag is recorded instead of aborting the run."""
        try:
            with self.timed(key):
                return fn()
        except NumericFlagError as err:
            logger.warning("numeric_flag", stage=key, error=str(err))
            self.flags.append(f"{key}: {err}")
            return None

    def report(self, problem: ProblemConfig) -> RunReport:
        return RunReport(
            kind=problem.kind,
            name=problem.name or problem.kind,
            config_hash=config_hash(problem),
            seeds=self.seeds,
            results=to_jsonable(self.results),
            verdicts=self.verdicts,
            flags=self.flags,
            timings=self.timings,
        )


def run_problem(
    problem: ProblemConfig, threads: int = 1, oracle_mode: bool = False
) -> RunOutcome:
    """Dispatch on the problem kind."""
    logger.info("run_started", kind=problem.kind, name=problem.name)
    if isinstance(problem, JsrProblem):
        return run_jsr(problem, threads, oracle_mode)
    if isinstance(problem, MarkovProblem):
        return run_markov(problem, threads)
    if isinstance(problem, RotationProblem):
        return run_rotation(problem)
    return run_ode(problem, threads)


def run_jsr(problem: JsrProblem, threads: int = 1, oracle_mode: bool = False) -> RunOutcome:
    run = _Run()
    constraint = None if problem.constraint is None else Constraint.from_rows(problem.constraint)
    f = MatrixFamily.create(problem.matrices, constraint)
    prune = problem.prune and not oracle_mode
    max_n = problem.max_n

    with run.timed("bounds"):
        trace = estimate_jsr(f, max_n, problem.norm, prune, threads)
    run.results["kept_indices"] = list(f.kept_indices)
    run.results["constraint"] = f.constraint.to_rows()
    run.results["primitivity"] = primitivity(f.constraint)
    run.results["pruned"] = prune
    run.results["bounds"] = trace
    run.results["bracket"] = {
        "lower_sup": trace.lower_sup,
        "upper_inf": trace.upper_inf,
        "gap": trace.gap,
        "max_n": max_n,
    }

    with run.timed("periodic_margin"):
        margin = complete_periodic_stability_margin(f, max_n)
    run.results["complete_periodic_margin"] = margin
    run.verdicts["periodic_stability"] = (
        f"every closed word up to length {max_n} has spectral radius below 1"
        if margin < 1.0
        else f"a closed word up to length {max_n} has spectral radius at least 1"
    )

    if problem.certificate:
        certificate = run.guarded("certificate", lambda: stability_certificate(f, max_n))
        run.results["certificate"] = certificate
        run.verdicts["uniform_stability"] = (
            f"certified: norm <= {certificate.c!r} * {certificate.gamma!r}^m"
            if certificate is not None
            else f"not certified up to n = {max_n}"
        )

    if problem.dilation_alpha is not None:
        alpha = problem.dilation_alpha
        run.results["dilation"] = run.guarded("dilation", lambda: dilation_check(f, alpha, max_n))

    if problem.robustness is not None:
        options = problem.robustness
        run.seeds["robustness"] = options.seed
        probe = run.guarded(
            "robustness",
            lambda: robust_periodic_stability_probe(
                f, options.epsilon, max_n, options.samples, options.seed
            ),
        )
        run.results["robustness"] = probe
        if probe is not None:
            outcome = "no unstable member found" if probe.passed else "unstable member found"
            run.verdicts["robustness"] = f"{outcome} ({probe.label})"

    if problem.continuity is not None:
        keep = [i - 1 for i in f.kept_indices]
        direction = np.array(problem.continuity.direction, dtype=np.float64)[keep]
        deltas = problem.continuity.deltas
        run.results["continuity"] = run.guarded(
            "continuity",
            lambda: continuity_probe(f, direction, deltas, max_n, problem.norm),
        )

    rows = [
        [n, lo, up, lo_run, up_run]
        for n, lo, up, lo_run, up_run in zip(
            trace.n_values,
            trace.lower,
            trace.upper,
            trace.lower_running,
            trace.upper_running,
            strict=True,
        )
    ]
    header = ["n", "lower", "upper", "lower_running", "upper_running"]
    return RunOutcome(report=run.report(problem), traces={"bounds": (header, rows)})


def run_markov(problem: MarkovProblem, threads: int = 1) -> RunOutcome:
    run = _Run()
    run.seeds["seed"] = problem.seed
    with run.timed("stationary"):
        model = MarkovModel.create(problem.p_matrix, problem.p_vec, problem.initial, problem.seed)
    f = MatrixFamily.create(problem.matrices, constraint_of(model))
    if f.k != model.k:
        raise ConfigError(
            f"states {sorted(set(range(1, model.k + 1)) - set(f.kept_indices))} are never entered"
        )
    run.results["stationary"] = {"p_vec": model.p_vec, "non_unique": model.non_unique}

    with run.timed("lyapunov_mc"):
        mc = max_lyapunov_mc(f, model, problem.length, problem.trials, problem.seed, threads)
    run.results["lyapunov_mc"] = mc
    run.verdicts["almost_sure_stability"] = almost_sure_stability(mc)

    with run.timed("spectrum"):
        spectrum = lyapunov_spectrum_qr(f, model, problem.spectrum_length, problem.seed)
    run.results["spectrum"] = spectrum

    with run.timed("periodic_approximation"):
        approx = periodic_approximation(
            f, model, problem.seed, problem.window, problem.max_length
        )
    run.results["periodic_approximation"] = approx

    if problem.exterior_order is not None:
        order = problem.exterior_order
        with run.timed("exterior"):
            lift = exterior_lift(f, order)
            lifted = max_lyapunov_mc(
                lift, model, problem.length, problem.trials, problem.seed, threads
            )
        run.results["exterior"] = {
            "order": order,
            "lyapunov_mc": lifted,
            "spectrum_partial_sum": math.fsum(spectrum.exponents[:order]),
        }

    header = ["n", "exponent"]
    rows: list[list[Any]] = [[n, value] for n, value in approx.returns]
    return RunOutcome(report=run.report(problem), traces={"periodic": (header, rows)})


def run_rotation(problem: RotationProblem) -> RunOutcome:
    run = _Run()
    coefficients = periodic_coefficients(problem.head, problem.period, problem.depth)
    system = convergents(coefficients, problem.count, problem.side)
    run.results["omega"] = system.omega
    run.results["convergents"] = [list(pair) for pair in system.convergents]
    run.results["dirichlet"] = dirichlet_holds(system)

    angles = np.arange(problem.closing_angles) / problem.closing_angles
    with run.timed("closing"):
        closing = []
        for index, (p, q) in enumerate(system.convergents):
            checks = [closing_check(system, index, float(z0)) for z0 in angles]
            closing.append(
                {
                    "p": p,
                    "q": q,
                    "deviation": max(c.deviation for c in checks),
                    "bound": 1.0 / q,
                    "passed": all(c.passed for c in checks),
                }
            )
    run.results["closing"] = closing

    rows: list[list[Any]]
    if problem.cocycle == "spectral_finiteness":
        cocycle = SpectralFinitenessCocycle(system=system, dim=problem.dim)
        with run.timed("spectral_finiteness"):
            report = spectral_finiteness_report(cocycle, problem.n_max, problem.fiber_samples)
        run.results["spectral_finiteness"] = report
        run.verdicts["spectral_finiteness"] = (
            "no probed periodic orbit attains the joint spectral radius"
            if report.failure_exhibited
            else "not exhibited on probed data"
        )
        rows = [[row.p, row.q, row.closed_form, row.numeric] for row in report.periodic]
        header = ["p", "q", "closed_form", "numeric"]
    else:
        contraction = FiberContractionCocycle(system=system, gamma=problem.gamma)
        with run.timed("periodic_not_uniform"):
            summary = periodic_not_uniform_report(contraction, problem.n_max)
        run.results["periodic_not_uniform"] = summary
        run.verdicts["periodic_not_uniform"] = summary.verdict
        rows = [[p, q, value] for p, q, value in summary.fiber_products]
        header = ["p", "q", "fiber_product"]
    return RunOutcome(report=run.report(problem), traces={"periodic": (header, rows)})


def _default_subdivision(period: float) -> list[float]:
    """Equal segments of length at least 1."""
    segments = max(1, math.floor(period))
    points = [period * i / segments for i in range(segments + 1)]
    points[-1] = period
    return points


def run_ode(problem: OdeProblem, threads: int = 1) -> RunOutcome:
    run = _Run()
    driving = (
        CircleRotation(speed=float(problem.speed or 0.0))
        if problem.driving == "rotation"
        else PeriodicOrbit(period=float(problem.period or 0.0))
    )
    generator = TrigGenerator.create(problem.constant, problem.cos_terms, problem.sin_terms)
    flow = LinearFlow.create(driving, generator)
    w, step = problem.w, problem.step
    run.results["a_star"] = flow.a_star
    run.results["liao"] = liao_constants(problem.epsilon, flow.a_star)

    with run.timed("kernel_checks"):
        run.results["cocycle_residual"] = cocycle_residual(
            flow, w, problem.horizon / 2.0, problem.horizon / 2.0, step
        )
        run.results["step_halving_error"] = step_halving_error(flow, w, problem.horizon, step)
        run.results["xi_T"] = xi_T(flow, w, problem.xi_horizon, step)

    with run.timed("decay_fit"):
        fit = uniform_decay_fit(flow, problem.sample_points, problem.horizon, step)
    run.results["decay_fit"] = fit
    run.verdicts["uniform_decay"] = (
        f"observed decay rate gamma = {fit.gamma!r}" if fit is not None else "no decay observed"
    )

    period = flow.period
    if period is not None:
        subdivision = problem.subdivision or _default_subdivision(period)
        with run.timed("quasi_contraction"):
            qc = quasi_contraction_test(flow, subdivision, problem.beta, step, w, threads)
        run.results["quasi_contraction"] = qc
        run.verdicts["quasi_contraction"] = (
            "passed"
            if qc.passed
            else f"failed: average {qc.average!r} > beta {qc.threshold_beta!r}"
        )
        with run.timed("ergodic_average"):
            run.results["ergodic_average"] = ergodic_average_criterion(
                flow, problem.xi_horizon, problem.samples, step, w
            )
        run.results["periodic_growth_rate"] = periodic_growth_rate(flow, w, step)
        probe = dilation_probe(flow, problem.epsilon, w, step)
        run.results["dilation"] = probe
        run.verdicts["dilation"] = (
            f"{'stable' if probe.passed else 'unstable'} after dilation ({probe.label})"
        )

    with run.timed("series"):
        times, log_norms = log_norm_series(flow, w, problem.horizon, step, problem.series_points)
    rows: list[list[Any]] = [[float(t), float(y)] for t, y in zip(times, log_norms, strict=True)]
    return RunOutcome(report=run.report(problem), traces={"log_norm": (["t", "log_norm"], rows)})
