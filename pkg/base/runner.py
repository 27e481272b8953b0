import logging
import math
import signal
import sys
import threading
import time
from dataclasses import replace
from typing import Any, Callable, Sequence

import numpy as np

from base.check_thread import CheckThread
from base.config import Configuration
from base.experiment import ExperimentConfig
from base.reports import ArtifactWriter, artifact_name
from operators.gfunction import derivative_formula_slice
from operators.negativepower import negative_power_quadrature
from operators.operator import SchrodingerOperator, lp_operator_norm
from operators.operatormanager import OperatorManager
from operators.poisson import extension_residual, maximal_domination_check
from operators.riesz import riesz_defect
from schrodinger.bmo import (BallEnsemble, ball_ensemble, bmo_alpha_norm, campanato_table, covering_mean_check,
                             mean_value_bound_check, test_function_f, test_function_g)
from schrodinger.grid import BoxGrid, GridFunction
from schrodinger.potential import Potential, reverse_holder_constant
from schrodinger.probes import probe_set
from schrodinger.report import Verdict, VerificationReport, worst_verdict
from schrodinger.rho import (CriticalCovering, RhoField, critical_covering, random_pairs, rho_equivalence_check,
                             rho_field)
from schrodinger.spectral import SpectralModel
from schrodinger.t1 import (BatteryMember, T1Field, build_battery, criterion_stability, covering_boundedness_check,
                            empirical_operator_norm, mean_bound_gamma_check, multiplier_criterion, t1_field)
from schrodinger.verify import EstimateParams, kernel_probe_dump, report_bundle, verify_estimates

exit_flag = threading.Event()

# full rho field dumps up to this many nodes, the center lines beyond
RHO_DUMP_LIMIT = 65536
SWEEP_SIZE = 50


class ExperimentRunner:
    """
    Builds the grid, potential, spectral model and rho field of one experiment,
    then runs each requested check in its own CheckThread (at most
    `workers` at once) and writes the artifacts.
    """
    thread_lock = threading.Lock()

    def __init__(self, experiment: ExperimentConfig, config: Configuration | None = None):
        self.experiment = experiment
        self.config: Configuration = experiment.runtime(config)
        self.logger = logging.getLogger("schroedinger-lab")
        self.checks = ExperimentRunner.exclude_checks(list(experiment.checks), self.config.checks_exclude)
        self.manage_threads: list[CheckThread] = []
        self.reports: dict[str, list[VerificationReport]] = {}
        self.summaries: dict[str, dict[str, Any]] = {}
        self.wall_times: dict[str, float] = {}
        self.writer = ArtifactWriter(experiment.output_dir, experiment.config_hash)
        self._shared: dict[str, Any] = {}

        self.grid: BoxGrid
        self.potential: Potential
        self.model: SpectralModel
        self.rho: RhoField
        self.ensemble: BallEnsemble
        self.manager: OperatorManager

        self.logger.info(f"Init experiment {experiment.config_hash} with checks: {','.join(self.checks)}")
        self.logger.info(f"Artifacts go to {experiment.output_dir}")

    @staticmethod
    def exclude_checks(available_checks: list[str], excluded_checks: list[str]) -> list[str]:
        result = []
        for check in available_checks:
            if check not in excluded_checks:
                result.append(check)
        return result

    def handler(self, signum: int, *args: Any) -> None:
        if signum in [signal.SIGTERM]:
            self.logger.info("Signal handler called with signal %s... stopping (max %s seconds)" % (signum, 3))
            exit_flag.set()
            for thread in self.manage_threads:
                thread.join(timeout=3)
            self.logger.info("All threads exited... exit schroedinger-lab")
            sys.exit(1)

    def excepthook(self, args: Any) -> None:
        self.logger.exception(f"Thread '{args.thread.name if args.thread else '?'}' failed: {args.exc_value}")

    def _timed(self, name: str, build: Callable[[], Any]) -> Any:
        start = time.monotonic()
        value = build()
        self.wall_times[name] = time.monotonic() - start
        return value

    def prepare(self) -> None:
        config = self.config
        self.grid = self.experiment.grid.build()
        self.potential = self._timed("potential", lambda: self.experiment.potential.build(self.grid, config))
        if self.potential.dimension < 3:
            self.logger.warning("n = %s < 3: the critical radius theory assumes n >= 3", self.potential.dimension)
        self.model = self._timed("spectral", lambda: SpectralModel.assemble(
            self.potential, config.energy_cutoff, config.spectral_tolerance, dense_cap=config.dense_cap))
        self.rho = self._timed("rho_field", lambda: rho_field(self.potential, config.rho_scan_size,
                                                              config.rho_bisection_steps, config.rho_table_size))
        self.ensemble = self._timed("ensemble", lambda: ball_ensemble(self.grid, self.rho, self.experiment.ensemble))
        self.manager = OperatorManager(self.model, config)
        self.logger.info("prepared %s on %s, lambda_min %.6g, rho in [%.4g, %.4g], %s balls",
                         self.potential.label, self.grid.describe(), self.model.lambda_min,
                         float(np.min(self.rho.values)), float(np.max(self.rho.values)), len(self.ensemble.balls))

    def shared(self, name: str, factory: Callable[[], Any]) -> Any:
        """one instance of a resource several checks need, built by the first to ask"""
        with self.thread_lock:
            if name not in self._shared:
                self._shared[name] = factory()
            return self._shared[name]

    @property
    def covering(self) -> CriticalCovering:
        return self.shared("covering", lambda: critical_covering(self.rho))

    @property
    def battery(self) -> list[BatteryMember]:
        rng = np.random.default_rng(self.experiment.seed_for("battery"))
        return self.shared("battery", lambda: build_battery(self.model, self.rho, self.ensemble, rng,
                                                            alphas=self.experiment.alphas or (0.25,)))

    def operators(self) -> list[SchrodingerOperator]:
        operators = [self.manager.get(descriptor) for descriptor in self.experiment.operators]
        if not operators:
            self.logger.warning("no operators configured")
        return operators

    def threshold(self, check: str) -> float:
        if check == "t1":
            return self.config.criterion_stability_threshold
        return self.config.stability_threshold

    def record(self, check: str, report: VerificationReport) -> None:
        with self.thread_lock:
            self.reports.setdefault(check, []).append(report)
        self.writer.write_report(check, report, self.threshold(check))

    def summarize(self, check: str, **data: Any) -> None:
        with self.thread_lock:
            self.summaries.setdefault(check, {}).update(data)

    def run(self) -> int:
        exit_flag.clear()
        if threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGTERM, self.handler)
        threading.excepthook = self.excepthook
        start = time.monotonic()
        try:
            self.prepare()
        except ValueError as e:
            self.logger.error("experiment setup failed: %s", e)
            self.summaries["setup"] = dict(error=str(e))
            return self.finish(1, start)

        slots = threading.Semaphore(max(self.config.workers, 1))
        for check in self.checks:
            thread = CheckThread(check, exit_flag, runner_object=self, runner_method=f"check_{check}", slots=slots)
            self.manage_threads.append(thread)
            thread.start()
        for thread in self.manage_threads:
            thread.join()
            self.wall_times[f"check_{thread.check}"] = thread.wall_time

        failed = [thread.check for thread in self.manage_threads if thread.failed]
        for thread in self.manage_threads:
            if thread.failed:
                self.summarize(thread.check, error=str(thread.failure))
        return self.finish(self.exit_code(failed), start)

    def exit_code(self, failed: list[str]) -> int:
        if failed or exit_flag.is_set():
            self.logger.error("checks failed: %s", ",".join(failed) or "interrupted")
            return 1
        verdicts: list[Verdict] = []
        for check, reports in sorted(self.reports.items()):
            verdicts.extend(report.verdict(self.threshold(check)) for report in reports)
        verdict = worst_verdict(verdicts)
        self.logger.info("overall verdict: %s over %s reports", verdict.value, len(verdicts))
        return verdict.exit_code

    def finish(self, code: int, start: float) -> int:
        self.wall_times["total"] = time.monotonic() - start
        checks = {}
        for check in self.checks:
            reports = self.reports.get(check, [])
            checks[check] = dict(self.summaries.get(check, {}),
                                 reports={r.name: r.verdict(self.threshold(check)).value for r in reports})
        if "setup" in self.summaries:
            checks["setup"] = self.summaries["setup"]
        self.writer.write_schema()
        self.writer.write_manifest(self.experiment.to_dict(), self.wall_times, checks, code)
        self.logger.info("exit code %s", code)
        return code

    # ---- checks --------------------------------------------------------------------------------

    def check_rho(self, check: str) -> None:
        grid, rho = self.grid, self.rho
        n = grid.dimension
        if grid.size <= RHO_DUMP_LIMIT:
            flat = np.arange(grid.size)
        else:
            center = grid.points // 2
            lines = []
            for axis in range(n):
                index = np.full((grid.points, n), center, dtype=np.int64)
                index[:, axis] = np.arange(grid.points)
                lines.append(grid.ravel(index))
            flat = np.unique(np.concatenate(lines))
        index = grid.unravel(flat)
        points = grid.coordinates(index)
        values, capped, below = (a.reshape(-1)[flat] for a in (rho.values, rho.capped, rho.below_resolution))
        rows = [(*map(float, p), float(v), bool(c), bool(b)) for p, v, c, b in zip(points, values, capped, below)]
        columns = tuple(f"x{k + 1}" for k in range(n)) + ("rho", "capped", "below_resolution")
        self.writer.write_rows(f"{check}__field.csv", columns, rows, description="critical radius on the grid")
        self.summarize(check, field=rho.summary())

        rng = np.random.default_rng(self.experiment.seed_for("pairs"))
        first, second = random_pairs(grid, rho, self.experiment.probes.count, rng, self.config.margin)
        report = rho_equivalence_check(rho, first, second)
        self.record(check, report)
        self.writer.write_rows(f"{check}__c_curve.csv", ("k0", "c"),
                               [(point["k0"], point["c"]) for point in report.header["c_curve"]],
                               description="smallest equivalence constant c for each k0")

    def check_cover(self, check: str) -> None:
        covering = self.covering
        n = self.grid.dimension
        rows = [(k, *map(float, center), float(radius))
                for k, (center, radius) in enumerate(zip(covering.center_points(), covering.radii))]
        self.writer.write_rows(f"{check}__balls.csv", ("ball",) + tuple(f"x{k + 1}" for k in range(n)) + ("radius",),
                               rows, description="critical covering Q_k = B(x_k, rho(x_k))")
        self.summarize(check, covered=covering.covered(), **covering.summary())

    def check_spectrum(self, check: str) -> None:
        model = self.model
        self.writer.write_rows(f"{check}__eigenvalues.csv", ("axis", "index", "eigenvalue"), model.spectrum_rows(),
                               description="eigenvalues per axis factor (axis 0 in dense mode)")
        self.summarize(check, lambda_min=model.lambda_min, lambda_max=model.lambda_max,
                       orthonormality_defect=model.orthonormality_defect(), separable=model.is_separable)

    def check_bmo(self, check: str) -> None:
        ensemble, rho = self.ensemble, self.rho
        rng = np.random.default_rng(self.experiment.seed_for("battery"))
        candidates = ensemble.sub_critical
        if not candidates:
            self.logger.warning("bmo: no sub-critical balls in the ensemble")
            return
        picks = sorted(rng.choice(len(candidates), size=min(SWEEP_SIZE, len(candidates)), replace=False))
        sweep = [candidates[int(k)] for k in picks]
        pairs = random_pairs(self.grid, rho, self.experiment.probes.count, rng, self.config.margin)

        rows, norms = [], []
        for ball in sweep:
            norms.append(bmo_alpha_norm(test_function_g(rho, ball.index, ball.radius), 0.0, ensemble).norm)
            rows.append(("g", 0.0, *ball.center, ball.radius, norms[-1]))
        self.record(check, _uniformity("uniformity[g]", rows, norms, self.grid.dimension))

        for alpha in self.experiment.alphas:
            rows, norms = [], []
            for ball in sweep:
                norms.append(bmo_alpha_norm(test_function_f(rho, ball.index, ball.radius, alpha), alpha, ensemble).norm)
                rows.append(("f", alpha, *ball.center, ball.radius, norms[-1]))
            self.record(check, _uniformity(f"uniformity[f,alpha={alpha:g}]", rows, norms, self.grid.dimension))

            ball = sweep[0]
            f = test_function_f(rho, ball.index, ball.radius, alpha)
            oscillation = bmo_alpha_norm(f, alpha, ensemble)
            self.record(check, oscillation.as_report(f"bmo_norm[f,alpha={alpha:g}]"))
            self.record(check, _renamed(mean_value_bound_check(f, ensemble, alpha, oscillation.norm), alpha))
            self.record(check, _renamed(covering_mean_check(f, alpha, self.covering, ensemble), alpha))
            if alpha > 0:
                self.record(check, _renamed(campanato_table(f, alpha, rho, pairs, self.config.margin, oscillation.norm),
                                            alpha))

    def check_t1(self, check: str) -> None:
        rho, ensemble = self.rho, self.ensemble
        centers = np.array([ball.index for ball in ensemble.balls], dtype=np.int64)
        for operator in self.operators():
            gamma = operator.gamma
            t1 = t1_field(operator, rho=rho)
            self.summarize(check, **{operator.descriptor.label: t1.summary()})
            ceiling = operator.admissible_alpha(self.potential)
            for alpha in self.experiment.alphas:
                if alpha + gamma >= 1 or (alpha + gamma >= ceiling and operator.kind != "identity"):
                    self.logger.warning("t1 %s: alpha = %s skipped, alpha + gamma >= %.4g",
                                        operator.descriptor.label, alpha, ceiling)
                    continue
                self.record(check, criterion_stability(t1, alpha, gamma, rho, self.experiment.ensemble))
            if gamma < 1:
                self.record(check, criterion_stability(t1, None, gamma, rho, self.experiment.ensemble))
            self.record(check, mean_bound_gamma_check(t1, gamma, rho, centers))
            skip = multiplier_skip_reason(t1, self.experiment.alphas)
            if skip:
                self.logger.debug("t1 %s: multiplier criterion skipped, %s", operator.descriptor.label, skip)
            else:
                alpha = min(self.experiment.alphas)
                report = multiplier_criterion(t1.function(), alpha, ensemble, self.battery, self.config.margin)
                self.record(check, _renamed(report, alpha, operator.descriptor.label))

    def check_verify(self, check: str) -> None:
        probes = probe_set(self.grid, self.rho, self.experiment.probes)
        self.summarize(check, probes=probes.summary())
        reports = verify_estimates(self.model, self.rho, probes, self.experiment.estimates, EstimateParams(),
                                   self.config, gammas=self.experiment.gammas)
        bundle = report_bundle(reports, self.config.stability_threshold)
        for report in bundle.reports:
            self.record(check, report)
        self.writer.write_json(f"{check}__bundle.json", bundle.to_dict())
        for operator in self.operators():
            rows = kernel_probe_dump(operator.descriptor, self.model, probes, self.manager)
            self.writer.write_rows(f"{check}__kernel__{artifact_name(operator.descriptor.label)}.csv",
                                   ("kind", "t", "x", "y", "value"), rows,
                                   description=f"kernel samples of {operator.descriptor.label} at the probe pairs")

    def check_norms(self, check: str) -> None:
        rng = np.random.default_rng(self.experiment.seed_for("battery"))
        family = [self.model.random_smooth_field(rng) for _ in range(8)]
        q = self.potential.q if math.isfinite(self.potential.q) else 2.0 * self.grid.dimension
        self.record(check, reverse_holder_constant(self.potential, q, self.ensemble))
        for operator in self.operators():
            label = operator.descriptor.label
            self.record(check, lp_operator_norm(operator, family))
            for alpha in self.experiment.alphas:
                if alpha + operator.gamma > 1:
                    continue
                self.record(check, _renamed(empirical_operator_norm(operator, alpha, operator.gamma, self.battery,
                                                                    self.ensemble), alpha))
                self.record(check, _renamed(covering_boundedness_check(operator, self.battery, alpha, operator.gamma,
                                                                       self.covering, self.ensemble), alpha))
            self.summarize(check, **{label: self.diagnostics(operator, family[0])})

    def diagnostics(self, operator: SchrodingerOperator, f: Any) -> dict[str, Any]:
        """kind specific consistency numbers next to the norms"""
        descriptor = operator.descriptor
        if operator.kind == "riesz-component":
            return riesz_defect(self.model, f)._asdict()
        if operator.kind == "poisson-sigma-at-t":
            assert descriptor.sigma is not None and descriptor.t is not None
            return extension_residual(self.model, descriptor.sigma, descriptor.t, f,
                                      self.config.quadrature_tolerance)._asdict()
        if operator.kind == "poisson-maximal" and operator.tgrid is not None:
            assert descriptor.sigma is not None
            report = maximal_domination_check(self.model, descriptor.sigma, f * f, operator.tgrid,
                                              self.config.quadrature_tolerance)
            return dict(domination_constant=report.constant)
        if operator.kind == "negative-power":
            quadrature = negative_power_quadrature(self.model, operator.gamma, f, self.config.quadrature_tolerance)
            return dict(route_defect=_route_defect(quadrature, operator.apply(f)))
        if operator.kind == "g-poisson":
            t = float(operator.tgrid.times[operator.tgrid.size // 2])
            spectral = self.model.apply(lambda lam: -t * np.sqrt(lam) * np.exp(-t * np.sqrt(lam)), f)
            formula = derivative_formula_slice(self.model, t, f, self.config.quadrature_tolerance)
            return dict(t=t, route_defect=_route_defect(formula, spectral))
        return dict(classification=operator.classification())


def multiplier_skip_reason(t1: T1Field, alphas: Sequence[float]) -> str | None:
    """why the pointwise-multiplier criterion does not apply to this T1, None when it does"""
    if t1.vector_norm is not None:
        return f"T1 is vector-valued ({t1.vector_norm}-norm)"
    if not alphas:
        return "no alpha configured"
    if min(alphas) >= 1:
        return f"alpha = {min(alphas):g} >= 1"
    return None


def _route_defect(first: GridFunction, second: GridFunction) -> float:
    """relative L^2 distance of two evaluations of the same operator"""
    reference = second.norm(2)
    return (first - second).norm(2) / reference if reference > 0 else 0.0


def _renamed(report: VerificationReport, alpha: float, label: str | None = None) -> VerificationReport:
    suffix = f"alpha={alpha:g}" if label is None else f"{label},alpha={alpha:g}"
    return replace(report, name=f"{report.name}[{suffix}]")


def _uniformity(name: str, rows: list[tuple], norms: list[float], dimension: int) -> VerificationReport:
    """norms of the test function family over a (x0, s) sweep, ratio to the smallest"""
    smallest = min(norms)
    ratios = np.asarray(norms) / smallest if smallest > 0 else np.full(len(norms), math.inf)
    rows = [(*row, float(ratio)) for row, ratio in zip(rows, ratios)]
    columns = ("family", "alpha") + tuple(f"x{k + 1}" for k in range(dimension)) + ("radius", "norm", "ratio")
    return VerificationReport.from_ratios(name, columns, rows, ratios, header=dict(smallest=smallest,
                                                                                   largest=max(norms)))
