"""
T1 of an operator under the truncated definition (the operator applied to the
box indicator) and the quantities of the T1 boundedness criteria on BMO_L^alpha.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from operators.operator import SchrodingerOperator, validate_alpha
from operators.operatormanager import OperatorManager
from schrodinger.bmo import (BallClass, BallEnsemble, BallSpec, EnsemblePolicy, ball_ensemble, ball_mean,
                             ball_values, bmo_alpha_norm, test_function_f, test_function_g)
from schrodinger.errors import EnsembleError, ParameterRangeError
from schrodinger.grid import BoxGrid, GridFunction, ball_volume, cached_ball_cells
from schrodinger.report import VerificationReport, relative_delta
from schrodinger.rho import CriticalCovering, RhoField
from schrodinger.spectral import SpectralModel

logger = logging.getLogger("schroedinger-lab")


@dataclass(frozen=True, eq=False)
class T1Field:
    """
    T1 on the grid: scalar kinds store the values, vector kinds additionally
    the per-t slices, and `values` holds the Banach-norm reduction.
    """
    label: str
    grid: BoxGrid
    values: np.ndarray
    slices: np.ndarray | None = None
    weights: np.ndarray | None = None
    vector_norm: str | None = None
    margin: float = 1.0
    truncation_radius: float = 0.0
    margin_sensitivity: float = 0.0
    truncation_dominated: bool = False

    def function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def _reduce(self, data: np.ndarray, norm: str) -> np.ndarray:
        if norm == "E":
            return np.max(np.abs(data), axis=0)
        assert self.weights is not None
        return np.sqrt(np.tensordot(self.weights, data ** 2, axes=1))

    def reduced(self, norm: str) -> GridFunction:
        """E (max over the t-grid) or F (L^2(dt/t) quadrature) reduction of the slices"""
        if self.slices is None:
            return self.function()
        return GridFunction(self.grid, self._reduce(self.slices, norm))

    def _with_slices(self, slices: np.ndarray) -> "T1Field":
        assert self.vector_norm is not None
        return replace(self, slices=slices, values=self._reduce(slices, self.vector_norm))

    def shifted(self, constant: float) -> "T1Field":
        if self.slices is not None:
            return self._with_slices(self.slices + constant)
        return replace(self, values=self.values + constant)

    def scaled(self, factor: float) -> "T1Field":
        if self.slices is not None:
            return self._with_slices(self.slices * factor)
        return replace(self, values=self.values * factor)

    def deviation(self, ball: BallSpec) -> np.ndarray:
        """
        ||T1(y) - (T1)_B|| at the cells of the ball; for vector kinds the mean is
        taken per t and the Banach norm is applied to the difference
        """
        values = ball_values(self.function(), ball)
        if self.slices is None:
            return np.abs(values - ball_mean(values))
        assert self.vector_norm is not None
        data = self.slices.reshape(len(self.slices), -1)[:, ball.cells(self.grid)]
        shift = data[:, :1]
        means = shift + np.mean(data - shift, axis=1, keepdims=True)
        return self._reduce(data - means, self.vector_norm)

    def oscillation_integral(self, ball: BallSpec, gamma: float) -> float:
        """|B|^{-(1 + gamma/n)} int_B ||T1 - (T1)_B||"""
        return ball.volume ** (-gamma / ball.dimension) * float(np.mean(self.deviation(ball)))

    def summary(self) -> dict[str, Any]:
        return dict(label=self.label, vector_norm=self.vector_norm, margin=self.margin,
                    truncation_radius=self.truncation_radius, margin_sensitivity=self.margin_sensitivity,
                    truncation_dominated=self.truncation_dominated,
                    minimum=float(np.min(self.values)), maximum=float(np.max(self.values)))


def _t1_values(operator: SchrodingerOperator) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    ones = GridFunction.constant(operator.model.grid, 1.0)
    if operator.vector_norm is None:
        return operator.apply(ones).values, None, None
    family = operator.slices(ones)
    assert family is not None
    return family.reduce(), family.slices, family.tgrid.weights


def t1_field(operator: SchrodingerOperator, margin: float | None = None, rho: RhoField | None = None,
             threshold: float | None = None) -> T1Field:
    """
    T1 with f = 1 on the box, plus the margin sensitivity: T1 recomputed on the
    box shrunk by one margin (same t-grid), max relative change over the nodes
    that keep a margin in both boxes.
    """
    config = operator.config
    margin = config.margin if margin is None else margin
    threshold = config.truncation_threshold if threshold is None else threshold
    model = operator.model
    grid = model.grid
    values, slices, weights = _t1_values(operator)

    cells = max(int(math.ceil(margin / grid.spacing)), 1)
    sensitivity = 0.0
    if grid.points - 2 * cells >= 8:
        shrunk_model = SpectralModel.assemble(model.potential.restricted(cells), model.energy_cutoff, model.tolerance,
                                              dense_cap=grid.size)
        manager = (operator.manager.for_model(shrunk_model) if operator.manager
                   else OperatorManager(shrunk_model, config))
        shrunk = manager.get(operator.descriptor, tgrid=operator.tgrid)
        shrunk_values, _, _ = _t1_values(shrunk)
        window = (slice(cells, grid.points - cells),) * grid.dimension
        region = shrunk_model.grid.interior_mask(margin)
        if not np.any(region):
            region = np.ones(shrunk_model.grid.shape, dtype=bool)
        original = values[window][region]
        scale = float(np.max(np.abs(original)))
        difference = float(np.max(np.abs(original - shrunk_values[region])))
        sensitivity = difference / scale if scale > 0 else difference
    else:
        logger.warning("T1 %s: box too small for a margin-sensitivity recomputation", operator.descriptor.label)

    radius = grid.half_width - margin
    if rho is not None:
        inside = grid.interior_mask(margin)
        radius = max(radius, float(np.max(rho.values[inside]))) if np.any(inside) else radius
    dominated = sensitivity > threshold
    if dominated:
        logger.warning("T1 %s truncation-dominated: margin sensitivity %.3g > %.3g",
                       operator.descriptor.label, sensitivity, threshold)
    return T1Field(operator.descriptor.label, grid, np.asarray(values), slices, weights, operator.vector_norm, margin,
                   radius, sensitivity, dominated)


CRITERION_COLUMNS = ("radius", "rho", "class", "in_scope", "weight", "oscillation_integral", "quantity")


@dataclass(frozen=True, eq=False)
class CriterionReport:
    name: str
    alpha: float
    gamma: float
    columns: tuple[str, ...]
    rows: list[tuple]
    supremum: float
    slope: float | None = None
    truncation_dominated: bool = False
    header: dict[str, Any] = field(default_factory=dict)

    def as_report(self) -> VerificationReport:
        quantities = [row[-1] for row in self.rows if row[-4]]
        header = dict(alpha=self.alpha, gamma=self.gamma, supremum=self.supremum, slope=self.slope, **self.header)
        rows = [row for row in self.rows if row[-4]] + [row for row in self.rows if not row[-4]]
        return VerificationReport.from_ratios(self.name, self.columns, rows, np.asarray(quantities),
                                              excluded=dict(intermediate=len(self.rows) - len(quantities)),
                                              header=header, truncation_dominated=self.truncation_dominated)


def oscillation_integral(function: GridFunction, ball: BallSpec, gamma: float) -> float:
    """|B|^{-(1 + gamma/n)} int_B |T1 - (T1)_B|"""
    values = ball_values(function, ball)
    deviation = float(np.mean(np.abs(values - ball_mean(values))))
    return ball.volume ** (-gamma / ball.dimension) * deviation


def _slope(rows: list[tuple]) -> float | None:
    """log-log slope of the in-scope quantity against s/rho"""
    ratio = np.array([row[-7] / row[-6] for row in rows if row[-4] and row[-1] > 0])
    quantity = np.array([row[-1] for row in rows if row[-4] and row[-1] > 0])
    if len(ratio) < 3 or np.ptp(np.log(ratio)) == 0:
        return None
    return float(np.polyfit(np.log(ratio), np.log(quantity), 1)[0])


def _criterion(name: str, t1: T1Field, alpha: float, gamma: float, ensemble: BallEnsemble, logarithmic: bool,
               ) -> CriterionReport:
    if not ensemble.sub_critical:
        raise EnsembleError("criterion needs sub-critical balls (s <= rho(x)/2); the ensemble has none")
    rows = []
    supremum = 0.0
    for ball in ensemble.of_class(BallClass.SUB_CRITICAL, BallClass.INTERMEDIATE):
        in_scope = ball.ball_class == BallClass.SUB_CRITICAL
        ratio = ball.rho / ball.radius
        weight = math.log(ratio) if logarithmic else ratio ** alpha
        integral = t1.oscillation_integral(ball, gamma)
        quantity = weight * integral
        if in_scope:
            supremum = max(supremum, quantity)
        rows.append((*ball.center, ball.radius, ball.rho, ball.ball_class.value, in_scope, weight, integral, quantity))
    columns = tuple(f"x{i + 1}" for i in range(ensemble.grid.dimension)) + CRITERION_COLUMNS
    return CriterionReport(name, alpha, gamma, columns, rows, supremum, _slope(rows), t1.truncation_dominated,
                           header=dict(operator=t1.label, balls=len(ensemble.balls)))


def criterion_alpha(t1: T1Field, alpha: float, gamma: float, ensemble: BallEnsemble) -> CriterionReport:
    """sup over s <= rho(x)/2 of (rho(x)/s)^alpha |B|^{-(1+gamma/n)} int_B |T1 - (T1)_B|"""
    if not alpha >= 0 or not gamma >= 0 or not alpha + gamma < 1:
        raise ParameterRangeError(f"criterion needs alpha, gamma >= 0 and alpha + gamma < 1, got {alpha} + {gamma}")
    return _criterion(f"criterion_alpha[{t1.label},alpha={alpha:g}]", t1, alpha, gamma, ensemble, False)


def criterion_log(t1: T1Field, gamma: float, ensemble: BallEnsemble) -> CriterionReport:
    """as criterion_alpha with the weight log(rho(x)/s)"""
    if not 0 <= gamma < 1:
        raise ParameterRangeError(f"log criterion needs 0 <= gamma < 1, got {gamma}")
    return _criterion(f"criterion_log[{t1.label}]", t1, 0.0, gamma, ensemble, True)


def criterion_stability(t1: T1Field, alpha: float | None, gamma: float, rho: RhoField,
                        policy: EnsemblePolicy) -> VerificationReport:
    """criterion supremum on the ensemble with its doubled-density delta; alpha None selects the log criterion"""
    reports = []
    for current in (policy, policy.doubled()):
        ensemble = ball_ensemble(rho.grid, rho, current)
        if alpha is None:
            reports.append(criterion_log(t1, gamma, ensemble))
        else:
            reports.append(criterion_alpha(t1, alpha, gamma, ensemble))
    base, doubled = (report.as_report() for report in reports)
    return base.with_stability(doubled)


def mean_bound_gamma_check(t1: T1Field, gamma: float, rho: RhoField, centers: np.ndarray) -> VerificationReport:
    """sup over critical balls B = B(x, rho(x)) inside the margin region of |B|^{-(1+gamma/n)} int_B |T1|"""
    grid = t1.grid
    function = t1.function().values.reshape(-1)
    n = grid.dimension
    rows, quantities = [], []
    excluded = dict(outside_margin=0)
    for index in np.atleast_2d(np.asarray(centers, dtype=np.int64)):
        center = tuple(float(c) for c in grid.coordinates(index))
        radius = float(rho.at(index))
        if np.max(np.abs(center)) + radius > grid.half_width - t1.margin + 1e-12:
            excluded["outside_margin"] += 1
            continue
        cells = cached_ball_cells(grid, center, radius)
        quantity = ball_volume(n, radius) ** (-gamma / n) * float(np.mean(np.abs(function[cells])))
        rows.append((*center, radius, quantity))
        quantities.append(quantity)
    columns = tuple(f"x{i + 1}" for i in range(n)) + ("rho", "quantity")
    return VerificationReport.from_ratios(f"mean_bound_gamma[{t1.label}]", columns, rows, np.asarray(quantities),
                                          excluded=excluded, header=dict(gamma=gamma),
                                          truncation_dominated=t1.truncation_dominated)


BatteryMember = tuple[str, GridFunction]


def build_battery(model: SpectralModel, rho: RhoField, ensemble: BallEnsemble, rng: np.random.Generator,
                 size: int = 12, alphas: Sequence[float] = (0.25, 0.5, 0.75)) -> list[BatteryMember]:
    """
    g_{x0,s} and f_{x0,s} over (x0, s) pairs taken from the sub-critical balls,
    the lowest eigenfunctions and random smooth fields.
    """
    battery: list[BatteryMember] = []
    candidates = [ball for ball in ensemble.balls if ball.radius <= ball.rho]
    if candidates:
        picks = rng.choice(len(candidates), size=min(size, len(candidates)), replace=False)
        for k, pick in enumerate(sorted(picks)):
            ball = candidates[int(pick)]
            battery.append((f"g[{ball.index},{ball.radius:.4g}]", test_function_g(rho, ball.index, ball.radius)))
            alpha = alphas[k % len(alphas)]
            battery.append((f"f[{ball.index},{ball.radius:.4g},{alpha:g}]",
                            test_function_f(rho, ball.index, ball.radius, alpha)))
    for k in range(min(3, model.grid.points)):
        index = (k,) * model.dimension if model.is_separable else k
        battery.append((f"eigenfunction[{k}]", model.eigenfunction(index)))
    for k in range(max(size // 4, 1)):
        battery.append((f"random[{k}]", model.random_smooth_field(rng)))
    return battery


def multiplier_criterion(psi: GridFunction, alpha: float, ensemble: BallEnsemble, battery: Sequence[BatteryMember],
                         margin: float = 1.0) -> VerificationReport:
    """
    Both sides of the pointwise-multiplier criterion: ||psi||_inf and the weighted
    oscillation of psi over sub-critical balls (log weight for alpha = 0), next to
    the empirical BMO_L^alpha norm of f -> f psi over the battery.
    """
    if not 0 <= alpha < 1:
        raise ParameterRangeError(f"multiplier criterion needs 0 <= alpha < 1, got {alpha}")
    grid = psi.grid
    region = grid.interior_mask(margin)
    sup_norm = float(np.max(np.abs(psi.values[region]))) if np.any(region) else float(np.max(np.abs(psi.values)))
    oscillation = 0.0
    for ball in ensemble.sub_critical:
        ratio = ball.rho / ball.radius
        weight = math.log(ratio) if alpha == 0 else ratio ** alpha
        oscillation = max(oscillation, weight * oscillation_integral(psi, ball, 0.0))
    rows, ratios = [], []
    skipped = 0
    for label, f in battery:
        norm_f = bmo_alpha_norm(f, alpha, ensemble).norm
        if norm_f == 0:
            skipped += 1
            continue
        norm_product = bmo_alpha_norm(f * psi, alpha, ensemble).norm
        rows.append((label, norm_f, norm_product, norm_product / norm_f))
        ratios.append(norm_product / norm_f)
    if skipped:
        logger.warning("multiplier criterion: %s battery members with zero norm skipped", skipped)
    return VerificationReport.from_ratios(
        "multiplier_criterion", ("member", "norm_f", "norm_f_psi", "ratio"), rows, np.asarray(ratios),
        excluded=dict(zero_norm=skipped),
        header=dict(alpha=alpha, sup_norm=sup_norm, weighted_oscillation=oscillation))


def empirical_operator_norm(operator: SchrodingerOperator, alpha: float, gamma: float,
                            battery: Sequence[BatteryMember], ensemble: BallEnsemble) -> VerificationReport:
    """max over the battery of ||Tf||_{BMO^{alpha+gamma}} / ||f||_{BMO^alpha}"""
    if not alpha + gamma <= 1:
        raise ParameterRangeError(f"operator norm needs alpha + gamma <= 1, got {alpha} + {gamma}")
    validate_alpha(operator, operator.model.potential, alpha + gamma)
    rows, ratios = [], []
    skipped = 0
    for label, f in battery:
        norm_f = bmo_alpha_norm(f, alpha, ensemble).norm
        if norm_f == 0:
            skipped += 1
            continue
        norm_tf = bmo_alpha_norm(operator.apply(f), alpha + gamma, ensemble).norm
        rows.append((label, norm_f, norm_tf, norm_tf / norm_f))
        ratios.append(norm_tf / norm_f)
    if skipped:
        logger.warning("operator norm %s: %s battery members with zero norm skipped",
                       operator.descriptor.label, skipped)
    return VerificationReport.from_ratios(
        f"operator_norm[{operator.descriptor.label}]", ("member", "norm_f", "norm_tf", "ratio"), rows,
        np.asarray(ratios), excluded=dict(zero_norm=skipped), header=dict(alpha=alpha, gamma=gamma))


def covering_boundedness_check(operator: SchrodingerOperator, battery: Sequence[BatteryMember], alpha: float,
                               gamma: float, covering: CriticalCovering, ensemble: BallEnsemble) -> VerificationReport:
    """
    Per battery member, max over k of
    (A_k) |Q_k|^{-1-(alpha+gamma)/n} int_{Q_k} |Tf| / ||f|| and
    (B_k) the BMO^{alpha+gamma} oscillation of Tf on balls inside Q_k* / ||f||.
    """
    grid = covering.grid
    n = grid.dimension
    exponent = (alpha + gamma) / n
    points = covering.center_points()
    ball_centers = np.array([ball.center for ball in ensemble.balls])
    ball_radii = np.array([ball.radius for ball in ensemble.balls])
    gaps = np.linalg.norm(ball_centers[:, None, :] - points[None, :, :], axis=-1)
    inside = gaps + ball_radii[:, None] <= 2 * covering.radii[None, :]
    owned = np.any(inside, axis=1)

    rows, ratios = [], []
    skipped = 0
    for label, f in battery:
        norm_f = bmo_alpha_norm(f, alpha, ensemble).norm
        if norm_f == 0:
            skipped += 1
            continue
        image = operator.apply(f)
        flat = np.abs(image.values.reshape(-1))
        size = 0.0
        for center, radius in zip(points, covering.radii):
            cells = cached_ball_cells(grid, tuple(float(c) for c in center), float(radius))
            if len(cells):
                size = max(size, ball_volume(n, float(radius)) ** -exponent * float(np.mean(flat[cells])))
        local = 0.0
        for ball, keep in zip(ensemble.balls, owned):
            if keep:
                local = max(local, ball.volume ** -exponent * oscillation_integral(image, ball, 0.0))
        a_value, b_value = size / norm_f, local / norm_f
        rows.append((label, norm_f, a_value, b_value))
        ratios.append(max(a_value, b_value))
    return VerificationReport.from_ratios(
        f"covering_boundedness[{operator.descriptor.label}]", ("member", "norm_f", "A", "B"), rows,
        np.asarray(ratios), excluded=dict(zero_norm=skipped),
        header=dict(alpha=alpha, gamma=gamma, balls=covering.size, local_balls=int(np.count_nonzero(owned))))


def refinement_delta(first: VerificationReport, second: VerificationReport) -> float:
    return relative_delta(first.constant, second.constant)
