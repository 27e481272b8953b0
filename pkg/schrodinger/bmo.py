"""
Ball ensembles and the BMO_L^alpha machinery: mean oscillations, the two
conditions of the norm (oscillation on every ball, size on balls at least
critical), the extremal test functions g_{x0,s} and f_{x0,s}, the mean value
bounds and the covering / Campanato side tables.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

import numpy as np

from schrodinger.errors import EnsembleError, ParameterRangeError
from schrodinger.grid import BoxGrid, GridFunction, ball_volume, cached_ball_cells
from schrodinger.report import VerificationReport
from schrodinger.rho import CriticalCovering, RhoField

logger = logging.getLogger("schroedinger-lab")

MIN_BALL_CELLS = 8


class BallClass(Enum):
    SUB_CRITICAL = "sub-critical"
    INTERMEDIATE = "intermediate"
    CRITICAL = "critical-or-larger"


def classify(radius: float, rho: float) -> BallClass:
    if radius <= rho / 2:
        return BallClass.SUB_CRITICAL
    if radius < rho:
        return BallClass.INTERMEDIATE
    return BallClass.CRITICAL


@dataclass(frozen=True)
class BallSpec:
    """B(x0, s) centered at a node; `rho` is rho(x0)"""
    index: tuple[int, ...]
    center: tuple[float, ...]
    radius: float
    rho: float
    ball_class: BallClass
    margin_ok: bool

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return ball_volume(self.dimension, self.radius)

    def dilated(self, factor: float, grid: BoxGrid | None = None, margin: float = 0.0) -> "BallSpec":
        """B*, B** and B*** are dilations by 2, 4 and 8"""
        radius = factor * self.radius
        margin_ok = self.margin_ok
        if grid is not None:
            margin_ok = _fits(grid, self.center, radius, margin)
        return replace(self, radius=radius, ball_class=classify(radius, self.rho), margin_ok=margin_ok)

    def cells(self, grid: BoxGrid) -> np.ndarray:
        return cached_ball_cells(grid, self.center, self.radius)


def _fits(grid: BoxGrid, center: Sequence[float], radius: float, margin: float) -> bool:
    return bool(np.max(np.abs(center)) + radius <= grid.half_width - margin + 1e-12)


@dataclass(frozen=True)
class EnsemblePolicy:
    """
    Centers on a lattice of `centers_per_axis` nodes per axis over the inner
    `center_fraction` of the margin region, radii rho(x0) 10^{k/radii_per_decade}
    from `decades_below` decades under rho(x0) to `decades_above` over it.
    """
    centers_per_axis: int = 5
    radii_per_decade: int = 4
    decades_below: float = 2.0
    decades_above: float = 0.75
    center_fraction: float = 0.5
    margin: float = 1.0
    radius_cap: float | None = None
    random_centers: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.radii_per_decade < 4:
            raise EnsembleError(f"ensemble needs at least 4 radii per decade, got {self.radii_per_decade}")
        if self.centers_per_axis < 1:
            raise EnsembleError("ensemble needs at least one center per axis")

    def doubled(self) -> "EnsemblePolicy":
        """twice the density; the lattice and the radii of the original are kept"""
        return replace(self, centers_per_axis=2 * self.centers_per_axis - 1,
                       radii_per_decade=2 * self.radii_per_decade, random_centers=2 * self.random_centers)

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class BallEnsemble:
    grid: BoxGrid
    balls: tuple[BallSpec, ...]
    policy: EnsemblePolicy
    dropped: dict[str, int] = field(default_factory=dict)

    def of_class(self, *classes: BallClass) -> list[BallSpec]:
        return [ball for ball in self.balls if ball.ball_class in classes]

    @property
    def sub_critical(self) -> list[BallSpec]:
        return self.of_class(BallClass.SUB_CRITICAL)

    def counts(self) -> dict[str, int]:
        return {c.value: len(self.of_class(c)) for c in BallClass}


def _centers(grid: BoxGrid, policy: EnsemblePolicy) -> np.ndarray:
    inner = max(grid.half_width - policy.margin, 0.0) * policy.center_fraction
    axis = np.linspace(-inner, inner, policy.centers_per_axis) if policy.centers_per_axis > 1 else np.zeros(1)
    lattice = np.stack(np.meshgrid(*([axis] * grid.dimension), indexing="ij"), axis=-1).reshape(-1, grid.dimension)
    index = grid.nearest_index(lattice)
    if policy.random_centers:
        # one Philox stream for the extra centers; doubling extends it
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(policy.seed).spawn(1)[0]))
        extra = rng.uniform(-inner, inner, size=(policy.random_centers, grid.dimension))
        index = np.concatenate([index, grid.nearest_index(extra)])
    return np.unique(index, axis=0)


def ball_ensemble(grid: BoxGrid, rho: RhoField, policy: EnsemblePolicy | None = None) -> BallEnsemble:
    policy = policy or EnsemblePolicy()
    h = grid.spacing
    if policy.radius_cap is not None and policy.radius_cap < 2 * h:
        raise EnsembleError(f"radius cap {policy.radius_cap} is below 2h = {2 * h}")
    balls = []
    dropped = dict(below_resolution=0, outside_margin=0, above_cap=0)
    exponents = np.arange(-round(policy.decades_below * policy.radii_per_decade),
                          round(policy.decades_above * policy.radii_per_decade) + 1) / policy.radii_per_decade
    for index in _centers(grid, policy):
        center = tuple(float(c) for c in grid.coordinates(index))
        rho_center = float(rho.at(index))
        for radius in rho_center * 10.0 ** exponents:
            if radius <= 2 * h:
                dropped["below_resolution"] += 1
                continue
            if policy.radius_cap is not None and radius > policy.radius_cap:
                dropped["above_cap"] += 1
                continue
            if not _fits(grid, center, radius, policy.margin):
                dropped["outside_margin"] += 1
                continue
            balls.append(BallSpec(tuple(int(i) for i in index), center, float(radius), rho_center,
                                  classify(radius, rho_center), True))
    if not balls:
        raise EnsembleError("box too small: no ball fits inside the margin region above 2h")
    ensemble = BallEnsemble(grid, tuple(balls), policy, dropped)
    logger.debug("ball ensemble: %s balls %s, dropped %s", len(balls), ensemble.counts(), dropped)
    return ensemble


def ball_values(f: GridFunction, ball: BallSpec) -> np.ndarray:
    cells = ball.cells(f.grid)
    if len(cells) < MIN_BALL_CELLS:
        raise EnsembleError(f"ball below resolution: {len(cells)} < {MIN_BALL_CELLS} cells "
                            f"in B({ball.center}, {ball.radius:g})")
    return f.values.reshape(-1)[cells]


def ball_mean(values: np.ndarray) -> float:
    """mean through the first value as shift, exact for constant data"""
    shift = values[0]
    return float(shift + np.mean(values - shift))


def mean_oscillation(f: GridFunction, ball: BallSpec, p: float = 1.0) -> float:
    """((1/|B|) int_B |f - f_B|^p)^{1/p}"""
    if not p >= 1:
        raise ParameterRangeError(f"oscillation exponent must be >= 1, got {p}")
    values = ball_values(f, ball)
    deviation = np.abs(values - ball_mean(values))
    if p == 1:
        return float(np.mean(deviation))
    return float(np.mean(deviation ** p)) ** (1 / p)


OSCILLATION_COLUMNS = ("radius", "rho", "class", "f_B", "oscillation", "weighted_oscillation", "weighted_mean")


@dataclass(frozen=True, eq=False)
class OscillationReport:
    alpha: float
    p: float
    columns: tuple[str, ...]
    rows: list[tuple]
    oscillation_sup: float
    mean_sup: float
    condition_ii_dropped: bool = False
    subcritical_only: bool = False

    @property
    def norm(self) -> float:
        return max(self.oscillation_sup, self.mean_sup)

    def as_report(self, name: str = "bmo_norm") -> VerificationReport:
        weighted = [max(row[-2], row[-1]) for row in self.rows]
        return VerificationReport.from_ratios(
            name, self.columns, self.rows, np.asarray(weighted),
            header=dict(alpha=self.alpha, p=self.p, oscillation_sup=self.oscillation_sup, mean_sup=self.mean_sup,
                        norm=self.norm, condition_ii_dropped=self.condition_ii_dropped,
                        subcritical_only=self.subcritical_only))


def bmo_alpha_norm(f: GridFunction, alpha: float, ensemble: BallEnsemble, p: float = 1.0,
                   subcritical_only: bool = False) -> OscillationReport:
    """
    Condition (i): sup over balls of |B|^{-alpha/n} times the mean oscillation
    (only balls with s < rho(x0) when `subcritical_only` is set). Condition (ii):
    sup over balls with s >= rho(x0) of |B|^{-alpha/n} times the mean of |f|.
    """
    if not 0 <= alpha <= 1:
        raise ParameterRangeError(f"alpha must lie in [0, 1], got {alpha}: for alpha > 1 only constants remain")
    n = ensemble.grid.dimension
    rows = []
    oscillation_sup = mean_sup = 0.0
    critical = 0
    for ball in ensemble.balls:
        values = ball_values(f, ball)
        mean = ball_mean(values)
        deviation = np.abs(values - mean)
        oscillation = float(np.mean(deviation)) if p == 1 else float(np.mean(deviation ** p)) ** (1 / p)
        weight = ball.volume ** (-alpha / n)
        weighted_oscillation = weight * oscillation
        if subcritical_only and ball.ball_class == BallClass.CRITICAL:
            weighted_oscillation = 0.0
        weighted_mean = 0.0
        if ball.ball_class == BallClass.CRITICAL:
            critical += 1
            weighted_mean = weight * float(np.mean(np.abs(values)))
        oscillation_sup = max(oscillation_sup, weighted_oscillation)
        mean_sup = max(mean_sup, weighted_mean)
        rows.append((*ball.center, ball.radius, ball.rho, ball.ball_class.value, mean, oscillation,
                     weighted_oscillation, weighted_mean))
    if critical == 0:
        logger.warning("condition (ii) dropped: no ball with s >= rho(x0) fits inside the box")
    columns = tuple(f"x{i + 1}" for i in range(n)) + OSCILLATION_COLUMNS
    return OscillationReport(alpha, p, columns, rows, oscillation_sup, mean_sup, critical == 0, subcritical_only)


def _radial(rho: RhoField, x0: Sequence[int]) -> tuple[np.ndarray, float]:
    grid = rho.grid
    index = np.asarray(x0, dtype=np.int64)
    return grid.distance_field(grid.coordinates(index)), float(rho.at(index))


def test_function_g(rho: RhoField, x0: Sequence[int], s: float) -> GridFunction:
    """
    g_{x0,s} = log(rho(x0)/s) on |x - x0| <= s, log(rho(x0)/|x - x0|) on
    s < |x - x0| <= rho(x0), and 0 beyond.
    """
    distance, rho0 = _radial(rho, x0)
    if not 0 < s <= rho0:
        raise ParameterRangeError(f"test function needs 0 < s <= rho(x0) = {rho0}, got s = {s}")
    values = np.where(distance <= rho0, np.log(rho0 / np.maximum(distance, s)), 0.0)
    return GridFunction(rho.grid, values)


def test_function_f(rho: RhoField, x0: Sequence[int], s: float, alpha: float) -> GridFunction:
    """f_{x0,s} = rho(x0)^alpha - max(s, |x - x0|)^alpha on B(x0, rho(x0)), 0 beyond"""
    distance, rho0 = _radial(rho, x0)
    if not 0 < s <= rho0:
        raise ParameterRangeError(f"test function needs 0 < s <= rho(x0) = {rho0}, got s = {s}")
    if not 0 < alpha <= 1:
        raise ParameterRangeError(f"test function needs 0 < alpha <= 1, got {alpha}")
    values = np.where(distance <= rho0, rho0 ** alpha - np.maximum(distance, s) ** alpha, 0.0)
    return GridFunction(rho.grid, values)


def mean_value_bound_check(f: GridFunction, ensemble: BallEnsemble, alpha: float,
                           norm_estimate: float) -> VerificationReport:
    """
    |f_B| against (1 + log(rho/r)) ||f|| (alpha = 0) or rho^alpha ||f|| (alpha > 0)
    over the balls with r <= rho(x0).
    """
    balls = ensemble.of_class(BallClass.SUB_CRITICAL, BallClass.INTERMEDIATE)
    if not ensemble.sub_critical:
        raise EnsembleError("mean value bounds need sub-critical balls")
    rows, ratios = [], []
    excluded = dict(zero_bound=0)
    for ball in balls:
        mean = abs(ball_mean(ball_values(f, ball)))
        if alpha == 0:
            bound = (1 + math.log(ball.rho / ball.radius)) * norm_estimate
        else:
            bound = norm_estimate * ball.rho ** alpha
        if bound <= 0:
            excluded["zero_bound"] += 1
            continue
        rows.append((*ball.center, ball.radius, ball.rho, mean, bound, mean / bound))
        ratios.append(mean / bound)
    columns = (tuple(f"x{i + 1}" for i in range(ensemble.grid.dimension))
               + ("radius", "rho", "abs_mean", "bound", "ratio"))
    return VerificationReport.from_ratios("mean_value_bound", columns, rows, np.asarray(ratios), excluded=excluded,
                                          header=dict(alpha=alpha, norm=norm_estimate))


def covering_mean_check(f: GridFunction, alpha: float, covering: CriticalCovering,
                        ensemble: BallEnsemble | None = None) -> VerificationReport:
    """sup_k |Q_k|^{-alpha/n} (mean of |f| on Q_k), reported next to the condition (i) supremum"""
    grid = covering.grid
    n = grid.dimension
    rows, ratios = [], []
    skipped = 0
    for index, radius in zip(covering.center_points(), covering.radii):
        center = tuple(float(c) for c in index)
        cells = cached_ball_cells(grid, center, float(radius))
        if len(cells) < MIN_BALL_CELLS:
            skipped += 1
            continue
        value = float(np.mean(np.abs(f.values.reshape(-1)[cells]))) * ball_volume(n, float(radius)) ** (-alpha / n)
        rows.append((*center, float(radius), value))
        ratios.append(value)
    header: dict[str, Any] = dict(alpha=alpha, balls=covering.size)
    if ensemble is not None:
        header["oscillation_sup"] = bmo_alpha_norm(f, alpha, ensemble, subcritical_only=True).oscillation_sup
    columns = tuple(f"x{i + 1}" for i in range(n)) + ("radius", "weighted_mean")
    return VerificationReport.from_ratios("covering_mean", columns, rows, np.asarray(ratios),
                                          excluded=dict(below_resolution=skipped), header=header)


def campanato_table(f: GridFunction, alpha: float, rho: RhoField, pairs: tuple[np.ndarray, np.ndarray],
                    margin: float = 1.0, norm_estimate: float | None = None) -> VerificationReport:
    """
    The two seminorms of the Hoelder side: [f]_{C^alpha} over sampled pairs and
    ||f rho^{-alpha}||_inf over the margin region, their sum and its ratio to
    the BMO_L^alpha norm estimate.
    """
    if not 0 < alpha <= 1:
        raise ParameterRangeError(f"Campanato table needs 0 < alpha <= 1, got {alpha}")
    grid = rho.grid
    first, second = (np.asarray(p, dtype=np.int64) for p in pairs)
    keep = ~np.all(first == second, axis=-1)
    first, second = first[keep], second[keep]
    distance = np.linalg.norm(grid.coordinates(first) - grid.coordinates(second), axis=-1)
    jumps = np.abs(f.at(first) - f.at(second)) / distance ** alpha
    region = grid.interior_mask(margin) & rho.reliable_mask
    size = float(np.max(np.abs(f.values[region]) / rho.values[region] ** alpha)) if np.any(region) else 0.0
    holder = float(np.max(jumps)) if len(jumps) else 0.0
    total = holder + size
    rows = [(*map(int, a), *map(int, b), float(d), float(j)) for a, b, d, j in zip(first, second, distance, jumps)]
    n = grid.dimension
    columns = tuple(f"i{k + 1}" for k in range(n)) + tuple(f"j{k + 1}" for k in range(n)) + ("distance", "quotient")
    header: dict[str, Any] = dict(alpha=alpha, holder_seminorm=holder, size_seminorm=size, campanato=total,
                                  norm=norm_estimate)
    if norm_estimate:
        header["ratio_to_norm"] = total / norm_estimate
    return VerificationReport.from_ratios("campanato", columns, rows, jumps,
                                          excluded=dict(coincident=int(np.count_nonzero(~keep))), header=header)
