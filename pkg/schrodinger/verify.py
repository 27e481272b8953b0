"""
Empirical constants of the kernel estimates behind the boundedness theorems.

Every estimate is an inequality  measured(probe) <= C * bound(probe)  with a
free constant C; the fitted constant is the supremum of measured/bound over
the probes that satisfy the constraints of the inequality. Probes violating
a constraint, lying outside the margin region or giving a vanishing bound
are excluded and tallied.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from base.config import Configuration
from operators.operator import OperatorDescriptor
from operators.operatormanager import OperatorManager
from schrodinger.errors import ParameterRangeError
from schrodinger.kernels import (HeatRoute, free_gaussian, free_riesz_kernel, negative_power_kernel,
                                 riesz_kernel)
from schrodinger.probes import ProbeSet
from schrodinger.report import Verdict, VerificationReport, worst_verdict
from schrodinger.rho import RhoField
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid

logger = logging.getLogger("schroedinger-lab")

# the lemmas quantify over every N > 0; these are the ones checked
N_VALUES = (1, 2, 4, 8)
# c in the Gaussian factor e^{-c |x-y|^2 / t}
GAUSSIAN_EXPONENT = 0.2
# c in the free-comparison weight omega(u) = e^{-c |u|^2}
OMEGA_EXPONENT = 1.0
OMEGA = "e^{-|u|^2}"
# C in the constraint |y - z| < C rho(y) of the difference-of-differences estimate
DIFFERENCE_CONSTRAINT = 0.25
# bounds at or below this are treated as vanishing
BOUND_FLOOR = 1e-300


class EstimateId(Enum):
    HEAT_GAUSSIAN = "heat-gaussian"
    HEAT_FREE_COMPARISON = "heat-free-comparison"
    HEAT_HOLDER = "heat-holder"
    HEAT_DIFF_OF_DIFF = "heat-diff-of-diff"
    TDERIV_SIZE = "tderiv-size"
    TDERIV_HOLDER = "tderiv-holder"
    TDERIV_MEAN = "tderiv-mean"
    V_MOMENT = "v-moment"
    TDERIV_IDENTITY = "tderiv-identity"
    MAXIMAL_SIZE = "maximal-size"
    MAXIMAL_HOLDER = "maximal-holder"
    RIESZ_SIZE = "riesz-size"
    RIESZ_HOLDER = "riesz-holder"
    RIESZ_FREE_COMPARISON = "riesz-free-comparison"
    RIESZ_FREE_DIFF = "riesz-free-diff"
    NEGPOW_SIZE = "negpow-size"
    NEGPOW_HOLDER = "negpow-holder"

    @property
    def order(self) -> int:
        return list(EstimateId).index(self)


@dataclass(frozen=True)
class EstimateParams:
    """N of the decay bracket, the Hoelder exponent delta (None: half its ceiling) and gamma of the negative powers"""
    N: int = 2
    delta: float | None = None
    gamma: float = 0.5

    def to_dict(self) -> dict[str, Any]:
        return dict(N=self.N, delta=self.delta, gamma=self.gamma)


@dataclass(frozen=True)
class EstimateTemplate:
    measured: str
    bound: str
    constraint: str = ""
    # "delta0", "delta0-capped" (min{1, delta0}), "riesz" (1 - n/q) or "" when delta does not enter
    delta_ceiling: str = ""
    uses_n: bool = False
    singular: bool = False
    timed: bool = True
    # wall_distance^2 / (4t) below this puts the probe in the boundary layer of the box
    boundary_exponent: float | None = None


TEMPLATES: dict[EstimateId, EstimateTemplate] = {
    EstimateId.HEAT_GAUSSIAN: EstimateTemplate(
        "W_t(x,y)", "t^{-n/2} e^{-|x-y|^2/5t} (1 + sqrt(t)/rho(x) + sqrt(t)/rho(y))^{-N}", uses_n=True),
    EstimateId.HEAT_FREE_COMPARISON: EstimateTemplate(
        "|W_t(x,y) - W^0_t(x-y)|", "(sqrt(t)/rho(x))^{delta0} t^{-n/2} omega((x-y)/sqrt(t)), omega(u) = e^{-|u|^2}"),
    EstimateId.HEAT_HOLDER: EstimateTemplate(
        "|W_t(x,y) - W_t(x,z)|",
        "(|y-z|/sqrt(t))^delta t^{-n/2} e^{-|x-y|^2/5t} (1 + sqrt(t)/rho(x) + sqrt(t)/rho(y))^{-N}",
        constraint="|y-z| < sqrt(t)", delta_ceiling="delta0", uses_n=True),
    EstimateId.HEAT_DIFF_OF_DIFF: EstimateTemplate(
        "|(W_t(x,y) - W^0_t(x-y)) - (W_t(x,z) - W^0_t(x-z))|",
        "(|y-z|/rho(x))^delta t^{-n/2} omega((x-y)/sqrt(t)), omega(u) = e^{-|u|^2}",
        constraint="|y-z| < rho(y)/4 and |y-z| < |x-y|/4", delta_ceiling="delta0-capped"),
    EstimateId.TDERIV_SIZE: EstimateTemplate(
        "|t dW_t(x,y)/dt|", "t^{-n/2} e^{-|x-y|^2/5t} (1 + sqrt(t)/rho(x) + sqrt(t)/rho(y))^{-N}", uses_n=True),
    EstimateId.TDERIV_HOLDER: EstimateTemplate(
        "|t dW_t(x,y)/dt - t dW_t(x,z)/dt|",
        "(|y-z|/sqrt(t))^delta t^{-n/2} e^{-|x-y|^2/5t} (1 + sqrt(t)/rho(x) + sqrt(t)/rho(y))^{-N}",
        constraint="|y-z| <= sqrt(t)", delta_ceiling="delta0", uses_n=True),
    EstimateId.TDERIV_MEAN: EstimateTemplate(
        "|int t dW_t(x,y)/dt dy|", "(sqrt(t)/rho(x))^delta (1 + sqrt(t)/rho(x))^{-N}",
        delta_ceiling="delta0", uses_n=True, boundary_exponent=8.0),
    EstimateId.V_MOMENT: EstimateTemplate(
        "int omega_t(x-y) V(y) dy, omega(u) = e^{-|u|^2}", "(1/t) (sqrt(t)/rho(x))^delta",
        constraint="t <= rho(x)^2", delta_ceiling="delta0"),
    EstimateId.TDERIV_IDENTITY: EstimateTemplate(
        "|dW_t1(x)/dt + W_tV(x)|", "|W_tV(x)|", boundary_exponent=30.0),
    EstimateId.MAXIMAL_SIZE: EstimateTemplate(
        "sup_t W_t(x,y)", "|x-y|^{-n} (1 + |x-y|/rho(x) + |x-y|/rho(y))^{-N}",
        uses_n=True, singular=True, timed=False),
    EstimateId.MAXIMAL_HOLDER: EstimateTemplate(
        "sup_t |W_t(x,y) - W_t(x,z)| + sup_t |W_t(y,x) - W_t(z,x)|", "|y-z|^delta / |x-y|^{n+delta}",
        constraint="|x-y| > 2|y-z|", delta_ceiling="delta0", singular=True, timed=False),
    EstimateId.RIESZ_SIZE: EstimateTemplate(
        "|K(x,y)|", "|x-y|^{-n} (1 + |x-y|/rho(x))^{-N}", uses_n=True, singular=True, timed=False),
    EstimateId.RIESZ_HOLDER: EstimateTemplate(
        "|K(x,y) - K(x,z)| + |K(y,x) - K(z,x)|", "|y-z|^delta / |x-y|^{n+delta}",
        constraint="|x-y| > 2|y-z|", delta_ceiling="riesz", singular=True, timed=False),
    EstimateId.RIESZ_FREE_COMPARISON: EstimateTemplate(
        "|K(x,y) - K0(x,y)|", "|x-y|^{-n} (|x-y|/rho(x))^{delta0}", singular=True, timed=False),
    EstimateId.RIESZ_FREE_DIFF: EstimateTemplate(
        "|(K(y,x) - K0(y,x)) - (K(z,x) - K0(z,x))|", "|y-z|^delta / |x-y|^{n+delta} (|x-y|/rho(x))^{delta0}",
        constraint="|x-y| >= 2|y-z|", delta_ceiling="riesz", singular=True, timed=False),
    EstimateId.NEGPOW_SIZE: EstimateTemplate(
        "|K_gamma(x,y)|", "|x-y|^{gamma-n} (1 + |x-y|/rho(x) + |x-y|/rho(y))^{-N}",
        uses_n=True, singular=True, timed=False),
    EstimateId.NEGPOW_HOLDER: EstimateTemplate(
        "|K_gamma(x,y) - K_gamma(x,z)| + |K_gamma(y,x) - K_gamma(z,x)|", "|y-z|^delta / |x-y|^{n-gamma+delta}",
        constraint="|x-y| > 2|y-z|", delta_ceiling="delta0", singular=True, timed=False),
}

RIESZ_IDS = (EstimateId.RIESZ_SIZE, EstimateId.RIESZ_HOLDER, EstimateId.RIESZ_FREE_COMPARISON,
             EstimateId.RIESZ_FREE_DIFF)
NEGPOW_IDS = (EstimateId.NEGPOW_SIZE, EstimateId.NEGPOW_HOLDER)


def delta_ceiling(estimate: EstimateId, model: SpectralModel) -> float | None:
    kind = TEMPLATES[estimate].delta_ceiling
    potential = model.potential
    if kind == "delta0":
        return potential.delta0
    if kind == "delta0-capped":
        return min(1.0, potential.delta0)
    if kind == "riesz":
        return 1.0 if math.isinf(potential.q) else 1.0 - potential.dimension / potential.q
    return None


def resolve_params(estimate: EstimateId, model: SpectralModel, params: EstimateParams | None) -> dict[str, Any]:
    """checks the parameters against the range of the inequality and fills in delta"""
    params = params or EstimateParams()
    n = model.dimension
    if TEMPLATES[estimate].uses_n and not params.N > 0:
        raise ParameterRangeError(f"{estimate.name}: N must be > 0, got {params.N}")
    if estimate in RIESZ_IDS and not model.potential.q > n:
        raise ParameterRangeError(f"{estimate.name}: Riesz kernel estimates need q > n, got q = {model.potential.q}")
    if estimate in NEGPOW_IDS and not 0 < params.gamma < n:
        raise ParameterRangeError(f"{estimate.name}: gamma must lie in (0, n), got {params.gamma}")
    resolved: dict[str, Any] = dict(N=params.N, gamma=params.gamma, delta=None, delta0=model.potential.delta0)
    ceiling = delta_ceiling(estimate, model)
    if ceiling is not None:
        delta = ceiling / 2 if params.delta is None else params.delta
        if not 0 < delta < ceiling:
            raise ParameterRangeError(f"{estimate.name}: delta must lie in (0, {ceiling:.6g}), got {delta}")
        resolved["delta"] = float(delta)
    return resolved


class _Probes:
    """the selected probes of one evaluation with lazily computed geometry"""

    def __init__(self, model: SpectralModel, rho: RhoField, probes: ProbeSet, index: np.ndarray):
        self.model = model
        self.n = model.dimension
        self.index = index
        self.x, self.y, self.z = probes.x[index], probes.y[index], probes.z[index]
        self.t = probes.t[index]
        self.rho_x, self.rho_y = rho.at(self.x), rho.at(self.y)
        grid = probes.grid
        self.px, self.py, self.pz = grid.coordinates(self.x), grid.coordinates(self.y), grid.coordinates(self.z)
        self.r = np.linalg.norm(self.px - self.py, axis=-1)
        self.d = np.linalg.norm(self.py - self.pz, axis=-1)

    @cached_property
    def sqrt_t(self) -> np.ndarray:
        return np.sqrt(self.t)

    def gaussian(self, distance: np.ndarray) -> np.ndarray:
        return self.t ** (-self.n / 2) * np.exp(-GAUSSIAN_EXPONENT * distance ** 2 / self.t)

    def omega(self, distance: np.ndarray) -> np.ndarray:
        """t^{-n/2} omega((x-y)/sqrt(t))"""
        return self.t ** (-self.n / 2) * np.exp(-OMEGA_EXPONENT * distance ** 2 / self.t)

    def time_bracket(self, N: int) -> np.ndarray:
        return (1 + self.sqrt_t / self.rho_x + self.sqrt_t / self.rho_y) ** (-N)

    def space_bracket(self, N: int, both: bool = True) -> np.ndarray:
        inner = 1 + self.r / self.rho_x
        if both:
            inner = inner + self.r / self.rho_y
        return inner ** (-N)

    def heat(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.model.heat_kernel(self.t, x, y, pointwise=True)

    def heat_dt(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.t * self.model.heat_kernel_dt(self.t, x, y, pointwise=True)

    def free_heat(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        return free_gaussian(self.t, np.linalg.norm(first - second, axis=-1), self.n)


@dataclass
class _Evaluation:
    measured: np.ndarray
    bound: np.ndarray
    header: dict[str, Any] = field(default_factory=dict)


class EstimateVerifier:
    """
    Evaluates the inequality of one EstimateId on a probe set. Kernel routes
    and the maximal t-grid are built once per verifier.
    """

    def __init__(self, model: SpectralModel, rho: RhoField, config: Configuration | None = None):
        self.model = model
        self.rho = rho
        self.config = config or Configuration()

    @cached_property
    def route(self) -> HeatRoute:
        return HeatRoute(self.model, step=self.config.kernel_log_step, floor=self.config.kernel_route_floor)

    @cached_property
    def maximal_times(self) -> np.ndarray:
        return TGrid.maximal(self.model.grid, self.config.tgrid_size).times

    # ---- probe selection ------------------------------------------------------------------------

    def _constraint(self, estimate: EstimateId, probes: ProbeSet, rho: RhoField) -> tuple[np.ndarray, str]:
        r, d = probes.distance, probes.z_distance
        moved = np.any(probes.y != probes.z, axis=-1)
        if estimate == EstimateId.HEAT_HOLDER:
            return moved & (d < np.sqrt(probes.t)), "z_outside_sqrt_t"
        if estimate == EstimateId.TDERIV_HOLDER:
            return moved & (d <= np.sqrt(probes.t)), "z_outside_sqrt_t"
        if estimate == EstimateId.HEAT_DIFF_OF_DIFF:
            return moved & (d < DIFFERENCE_CONSTRAINT * rho.at(probes.y)) & (d < r / 4), "z_outside_quarter"
        if estimate == EstimateId.V_MOMENT:
            return probes.t <= rho.at(probes.x) ** 2, "t_above_rho_squared"
        if estimate == EstimateId.RIESZ_FREE_DIFF:
            return moved & (r >= 2 * d), "z_not_separated"
        if estimate in (EstimateId.MAXIMAL_HOLDER, EstimateId.RIESZ_HOLDER, EstimateId.NEGPOW_HOLDER):
            return moved & (r > 2 * d), "z_not_separated"
        return np.ones(len(probes), dtype=bool), ""

    def select(self, estimate: EstimateId, probes: ProbeSet) -> tuple[np.ndarray, dict[str, int]]:
        template = TEMPLATES[estimate]
        keep = probes.margin_ok.copy()
        excluded = dict(outside_margin=int(np.count_nonzero(~keep)))
        if template.singular:
            off = keep & probes.diagonal
            excluded["on_diagonal"] = int(np.count_nonzero(off))
            keep &= ~probes.diagonal
        admissible, label = self._constraint(estimate, probes, self.rho)
        if label:
            excluded[label] = int(np.count_nonzero(keep & ~admissible))
            keep &= admissible
        if template.boundary_exponent is not None:
            inside = probes.wall_distance() ** 2 / (4 * probes.t) >= template.boundary_exponent
            excluded["boundary_layer"] = int(np.count_nonzero(keep & ~inside))
            keep &= inside
        return np.flatnonzero(keep), excluded

    # ---- inequalities ---------------------------------------------------------------------------

    def _riesz(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.stack([riesz_kernel(self.route, axis, x, y) for axis in range(self.model.dimension)], axis=-1)

    def _free_riesz(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        return free_riesz_kernel(first - second, self.model.dimension)

    def _maximal(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.model.heat_kernel(self.maximal_times, x, y)

    def _v_moment(self, p: _Probes) -> np.ndarray:
        """int t^{-n/2} e^{-|x-y|^2/t} V(y) dy over the box"""
        grid, potential = self.model.grid, self.model.potential
        h = grid.spacing
        if potential.is_separable:
            weights = [np.exp(-OMEGA_EXPONENT * (p.px[:, axis, None] - grid.axis[None, :]) ** 2 / p.t[:, None])
                       / np.sqrt(p.t)[:, None] * h for axis in range(p.n)]
            masses = [w.sum(axis=1) for w in weights]
            total = np.zeros(len(p.t))
            for axis, (w, factor) in enumerate(zip(weights, potential.factors)):
                term = w @ factor
                for other, mass in enumerate(masses):
                    if other != axis:
                        term = term * mass
                total += term
            return total
        nodes = grid.coordinates(grid.unravel(np.arange(grid.size)))
        values = potential.values.reshape(-1)
        total = np.empty(len(p.t))
        for i in range(len(p.t)):
            squared = np.sum((nodes - p.px[i]) ** 2, axis=-1)
            weight = np.exp(-OMEGA_EXPONENT * squared / p.t[i]) * p.t[i] ** (-p.n / 2)
            total[i] = np.sum(weight * values) * grid.cell_volume
        return total

    def evaluate(self, estimate: EstimateId, p: _Probes, params: dict[str, Any]) -> _Evaluation:
        N, delta, gamma, delta0 = params["N"], params["delta"], params["gamma"], params["delta0"]
        n = p.n
        e = EstimateId
        if estimate == e.HEAT_GAUSSIAN:
            values = p.heat(p.x, p.y)
            return _Evaluation(np.abs(values), p.gaussian(p.r) * p.time_bracket(N),
                               dict(min_kernel=float(np.min(values)) if len(values) else None))
        if estimate == e.HEAT_FREE_COMPARISON:
            measured = np.abs(p.heat(p.x, p.y) - p.free_heat(p.px, p.py))
            return _Evaluation(measured, (p.sqrt_t / p.rho_x) ** delta0 * p.omega(p.r), dict(omega=OMEGA))
        if estimate == e.HEAT_HOLDER:
            measured = np.abs(p.heat(p.x, p.y) - p.heat(p.x, p.z))
            return _Evaluation(measured, (p.d / p.sqrt_t) ** delta * p.gaussian(p.r) * p.time_bracket(N))
        if estimate == e.HEAT_DIFF_OF_DIFF:
            first = p.heat(p.x, p.y) - p.free_heat(p.px, p.py)
            second = p.heat(p.x, p.z) - p.free_heat(p.px, p.pz)
            return _Evaluation(np.abs(first - second), (p.d / p.rho_x) ** delta * p.omega(p.r),
                               dict(constraint_constant=DIFFERENCE_CONSTRAINT, omega=OMEGA))
        if estimate == e.TDERIV_SIZE:
            return _Evaluation(np.abs(p.heat_dt(p.x, p.y)), p.gaussian(p.r) * p.time_bracket(N))
        if estimate == e.TDERIV_HOLDER:
            measured = np.abs(p.heat_dt(p.x, p.y) - p.heat_dt(p.x, p.z))
            return _Evaluation(measured, (p.d / p.sqrt_t) ** delta * p.gaussian(p.r) * p.time_bracket(N),
                               dict(varied_argument="second (W_t is symmetric)"))
        if estimate == e.TDERIV_MEAN:
            measured = p.t * np.abs(self.model.heat_mass_dt(p.t, p.x, pointwise=True))
            scale = p.sqrt_t / p.rho_x
            return _Evaluation(measured, scale ** delta * (1 + scale) ** (-N))
        if estimate == e.V_MOMENT:
            return _Evaluation(self._v_moment(p), (p.sqrt_t / p.rho_x) ** delta / p.t, dict(omega=OMEGA))
        if estimate == e.TDERIV_IDENTITY:
            potential_term = self.model.heat_potential(p.t, p.x, pointwise=True)
            derivative = self.model.heat_mass_dt(p.t, p.x, pointwise=True)
            return _Evaluation(np.abs(derivative + potential_term), np.abs(potential_term))
        if estimate == e.MAXIMAL_SIZE:
            measured = np.max(np.abs(self._maximal(p.x, p.y)), axis=0)
            return _Evaluation(measured, p.r ** (-n) * p.space_bracket(N), dict(tgrid_size=len(self.maximal_times)))
        if estimate == e.MAXIMAL_HOLDER:
            forward = np.max(np.abs(self._maximal(p.x, p.y) - self._maximal(p.x, p.z)), axis=0)
            backward = np.max(np.abs(self._maximal(p.y, p.x) - self._maximal(p.z, p.x)), axis=0)
            return _Evaluation(forward + backward, p.d ** delta / p.r ** (n + delta))
        if estimate == e.RIESZ_SIZE:
            measured = np.linalg.norm(self._riesz(p.x, p.y), axis=-1)
            return _Evaluation(measured, p.r ** (-n) * p.space_bracket(N, both=False))
        if estimate == e.RIESZ_HOLDER:
            forward = np.linalg.norm(self._riesz(p.x, p.y) - self._riesz(p.x, p.z), axis=-1)
            backward = np.linalg.norm(self._riesz(p.y, p.x) - self._riesz(p.z, p.x), axis=-1)
            return _Evaluation(forward + backward, p.d ** delta / p.r ** (n + delta))
        if estimate == e.RIESZ_FREE_COMPARISON:
            kernel = self._riesz(p.x, p.y)
            difference = np.linalg.norm(kernel - self._free_riesz(p.px, p.py), axis=-1)
            header: dict[str, Any] = {}
            if self.model.potential.is_zero and len(difference):
                magnitude = np.linalg.norm(self._free_riesz(p.px, p.py), axis=-1)
                header["free_relative_discrepancy"] = float(np.median(difference / magnitude))
            return _Evaluation(difference, p.r ** (-n) * (p.r / p.rho_x) ** delta0, header)
        if estimate == e.RIESZ_FREE_DIFF:
            first = self._riesz(p.y, p.x) - self._free_riesz(p.py, p.px)
            second = self._riesz(p.z, p.x) - self._free_riesz(p.pz, p.px)
            measured = np.linalg.norm(first - second, axis=-1)
            return _Evaluation(measured, p.d ** delta / p.r ** (n + delta) * (p.r / p.rho_x) ** delta0)
        if estimate == e.NEGPOW_SIZE:
            measured = np.abs(negative_power_kernel(self.route, gamma, p.x, p.y))
            return _Evaluation(measured, p.r ** (gamma - n) * p.space_bracket(N))
        if estimate == e.NEGPOW_HOLDER:
            def kernel(first: np.ndarray, second: np.ndarray) -> np.ndarray:
                return negative_power_kernel(self.route, gamma, first, second)
            measured = np.abs(kernel(p.x, p.y) - kernel(p.x, p.z)) + np.abs(kernel(p.y, p.x) - kernel(p.z, p.x))
            return _Evaluation(measured, p.d ** delta / p.r ** (n - gamma + delta))
        logger.fatal(f"evaluate: no inequality for {estimate}")
        raise NotImplementedError(estimate)

    # ---- reports --------------------------------------------------------------------------------

    def report(self, estimate: EstimateId, probes: ProbeSet, params: EstimateParams | None = None,
               name: str | None = None) -> VerificationReport:
        resolved = resolve_params(estimate, self.model, params)
        template = TEMPLATES[estimate]
        index, excluded = self.select(estimate, probes)
        p = _Probes(self.model, self.rho, probes, index)
        if len(index):
            evaluation = self.evaluate(estimate, p, resolved)
        else:
            evaluation = _Evaluation(np.zeros(0), np.zeros(0))
            logger.warning("%s: no admissible probe among %s", estimate.name, len(probes))
        positive = evaluation.bound > BOUND_FLOOR
        excluded["zero_bound"] = int(np.count_nonzero(~positive))
        ratios = evaluation.measured[positive] / evaluation.bound[positive]
        kept = np.flatnonzero(positive)

        n = self.model.dimension
        columns = (("probe",) + tuple(f"x{i + 1}" for i in range(n)) + tuple(f"y{i + 1}" for i in range(n))
                   + tuple(f"z{i + 1}" for i in range(n)) + ("t", "measured", "bound", "ratio"))
        rows = []
        for k, ratio in zip(kept, ratios):
            rows.append((int(p.index[k]),) + tuple(float(v) for v in p.px[k]) + tuple(float(v) for v in p.py[k])
                        + tuple(float(v) for v in p.pz[k])
                        + (float(p.t[k]) if template.timed else None, float(evaluation.measured[k]),
                           float(evaluation.bound[k]), float(ratio)))

        truncation = False
        if len(ratios):
            attained = kept[int(np.argmax(ratios))]
            reach = p.sqrt_t[attained] if template.timed else p.r[attained]
            truncation = bool(reach > probes.grid.wall_distance(p.px[attained]))
        header = dict(estimate=estimate.value, measured=template.measured, bound=template.bound,
                      constraint=template.constraint, dimension=n, probes=len(probes),
                      **{k: v for k, v in resolved.items() if v is not None}, **evaluation.header)
        return VerificationReport.from_ratios(name or estimate.name, columns, rows, ratios, excluded=excluded,
                                              header=header, truncation_dominated=truncation)


def verify_estimate(estimate: EstimateId, model: SpectralModel, rho: RhoField, probes: ProbeSet,
                    params: EstimateParams | None = None, config: Configuration | None = None,
                    stability: bool = True, verifier: EstimateVerifier | None = None) -> VerificationReport:
    """
    The fitted constant of one estimate; with `stability` the estimate is
    recomputed on the doubled probe set and the relative change is attached.
    """
    verifier = verifier or EstimateVerifier(model, rho, config)
    name = report_name(estimate, params)
    logger.info(">>>%s<<< verifying on %s probes", name, len(probes))
    report = verifier.report(estimate, probes, params, name)
    if stability:
        report = report.with_stability(verifier.report(estimate, probes.doubled(rho), params, name))
    logger.debug(">>>%s<<< constant %.6g, stability delta %s", name, report.constant, report.stability_delta)
    return report


def report_name(estimate: EstimateId, params: EstimateParams | None = None) -> str:
    """'HEAT_GAUSSIAN[N=2]', 'NEGPOW_SIZE[N=1,gamma=0.5]', 'HEAT_HOLDER'"""
    params = params or EstimateParams()
    details = []
    if TEMPLATES[estimate].uses_n:
        details.append(f"N={params.N}")
    if estimate in NEGPOW_IDS:
        details.append(f"gamma={params.gamma:g}")
    return estimate.name + (f"[{','.join(details)}]" if details else "")


def verify_estimates(model: SpectralModel, rho: RhoField, probes: ProbeSet,
                     estimates: Sequence[EstimateId] | None = None, params: EstimateParams | None = None,
                     config: Configuration | None = None, stability: bool = True,
                     gammas: Sequence[float] | None = None) -> list[VerificationReport]:
    """
    every requested estimate, the N-dependent ones for each N in N_VALUES and
    the negative power ones for each gamma of `gammas`
    """
    params = params or EstimateParams()
    verifier = EstimateVerifier(model, rho, config)
    reports = []
    for estimate in estimates or list(EstimateId):
        if estimate in RIESZ_IDS and not model.potential.q > model.dimension:
            logger.warning("%s skipped: the Riesz kernel estimates need q > n", estimate.name)
            continue
        values = N_VALUES if TEMPLATES[estimate].uses_n else (params.N,)
        orders = tuple(gammas or (params.gamma,)) if estimate in NEGPOW_IDS else (params.gamma,)
        for N in values:
            for gamma in orders:
                reports.append(verify_estimate(estimate, model, rho, probes, EstimateParams(N, params.delta, gamma),
                                               stability=stability, verifier=verifier))
    if model.potential.is_zero and EstimateId.HEAT_GAUSSIAN in (estimates or list(EstimateId)):
        cap = float(np.max(rho.values))
        reports.append(heat_gaussian_calibration(model.dimension, cap))
    return reports


def heat_gaussian_calibration(dimension: int, rho_value: float, N: int = 1,
                              times: np.ndarray | None = None) -> VerificationReport:
    """
    HEAT_GAUSSIAN on the continuum free kernel with constant rho: the
    supremum is attained on the diagonal and tends to (4 pi)^{-n/2} as t -> 0.
    """
    times = np.geomspace(1e-6, 1e-4, 21) if times is None else np.asarray(times, dtype=float)
    multiples = np.array([0.0, 0.25, 0.5, 1.0, 2.0])
    t = np.repeat(times, len(multiples))
    r = np.tile(multiples, len(times)) * np.sqrt(t)
    measured = free_gaussian(t, r, dimension)
    bound = t ** (-dimension / 2) * np.exp(-GAUSSIAN_EXPONENT * r ** 2 / t) * (1 + 2 * np.sqrt(t) / rho_value) ** (-N)
    ratios = measured / bound
    rows = [(i, float(t[i]), float(r[i]), float(measured[i]), float(bound[i]), float(ratios[i]))
            for i in range(len(t))]
    return VerificationReport.from_ratios(
        f"{EstimateId.HEAT_GAUSSIAN.name}[free-continuum,N={N}]", ("probe", "t", "distance", "measured", "bound",
                                                                   "ratio"),
        rows, ratios, header=dict(estimate=EstimateId.HEAT_GAUSSIAN.value, dimension=dimension, N=N,
                                  rho=rho_value, expected=(4 * math.pi) ** (-dimension / 2)))


# ---- bundle ---------------------------------------------------------------------------------------

def _order(report: VerificationReport) -> tuple[int, str]:
    head = report.name.split("[", 1)[0]
    try:
        return EstimateId[head].order, report.name
    except KeyError:
        return len(EstimateId), report.name


@dataclass(frozen=True, eq=False)
class ReportBundle:
    reports: list[VerificationReport]
    stability_threshold: float = 0.25

    @property
    def verdicts(self) -> list[Verdict]:
        return [report.verdict(self.stability_threshold) for report in self.reports]

    @property
    def verdict(self) -> Verdict:
        return worst_verdict(self.verdicts)

    @property
    def exit_code(self) -> int:
        return self.verdict.exit_code

    def flagged(self) -> list[str]:
        """'<verdict> <name>' for every report that is not consistent"""
        return [f"{verdict.value} {report.name}" for report, verdict in zip(self.reports, self.verdicts)
                if verdict != Verdict.CONSISTENT]

    def to_dict(self) -> dict[str, Any]:
        return dict(verdict=self.verdict.value, flagged=self.flagged(),
                    estimates=[report.summary(self.stability_threshold) for report in self.reports])


def report_bundle(reports: Sequence[VerificationReport], stability_threshold: float = 0.25) -> ReportBundle:
    """merges reports into one bundle ordered by EstimateId, other reports last by name"""
    ordered = sorted(reports, key=_order)
    bundle = ReportBundle(ordered, stability_threshold)
    for line in bundle.flagged():
        logger.warning("verify bundle: %s", line)
    return bundle


# ---- kernel probe dump ----------------------------------------------------------------------------

def _coordinates(point: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in point)


def kernel_probe_dump(descriptor: OperatorDescriptor, model: SpectralModel, probes: ProbeSet,
                      manager: OperatorManager | None = None) -> list[tuple[str, float | None, str, str, float]]:
    """(kind, t, x, y, value) rows of the operator kernel at the probe pairs, one row per t for vector kinds"""
    manager = manager or OperatorManager(model)
    operator = manager.get(descriptor)
    x, y = probes.x, probes.y
    if operator.singular:
        off = ~probes.diagonal
        if not np.all(off):
            logger.info("kernel dump %s: %s on-diagonal probes skipped", descriptor.label,
                        int(np.count_nonzero(~off)))
        x, y = x[off], y[off]
    if len(x) == 0:
        return []
    sample = operator.kernel(x, y)
    px, py = model.grid.coordinates(x), model.grid.coordinates(y)
    values = np.atleast_2d(sample.values)
    times: Sequence[float | None] = list(sample.times) if sample.times is not None else [descriptor.t]
    rows = []
    for row, t in zip(values, times):
        for i in range(len(x)):
            rows.append((descriptor.kind, None if t is None else float(t), _coordinates(px[i]), _coordinates(py[i]),
                         float(row[i])))
    return rows
