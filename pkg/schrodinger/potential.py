import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial
from scipy.interpolate import CubicSpline

from schrodinger.errors import DenseCapExceededError, ParameterRangeError, PotentialError
from schrodinger.grid import BoxGrid, cached_ball_cells
from schrodinger.report import VerificationReport

if TYPE_CHECKING:
    from schrodinger.bmo import BallEnsemble

logger = logging.getLogger("schroedinger-lab")

DEFAULT_DENSE_CAP = 4096


class PotentialMode(Enum):
    SEPARABLE = "separable"
    DENSE = "dense"


PRESETS = ("constant", "harmonic", "separable-polynomial", "zero")


@dataclass(frozen=True, eq=False)
class Potential:
    """
    The nonnegative potential V on the grid: either V(x) = sum_i v_i(x_i) from
    per-axis factors, or full tensor samples. `q` is the reverse Hoelder
    exponent (math.inf for the bounded smooth presets).
    """
    grid: BoxGrid
    mode: PotentialMode
    factors: tuple[np.ndarray, ...] = ()
    samples: np.ndarray | None = None
    q: float = math.inf
    label: str = "custom"

    def __post_init__(self) -> None:
        n, m = self.grid.dimension, self.grid.points
        if self.mode == PotentialMode.SEPARABLE:
            if len(self.factors) != n:
                raise PotentialError(f"separable potential needs {n} axis factors, got {len(self.factors)}")
            frozen = []
            for axis, factor in enumerate(self.factors):
                factor = np.array(factor, dtype=float)
                if factor.shape != (m,):
                    raise PotentialError(f"axis factor {axis} has shape {factor.shape}, expected ({m},)")
                _check_samples(factor, prefix=f"axis {axis} ")
                factor.setflags(write=False)
                frozen.append(factor)
            object.__setattr__(self, "factors", tuple(frozen))
        else:
            if self.samples is None:
                raise PotentialError("dense potential needs tensor samples")
            samples = np.array(self.samples, dtype=float).reshape(self.grid.shape)
            _check_samples(samples)
            samples.setflags(write=False)
            object.__setattr__(self, "samples", samples)
        if not math.isinf(self.q) and self.q <= n / 2:
            raise PotentialError(
                f"q = {self.q} violates the standing assumption V in RH_q with q > n/2 = {n / 2}")
        if n < 3:
            logger.warning("potential on dimension %s < 3: the theory assumes n >= 3, numerics only", n)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def is_separable(self) -> bool:
        return self.mode == PotentialMode.SEPARABLE

    @property
    def delta0(self) -> float:
        """smoothness budget 2 - n/q"""
        if math.isinf(self.q):
            return 2.0
        return 2.0 - self.dimension / self.q

    @cached_property
    def values(self) -> np.ndarray:
        if self.samples is not None:
            return self.samples
        total = np.zeros(self.grid.shape)
        for axis, factor in enumerate(self.factors):
            shape = [1] * self.dimension
            shape[axis] = -1
            total = total + factor.reshape(shape)
        total.setflags(write=False)
        return total

    def values_at(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        if not self.is_separable:
            return self.values.reshape(-1)[flat]
        index = np.unravel_index(flat, self.grid.shape)
        return np.sum([factor[i] for factor, i in zip(self.factors, index)], axis=0)

    @cached_property
    def splines(self) -> tuple[CubicSpline, ...]:
        """not-a-knot interpolants of the axis factors, extended by the wall value"""
        return tuple(CubicSpline(self.grid.axis, factor, extrapolate=True) for factor in self.factors)

    @property
    def is_zero(self) -> bool:
        if self.is_separable:
            return all(not np.any(factor) for factor in self.factors)
        return not np.any(self.samples)

    def restricted(self, cells: int) -> "Potential":
        """the potential on the box shrunk by `cells` nodes at every wall"""
        grid = self.grid.shrunk(cells)
        window = slice(cells, self.grid.points - cells)
        if self.is_separable:
            return Potential(grid, self.mode, factors=tuple(f[window] for f in self.factors), q=self.q,
                             label=self.label)
        return Potential(grid, self.mode, samples=self.values[(window,) * self.dimension], q=self.q, label=self.label)

    def dominates(self, other: "Potential") -> bool:
        return bool(np.all(self.values >= other.values))

    def describe(self) -> dict[str, Any]:
        return dict(label=self.label, mode=self.mode.value, q=("infinite" if math.isinf(self.q) else self.q),
                    delta0=self.delta0, dimension=self.dimension)

    @classmethod
    def free(cls, grid: BoxGrid, mode: PotentialMode = PotentialMode.SEPARABLE) -> "Potential":
        return build_potential("zero", grid, mode=mode, dense_cap=grid.size)


def _check_samples(samples: np.ndarray, prefix: str = "") -> None:
    if not np.all(np.isfinite(samples)):
        bad = np.argwhere(~np.isfinite(samples))[0]
        raise PotentialError(f"potential must be finite: {prefix}sample {tuple(int(i) for i in bad)} is not")
    if np.any(samples < 0):
        bad = np.argwhere(samples < 0)[0]
        index = tuple(int(i) for i in bad)
        raise PotentialError(
            f"potential must be nonnegative: {prefix}sample {index} is {samples[index]}")


def _preset_factors(name: str, grid: BoxGrid, params: Mapping[str, Any]) -> tuple[list[np.ndarray], str]:
    n, axis = grid.dimension, grid.axis
    if name == "constant":
        value = float(params.get("value", 1.0))
        if not value > 0:
            raise PotentialError(f"constant preset requires c > 0, got {value}")
        return [np.full(grid.points, value / n) for _ in range(n)], f"constant:{value:g}"
    if name == "harmonic":
        scale = float(params.get("scale", 1.0))
        if scale < 0:
            raise PotentialError(f"harmonic preset requires a nonnegative scale, got {scale}")
        return [scale * axis ** 2 for _ in range(n)], "harmonic" if scale == 1.0 else f"harmonic:{scale:g}"
    if name == "separable-polynomial":
        coefficients = params.get("coefficients")
        if coefficients is None:
            raise PotentialError("separable-polynomial preset requires 'coefficients'")
        if coefficients and not isinstance(coefficients[0], (list, tuple)):
            coefficients = [coefficients] * n
        if len(coefficients) != n:
            raise PotentialError(f"separable-polynomial needs 1 or {n} coefficient lists")
        return [polynomial.polyval(axis, np.asarray(c, dtype=float)) for c in coefficients], "separable-polynomial"
    if name == "zero":
        return [np.zeros(grid.points) for _ in range(n)], "zero"
    raise PotentialError(f"unknown potential preset '{name}', expected one of {', '.join(PRESETS)}")


def parse_preset(text: str) -> tuple[str, dict[str, Any]]:
    """'constant:2' -> ('constant', {'value': 2.0}); 'harmonic:0.5' -> scale"""
    name, _, argument = text.partition(":")
    params: dict[str, Any] = {}
    if argument:
        if name == "constant":
            params["value"] = float(argument)
        elif name == "harmonic":
            params["scale"] = float(argument)
        elif name == "separable-polynomial":
            params["coefficients"] = [float(c) for c in argument.split("/")]
        else:
            raise PotentialError(f"preset '{name}' takes no argument")
    return name, params


def build_potential(spec: str | Mapping[str, Any] | Sequence[np.ndarray] | np.ndarray, grid: BoxGrid,
                    q: float | None = None, mode: PotentialMode = PotentialMode.SEPARABLE,
                    dense_cap: int = DEFAULT_DENSE_CAP) -> Potential:
    """
    Build a validated potential from a preset name ("constant:1", "harmonic"),
    a preset mapping ({"preset": "constant", "value": 1}), a sequence of
    per-axis sample vectors or a full tensor of samples.
    """
    label = "custom"
    factors: list[np.ndarray] | None = None
    samples: np.ndarray | None = None

    if isinstance(spec, str):
        name, params = parse_preset(spec)
        factors, label = _preset_factors(name, grid, params)
    elif isinstance(spec, Mapping):
        params = dict(spec)
        name = params.pop("preset", None)
        if name is None:
            raise PotentialError("potential mapping needs a 'preset' key")
        factors, label = _preset_factors(str(name), grid, params)
    elif (isinstance(spec, np.ndarray) and spec.ndim == grid.dimension and spec.shape == grid.shape
          and grid.dimension > 1):
        samples = spec
    else:
        factors = [np.asarray(f, dtype=float) for f in spec]

    if mode == PotentialMode.DENSE:
        if grid.size > dense_cap:
            raise DenseCapExceededError(f"dense cap exceeded: m^n = {grid.size} > {dense_cap}")
        if samples is None:
            assert factors is not None
            for axis, factor in enumerate(factors):
                _check_samples(np.asarray(factor), prefix=f"axis {axis} ")
            samples = np.zeros(grid.shape)
            for axis, factor in enumerate(factors):
                shape = [1] * grid.dimension
                shape[axis] = -1
                samples = samples + np.asarray(factor).reshape(shape)
        return Potential(grid, mode, samples=samples, q=math.inf if q is None else q, label=label)

    if factors is None:
        raise PotentialError("tensor samples need dense mode")
    return Potential(grid, mode, factors=tuple(factors), q=math.inf if q is None else q, label=label)


def reverse_holder_constant(potential: Potential, q: float, ensemble: "BallEnsemble") -> VerificationReport:
    """
    Empirical RH_q constant: sup over the ensemble of the L^q ball mean of V
    divided by its L^1 ball mean. Balls where V vanishes are tallied as
    degenerate.
    """
    if math.isinf(q) or not q >= 1:
        raise ParameterRangeError(f"reverse Hoelder exponent must be finite and >= 1, got {q}")
    rows = []
    ratios = []
    degenerate = 0
    for ball in ensemble.balls:
        cells = cached_ball_cells(potential.grid, ball.center, ball.radius)
        values = potential.values_at(cells)
        top = float(np.max(values))
        if top == 0.0:
            degenerate += 1
            continue
        unit = values / top
        linear = float(np.mean(unit))
        power = float(np.mean(unit ** q)) ** (1.0 / q)
        ratio = power / linear
        rows.append((*ball.center, ball.radius, linear * top, power * top, ratio))
        ratios.append(ratio)
    columns = tuple(f"x{i + 1}" for i in range(potential.dimension)) + ("radius", "mean_l1", "mean_lq", "ratio")
    return VerificationReport.from_ratios(
        "reverse_holder", columns, rows, np.asarray(ratios), excluded=dict(degenerate=degenerate),
        header=dict(q=q, balls=len(ensemble.balls), potential=potential.label))
