import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from schrodinger.errors import ParameterRangeError, QuadratureError
from schrodinger.grid import BoxGrid
from schrodinger.quadrature import trapezoid_weights

logger = logging.getLogger("schroedinger-lab")

MIN_TIMES = 32
# head/tail of int_0^inf (u e^{-u})^2 du/u below this fraction are cut off
HEAD_TAIL_FLOOR = 1e-9


class TGridRole(Enum):
    MAXIMAL_SUP = "maximal-sup"
    QUADRATURE = "quadrature-dt-over-t"


@dataclass(frozen=True, eq=False)
class TGrid:
    """
    Log-spaced times realizing sup_{t>0} (maximal-sup role) or
    int_0^inf ... dt/t (quadrature role, trapezoid weights in log t).
    """
    times: np.ndarray
    role: TGridRole
    exponent: float = 1.0

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        if len(times) < MIN_TIMES:
            raise ParameterRangeError(f"t-grid needs at least {MIN_TIMES} times, got {len(times)}")
        if np.any(times <= 0) or np.any(np.diff(times) <= 0):
            raise ParameterRangeError("t-grid times must be positive and strictly ascending")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return len(self.times)

    @property
    def weights(self) -> np.ndarray:
        """trapezoid weights in log t (the measure dt/t)"""
        return trapezoid_weights(np.log(self.times))

    @classmethod
    def maximal(cls, grid: BoxGrid, size: int = 64) -> "TGrid":
        return cls(np.geomspace(grid.spacing ** 2 / 4, 4 * (2 * grid.half_width) ** 2, size), TGridRole.MAXIMAL_SUP)

    @classmethod
    def quadrature(cls, grid: BoxGrid, lambda_min: float, lambda_max: float, size: int = 64,
                   exponent: float = 1.0) -> "TGrid":
        """
        Times for int (u e^{-u})^2 dt/t with u = t lambda^p, p = `exponent`
        (1 for the heat g-function, 1/2 for the Poisson one); the default
        bounds are widened until head and tail fall below HEAD_TAIL_FLOOR.
        """
        head = math.sqrt(HEAD_TAIL_FLOOR / 2)
        tail = _tail_point(HEAD_TAIL_FLOOR)
        lower = min(grid.spacing ** 2 / 4, head / lambda_max ** exponent)
        upper = max(4 * (2 * grid.half_width) ** 2, tail / lambda_min ** exponent)
        return cls(np.geomspace(lower, upper, size), TGridRole.QUADRATURE, exponent)

    def refined(self) -> "TGrid":
        return TGrid(np.geomspace(self.times[0], self.times[-1], 2 * self.size), self.role, self.exponent)

    def residual(self, lambda_min: float, lambda_max: float, samples: int = 65) -> float:
        """
        Relative defect of the weighted sum against int_0^inf (u e^{-u})^2 du/u = 1/4,
        with u = t lambda^p, over lambda in [lambda_min, lambda_max]; the
        analytic head and tail bounds are added as a floor.
        """
        if self.role != TGridRole.QUADRATURE:
            raise ParameterRangeError("residual is defined for quadrature t-grids only")
        p = self.exponent
        lam = np.geomspace(lambda_min, lambda_max, samples)
        u = np.outer(lam ** p, self.times)
        measured = (u * np.exp(-u)) ** 2 @ self.weights
        defect = float(np.max(np.abs(4 * measured - 1)))
        u_head = self.times[0] * lambda_max ** p
        u_tail = self.times[-1] * lambda_min ** p
        analytic = 2 * u_head ** 2 + (2 * u_tail + 1) * math.exp(-2 * u_tail)
        return max(defect, analytic)

    def check_residual(self, lambda_min: float, lambda_max: float, tolerance: float) -> float:
        value = self.residual(lambda_min, lambda_max)
        if value > tolerance:
            raise QuadratureError(f"g-function quadrature residual {value:.3e} above {tolerance:.1e}; "
                                  f"refine the t-grid (M = {self.size})")
        logger.debug("t-grid residual %.3e (M = %s)", value, self.size)
        return value


def _tail_point(floor: float) -> float:
    """smallest u0 whose relative tail (2 u0 + 1) e^{-2 u0} is below floor"""
    u0 = 1.0
    while (2 * u0 + 1) * math.exp(-2 * u0) > floor:
        u0 += 0.25
    return u0
