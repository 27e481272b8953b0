"""
Riesz transforms R_i = d/dx_i L^{-1/2}: the inverse square root is spectral,
the derivative a fourth-order central difference in physical space with odd
reflection across the Dirichlet walls.
"""
import logging
import math
from typing import NamedTuple

import numpy as np

from operators.operator import KernelSample, SchrodingerOperator
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import STENCIL, riesz_kernel
from schrodinger.potential import Potential
from schrodinger.spectral import SpectralModel

logger = logging.getLogger("schroedinger-lab")

GHOSTS = 2


def odd_padded(values: np.ndarray, axis: int) -> np.ndarray:
    """two ghost nodes per wall: the wall node itself (0) and minus the mirrored first interior node"""
    values = np.moveaxis(values, axis, 0)
    zero = np.zeros((1,) + values.shape[1:])
    padded = np.concatenate([-values[:1], zero, values, zero, -values[-1:]])
    return np.moveaxis(padded, 0, axis)


def central_difference(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    padded = np.moveaxis(odd_padded(values, axis), axis, 0)
    m = values.shape[axis]
    total = np.zeros((m,) + padded.shape[1:])
    for offset, coefficient in STENCIL:
        total += coefficient * padded[GHOSTS + offset:GHOSTS + offset + m]
    return np.moveaxis(total / (12 * spacing), 0, axis)


def _axis(model: SpectralModel, axis: int) -> int:
    if not 1 <= axis <= model.dimension:
        raise ParameterRangeError(f"Riesz axis must lie in 1..{model.dimension}, got {axis}")
    return axis - 1


def riesz_apply(model: SpectralModel, axis: int, f: GridFunction) -> GridFunction:
    """R_i f for the 1-based axis index i"""
    index = _axis(model, axis)
    inverse_root = model.apply(lambda lam: lam ** -0.5, f)
    return GridFunction(model.grid, central_difference(inverse_root.values, index, model.grid.spacing))


class RieszDefect(NamedTuple):
    """relative defect of sum_i ||R_i f||^2 + <V u, u> = ||f||^2 with u = L^{-1/2} f"""
    defect: float
    gradient_energy: float
    potential_energy: float
    norm_squared: float


def riesz_defect(model: SpectralModel, f: GridFunction) -> RieszDefect:
    u = model.apply(lambda lam: lam ** -0.5, f)
    volume = model.grid.cell_volume
    gradient = sum(float(np.sum(central_difference(u.values, axis, model.grid.spacing) ** 2))
                   for axis in range(model.dimension)) * volume
    potential = float(np.sum(model.potential.values * u.values ** 2)) * volume
    norm_squared = f.norm(2) ** 2
    defect = (gradient + potential - norm_squared) / norm_squared if norm_squared > 0 else 0.0
    return RieszDefect(defect, gradient, potential, norm_squared)


class RieszComponent(SchrodingerOperator):
    kind = "riesz-component"
    singular = True

    def apply(self, f: GridFunction) -> GridFunction:
        return riesz_apply(self.model, int(self.descriptor.axis), self._grid_function(f))  # type: ignore[arg-type]

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = riesz_kernel(self.route, _axis(self.model, int(self.descriptor.axis)), x, y)  # type: ignore[arg-type]
        return KernelSample(values, np.abs(values))

    def admissible_alpha(self, potential: Potential) -> float:
        if math.isinf(potential.q):
            return 1.0
        return 1.0 - potential.dimension / potential.q
