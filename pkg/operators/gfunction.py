"""
Littlewood-Paley g-functions of the heat and Poisson semigroups.

Slices are t d/dt of the semigroup applied to f, reduced by the L^2(dt/t)
quadrature of the t-grid. With that measure every eigenfunction gives
g(phi_k) = |phi_k| / 2, since int_0^inf (u e^{-u})^2 du/u = 1/4.
"""
import logging

import numpy as np

from operators.operator import KernelSample, SchrodingerOperator, SliceFamily, reduce_kernel
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import HeatRoute, poisson_derivative_kernel, route_for_poisson
from schrodinger.quadrature import derivative_formula_multiplier
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid, TGridRole

logger = logging.getLogger("schroedinger-lab")

HEAT_EXPONENT = 1.0
POISSON_EXPONENT = 0.5


def g_tgrid(model: SpectralModel, size: int, exponent: float) -> TGrid:
    return TGrid.quadrature(model.grid, model.lambda_min, model.lambda_max, size, exponent)


def _checked(model: SpectralModel, tgrid: TGrid, tolerance: float | None) -> None:
    if tgrid.role != TGridRole.QUADRATURE:
        raise ParameterRangeError("g-functions need a quadrature t-grid")
    if tolerance is not None:
        tgrid.check_residual(model.lambda_min, model.lambda_max, tolerance)


def g_heat_slices(model: SpectralModel, f: GridFunction, tgrid: TGrid) -> np.ndarray:
    """t d/dt W_t f = -t L e^{-tL} f"""
    return model.slices(f, [lambda lam, t=float(t): -t * lam * np.exp(-t * lam) for t in tgrid.times])


def g_poisson_slices(model: SpectralModel, f: GridFunction, tgrid: TGrid) -> np.ndarray:
    """t d/dt P_t f = -t sqrt(L) e^{-t sqrt(L)} f"""
    def slice_multiplier(t: float):
        return lambda lam: -t * np.sqrt(lam) * np.exp(-t * np.sqrt(lam))
    return model.slices(f, [slice_multiplier(float(t)) for t in tgrid.times])


def g_heat(model: SpectralModel, f: GridFunction, tgrid: TGrid, tolerance: float | None = 1e-6) -> GridFunction:
    _checked(model, tgrid, tolerance)
    return GridFunction(model.grid, SliceFamily(tgrid, g_heat_slices(model, f, tgrid), "F").reduce())


def g_poisson(model: SpectralModel, f: GridFunction, tgrid: TGrid, tolerance: float | None = 1e-6) -> GridFunction:
    _checked(model, tgrid, tolerance)
    return GridFunction(model.grid, SliceFamily(tgrid, g_poisson_slices(model, f, tgrid), "F").reduce())


def derivative_formula_slice(model: SpectralModel, t: float, f: GridFunction, rtol: float = 1e-9) -> GridFunction:
    """t d/dt P_t f by quadrature in v of the heat semigroup, the second route to the Poisson slice"""
    levels, inverse = np.unique(model.eigenvalue_field, return_inverse=True)
    values = derivative_formula_multiplier(t, levels, rtol)
    return model.apply(lambda lam: values[inverse].reshape(np.shape(lam)), f)


class _GFunction(SchrodingerOperator):
    vector_norm = "F"
    exponent = HEAT_EXPONENT

    @property
    def tgrid(self) -> TGrid:
        if self._tgrid is None:
            tgrid = g_tgrid(self.model, self.descriptor.tgrid_size or self.config.tgrid_size, self.exponent)
            tgrid.check_residual(self.model.lambda_min, self.model.lambda_max, self.config.g_residual_tolerance)
            self._tgrid = tgrid
        return self._tgrid


class GHeat(_GFunction):
    kind = "g-heat"

    def slices(self, f: GridFunction) -> SliceFamily:
        return SliceFamily(self.tgrid, g_heat_slices(self.model, self._grid_function(f), self.tgrid), "F")

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        times = self.tgrid.times
        values = times[:, None] * self.model.heat_kernel_dt(times, x, y)
        return KernelSample(values, reduce_kernel(values, "F", self.tgrid), times)


class GPoisson(_GFunction):
    kind = "g-poisson"
    exponent = POISSON_EXPONENT

    @property
    def route(self) -> HeatRoute:
        if self._route is None:
            self._route = route_for_poisson(self.model, self.tgrid.times, self.config.kernel_log_step,
                                            self.config.kernel_route_floor)
        return self._route

    def slices(self, f: GridFunction) -> SliceFamily:
        return SliceFamily(self.tgrid, g_poisson_slices(self.model, self._grid_function(f), self.tgrid), "F")

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        times = self.tgrid.times
        values = poisson_derivative_kernel(self.route, times, x, y)
        return KernelSample(values, reduce_kernel(values, "F", self.tgrid), times)
