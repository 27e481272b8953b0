import logging

import numpy as np

from operators.operator import KernelSample, SchrodingerOperator, SliceFamily, reduce_kernel
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid, TGridRole

logger = logging.getLogger("schroedinger-lab")


def heat_apply(model: SpectralModel, t: float, f: GridFunction) -> GridFunction:
    """W_t f = e^{-tL} f, axis by axis"""
    if not t > 0:
        raise ParameterRangeError(f"heat semigroup needs t > 0, got {t}")
    return model.apply_factorized(lambda lam: np.exp(-t * lam), f)


def heat_slices(model: SpectralModel, f: GridFunction, times: np.ndarray) -> np.ndarray:
    return np.stack([heat_apply(model, float(t), f).values for t in times])


def heat_maximal(model: SpectralModel, f: GridFunction, tgrid: TGrid) -> GridFunction:
    if tgrid.role != TGridRole.MAXIMAL_SUP:
        raise ParameterRangeError("heat maximal operator needs a maximal-sup t-grid")
    return GridFunction(model.grid, np.max(np.abs(heat_slices(model, f, tgrid.times)), axis=0))


class HeatAtT(SchrodingerOperator):
    kind = "heat-at-t"

    def apply(self, f: GridFunction) -> GridFunction:
        return heat_apply(self.model, float(self.descriptor.t), self._grid_function(f))  # type: ignore[arg-type]

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = self.model.heat_kernel(np.array([self.descriptor.t]), x, y)[0]
        return KernelSample(values, np.abs(values))


class HeatMaximal(SchrodingerOperator):
    kind = "heat-maximal"
    vector_norm = "E"

    @property
    def tgrid(self) -> TGrid:
        if self._tgrid is None:
            self._tgrid = TGrid.maximal(self.model.grid, self.descriptor.tgrid_size or self.config.tgrid_size)
        return self._tgrid

    def slices(self, f: GridFunction) -> SliceFamily:
        return SliceFamily(self.tgrid, heat_slices(self.model, self._grid_function(f), self.tgrid.times), "E")

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = self.model.heat_kernel(self.tgrid.times, x, y)
        return KernelSample(values, reduce_kernel(values, "E", self.tgrid), self.tgrid.times)
