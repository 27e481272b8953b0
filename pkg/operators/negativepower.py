import numpy as np

from operators.operator import KernelSample, SchrodingerOperator
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import negative_power_kernel
from schrodinger.potential import Potential
from schrodinger.quadrature import negative_power_multiplier
from schrodinger.spectral import SpectralModel


def negative_power(model: SpectralModel, gamma: float, f: GridFunction) -> GridFunction:
    """L^{-gamma/2} f"""
    if not gamma > 0:
        raise ParameterRangeError(f"negative power needs gamma > 0, got {gamma}")
    return model.apply(lambda lam: lam ** (-gamma / 2), f)


def negative_power_quadrature(model: SpectralModel, gamma: float, f: GridFunction,
                              rtol: float = 1e-9) -> GridFunction:
    """L^{-gamma/2} f through (1/Gamma(gamma/2)) int_0^inf e^{-tL} t^{gamma/2 - 1} dt"""
    levels, inverse = np.unique(model.eigenvalue_field, return_inverse=True)
    values = negative_power_multiplier(gamma, levels, rtol)
    return model.apply(lambda lam: values[inverse].reshape(np.shape(lam)), f)


class NegativePower(SchrodingerOperator):
    kind = "negative-power"
    singular = True

    def apply(self, f: GridFunction) -> GridFunction:
        return negative_power(self.model, self.gamma, self._grid_function(f))

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = negative_power_kernel(self.route, self.gamma, x, y)
        return KernelSample(values, np.abs(values))

    def admissible_alpha(self, potential: Potential) -> float:
        return min(1.0, potential.delta0) - self.gamma
