"""
Kernels of functions of L sampled at node pairs, obtained as log-trapezoid
integrals in t of the heat kernel, plus the closed-form free kernels used as
references.
"""
import logging
import math
from typing import Callable

import numpy as np
from scipy.special import gamma as gamma_function

from schrodinger.quadrature import trapezoid_weights
from schrodinger.spectral import SpectralModel

logger = logging.getLogger("schroedinger-lab")

# the upper end of every route is ROUTE_TAIL / lambda_min
ROUTE_TAIL = 40.0


class HeatRoute:
    """log-spaced times from floor*h^2 (or lower) to ROUTE_TAIL / lambda_min with trapezoid weights"""

    def __init__(self, model: SpectralModel, step: float = 0.05, floor: float = 1e-3, lower: float | None = None):
        self.model = model
        start = floor * model.grid.spacing ** 2
        if lower is not None:
            start = min(start, lower)
        stop = ROUTE_TAIL / model.lambda_min
        count = max(int(math.ceil(math.log(stop / start) / step)), 8) + 1
        self.log_times = np.linspace(math.log(start), math.log(stop), count)
        self.times = np.exp(self.log_times)
        self.weights = trapezoid_weights(self.log_times)

    def integrate(self, density: np.ndarray, values: np.ndarray) -> np.ndarray:
        """sum over route times of weight * density * values; density (S,) or (T, S), values (S, P)"""
        return (np.asarray(density) * self.weights) @ values

    def kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.model.heat_kernel(self.times, x, y)

    def kernel_dt(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.model.heat_kernel_dt(self.times, x, y)


def negative_power_kernel(route: HeatRoute, gamma: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """K_gamma(x, y) = (1/Gamma(gamma/2)) int_0^inf W_t(x, y) t^{gamma/2} dt/t"""
    density = route.times ** (gamma / 2) / gamma_function(gamma / 2)
    return route.integrate(density, route.kernel(x, y))


def shifted_index(index: np.ndarray, axis: int, offset: int, points: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Neighbour multi-indices along one axis with odd reflection across the
    Dirichlet walls: the wall nodes carry 0, the ghosts beyond carry minus
    the mirrored interior value. Returns (indices, signs).
    """
    shifted = np.array(index, dtype=np.int64, copy=True)
    j = shifted[:, axis] + offset
    sign = np.ones(len(j))
    sign[(j == -1) | (j == points)] = 0.0
    low = j <= -2
    high = j >= points + 1
    sign[low | high] = -1.0
    j = np.where(low, -j - 2, np.where(high, 2 * points - j, j))
    shifted[:, axis] = np.clip(j, 0, points - 1)
    return shifted, sign


STENCIL = ((2, -1.0), (1, 8.0), (-1, -8.0), (-2, 1.0))


def stencil_derivative(evaluate: Callable[[np.ndarray], np.ndarray], index: np.ndarray, axis: int,
                       spacing: float, points: int) -> np.ndarray:
    """4th-order central difference in x_axis of a function of node indices (values along the last axis)"""
    total = None
    for offset, coefficient in STENCIL:
        shifted, sign = shifted_index(index, axis, offset, points)
        term = coefficient * sign * evaluate(shifted)
        total = term if total is None else total + term
    return total / (12 * spacing)


def riesz_kernel(route: HeatRoute, axis: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d/dx_axis of the L^{-1/2} kernel K_1(x, y)"""
    grid = route.model.grid
    return stencil_derivative(lambda shifted: negative_power_kernel(route, 1.0, shifted, y),
                              np.atleast_2d(x), axis, grid.spacing, grid.points)


def poisson_kernel(route: HeatRoute, sigma: float, times: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    P^sigma_t(x, y) = (1/Gamma(sigma)) int_0^inf W_tau(x, y) e^{-t^2/(4 tau)} (t^2/(4 tau))^sigma dtau/tau,
    shape (T, P)
    """
    ratio = np.outer(np.asarray(times, dtype=float) ** 2 / 4, 1.0 / route.times)
    density = np.exp(-ratio) * ratio ** sigma / gamma_function(sigma)
    return route.integrate(density, route.kernel(x, y))


def poisson_derivative_kernel(route: HeatRoute, times: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """t d/dt P_t(x, y) = (t/sqrt(pi)) int e^{-t^2/(4v)} v dW_v/dv v^{-3/2} dv, shape (T, P)"""
    times = np.asarray(times, dtype=float)
    ratio = np.outer(times ** 2 / 4, 1.0 / route.times)
    density = times[:, None] / math.sqrt(math.pi) * np.exp(-ratio) * route.times ** -0.5
    return route.integrate(density, route.times[:, None] * route.kernel_dt(x, y))


def laplace_kernel(route: HeatRoute, symbol: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                   y: np.ndarray) -> np.ndarray:
    """M(x, y) = -int_0^inf a(t) dW_t(x, y)/dt dt"""
    density = -symbol(route.times) * route.times
    return route.integrate(density, route.kernel_dt(x, y))


def route_for_poisson(model: SpectralModel, times: np.ndarray, step: float, floor: float) -> HeatRoute:
    return HeatRoute(model, step=step, floor=floor, lower=float(np.min(times)) ** 2 / (4 * 80.0))


# ---- closed-form free kernels on R^n ------------------------------------------------------------

def free_gaussian(t: np.ndarray, distance: np.ndarray, dimension: int) -> np.ndarray:
    """(4 pi t)^{-n/2} e^{-r^2/(4t)}"""
    t = np.asarray(t, dtype=float)
    return (4 * math.pi * t) ** (-dimension / 2) * np.exp(-np.asarray(distance) ** 2 / (4 * t))


def free_riesz_kernel(difference: np.ndarray, dimension: int) -> np.ndarray:
    """kernel of d/dx_i (-Laplace)^{-1/2}: -Gamma((n+1)/2) pi^{-(n+1)/2} (x-y)_i / |x-y|^{n+1}"""
    difference = np.atleast_2d(difference)
    norm = np.linalg.norm(difference, axis=-1, keepdims=True)
    constant = math.gamma((dimension + 1) / 2) / math.pi ** ((dimension + 1) / 2)
    return -constant * difference / norm ** (dimension + 1)


def free_negative_power_kernel(distance: np.ndarray, gamma: float, dimension: int) -> np.ndarray:
    """Riesz potential kernel of (-Laplace)^{-gamma/2}, gamma < n"""
    constant = math.gamma((dimension - gamma) / 2) / (4 ** (gamma / 2) * math.pi ** (dimension / 2)
                                                      * math.gamma(gamma / 2))
    return constant * np.asarray(distance, dtype=float) ** (gamma - dimension)
