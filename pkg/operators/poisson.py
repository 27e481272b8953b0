"""
Generalized Poisson operators P^sigma_t = (t^{2 sigma}/(4^sigma Gamma(sigma))) int e^{-t^2/(4r)} W_r dr/r^{1+sigma}.

The multiplier depends on z = t sqrt(lambda) only and comes from the
tabulated subordination profile; sigma = 1/2 reproduces e^{-t sqrt(lambda)}.
"""
import logging
import math
from typing import NamedTuple

import numpy as np

from operators.heat import heat_slices
from operators.operator import KernelSample, SchrodingerOperator, SliceFamily, reduce_kernel
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import HeatRoute, poisson_kernel, route_for_poisson
from schrodinger.quadrature import subordination_profile
from schrodinger.report import VerificationReport
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid, TGridRole

logger = logging.getLogger("schroedinger-lab")

# relative step of the centered differences in t
DIFFERENCE_STEP = 1e-4


def _check(sigma: float, t: float | None = None) -> None:
    if not 0 < sigma < 1:
        raise ParameterRangeError(f"sigma must lie in (0, 1), got {sigma}")
    if t is not None and not t > 0:
        raise ParameterRangeError(f"Poisson operator needs t > 0, got {t}")


def poisson_multiplier(sigma: float, t: float, lam: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    _check(sigma, t)
    return subordination_profile(sigma, rtol)(t * np.sqrt(np.asarray(lam, dtype=float)))


def poisson_sigma_apply(model: SpectralModel, sigma: float, t: float, f: GridFunction,
                        rtol: float = 1e-9) -> GridFunction:
    return model.apply(lambda lam: poisson_multiplier(sigma, t, lam, rtol), f)


def poisson_slices(model: SpectralModel, sigma: float, f: GridFunction, times: np.ndarray,
                   rtol: float = 1e-9) -> np.ndarray:
    _check(sigma)
    return model.slices(f, [lambda lam, t=float(t): poisson_multiplier(sigma, t, lam, rtol) for t in times])


def poisson_maximal(model: SpectralModel, sigma: float, f: GridFunction, tgrid: TGrid,
                    rtol: float = 1e-9) -> GridFunction:
    if tgrid.role != TGridRole.MAXIMAL_SUP:
        raise ParameterRangeError("Poisson maximal operator needs a maximal-sup t-grid")
    return GridFunction(model.grid, np.max(np.abs(poisson_slices(model, sigma, f, tgrid.times, rtol)), axis=0))


def maximal_domination_check(model: SpectralModel, sigma: float, f: GridFunction, tgrid: TGrid,
                             rtol: float = 1e-9) -> VerificationReport:
    """
    P^{sigma,*} f against the heat sup over the t-grid plus the t -> 0+ datum |f|;
    subordination averages W_r with a probability density, so the ratio is <= 1
    for f >= 0.
    """
    poisson = poisson_maximal(model, sigma, f, tgrid, rtol).values.reshape(-1)
    heat = np.max(np.abs(heat_slices(model, f, tgrid.times)), axis=0).reshape(-1)
    heat = np.maximum(heat, np.abs(f.values.reshape(-1)))
    keep = heat > 0
    ratios = poisson[keep] / heat[keep]
    flat = np.flatnonzero(keep)
    rows = [(int(i), float(p), float(w), float(r)) for i, p, w, r in zip(flat, poisson[keep], heat[keep], ratios)]
    return VerificationReport.from_ratios(
        "poisson_maximal_domination", ("node", "poisson_max", "heat_max", "ratio"), rows, ratios,
        excluded=dict(zero_heat=int(np.count_nonzero(~keep))), header=dict(sigma=sigma, times=tgrid.size))


class ExtensionResidual(NamedTuple):
    equation: float
    boundary: float
    c_sigma: float


def extension_constant(sigma: float) -> float:
    """c_sigma = 2^{1 - 2 sigma} Gamma(1 - sigma) / Gamma(sigma)"""
    return 2 ** (1 - 2 * sigma) * math.gamma(1 - sigma) / math.gamma(sigma)


def extension_residual(model: SpectralModel, sigma: float, t: float, f: GridFunction,
                       rtol: float = 1e-9) -> ExtensionResidual:
    """
    Relative residual of -L u + ((1 - 2 sigma)/t) u_t + u_tt = 0 for u = P^sigma_t f,
    and the relative defect of -t^{1-2 sigma} u_t -> c_sigma L^sigma f at a
    time small against 1/sqrt(lambda_max).
    """
    _check(sigma, t)
    coefficients = model.to_coefficients(f.values)
    lam = model.eigenvalue_field
    dt = DIFFERENCE_STEP * t
    before, at, after = (poisson_multiplier(sigma, s, lam, rtol) for s in (t - dt, t, t + dt))
    first = (after - before) / (2 * dt)
    second = (after - 2 * at + before) / dt ** 2
    residual = (-lam * at + (1 - 2 * sigma) / t * first + second) * coefficients
    scale = np.linalg.norm(lam * at * coefficients)
    equation = float(np.linalg.norm(residual) / scale) if scale > 0 else 0.0

    c_sigma = extension_constant(sigma)
    small = 1e-6 / math.sqrt(model.lambda_max)
    ds = DIFFERENCE_STEP * small
    slope = (poisson_multiplier(sigma, small + ds, lam, rtol)
             - poisson_multiplier(sigma, small - ds, lam, rtol)) / (2 * ds)
    limit = -small ** (1 - 2 * sigma) * slope * coefficients
    target = c_sigma * lam ** sigma * coefficients
    reference = np.linalg.norm(target)
    boundary = float(np.linalg.norm(limit - target) / reference) if reference > 0 else 0.0
    logger.debug("extension residual sigma=%s t=%s: equation %.3e boundary %.3e", sigma, t, equation, boundary)
    return ExtensionResidual(equation, boundary, c_sigma)


class PoissonSigmaAtT(SchrodingerOperator):
    kind = "poisson-sigma-at-t"

    @property
    def sigma(self) -> float:
        return float(self.descriptor.sigma)  # type: ignore[arg-type]

    @property
    def route(self) -> HeatRoute:
        if self._route is None:
            self._route = route_for_poisson(self.model, np.array([self.descriptor.t]), self.config.kernel_log_step,
                                            self.config.kernel_route_floor)
        return self._route

    def apply(self, f: GridFunction) -> GridFunction:
        return poisson_sigma_apply(self.model, self.sigma, float(self.descriptor.t),  # type: ignore[arg-type]
                                   self._grid_function(f), self.config.quadrature_tolerance)

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = poisson_kernel(self.route, self.sigma, np.array([self.descriptor.t]), x, y)[0]
        return KernelSample(values, np.abs(values))


class PoissonMaximal(SchrodingerOperator):
    kind = "poisson-maximal"
    vector_norm = "E"

    @property
    def sigma(self) -> float:
        return float(self.descriptor.sigma)  # type: ignore[arg-type]

    @property
    def tgrid(self) -> TGrid:
        if self._tgrid is None:
            self._tgrid = TGrid.maximal(self.model.grid, self.descriptor.tgrid_size or self.config.tgrid_size)
        return self._tgrid

    @property
    def route(self) -> HeatRoute:
        if self._route is None:
            self._route = route_for_poisson(self.model, self.tgrid.times, self.config.kernel_log_step,
                                            self.config.kernel_route_floor)
        return self._route

    def slices(self, f: GridFunction) -> SliceFamily:
        values = poisson_slices(self.model, self.sigma, self._grid_function(f), self.tgrid.times,
                                self.config.quadrature_tolerance)
        return SliceFamily(self.tgrid, values, "E")

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = poisson_kernel(self.route, self.sigma, self.tgrid.times, x, y)
        return KernelSample(values, reduce_kernel(values, "E", self.tgrid), self.tgrid.times)
