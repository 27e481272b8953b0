"""
Quadrature rules shared by the critical radius scan, the subordinated
semigroups and the cross-validation routes.
"""
import logging
import math
from typing import Callable

import cachetools
import cachetools.func
import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_function
from scipy.special import kv

from schrodinger.errors import ParameterRangeError, QuadratureError

logger = logging.getLogger("schroedinger-lab")

SLICE_NODES = 48
PROFILE_Z_MIN = 1e-8
PROFILE_Z_MAX = 60.0
PROFILE_LOG_STEP = 0.005


@cachetools.func.lru_cache(maxsize=16)
def slice_rule(dimension: int, nodes: int = SLICE_NODES) -> tuple[np.ndarray, np.ndarray]:
    """
    Nodes sin(theta) and weights for
    (1/r^n) * int_{B(x,r)} v(y_1) dy = omega_{n-1} * int v(x + r sin theta) cos^n theta dtheta
    with theta in [-pi/2, pi/2] and omega_{n-1} the volume of the unit (n-1)-ball.
    """
    theta, weights = np.polynomial.legendre.leggauss(nodes)
    theta = theta * math.pi / 2
    section = math.pi ** ((dimension - 1) / 2) / math.gamma((dimension - 1) / 2 + 1)
    weights = weights * math.pi / 2 * section * np.cos(theta) ** dimension
    sines = np.sin(theta)
    sines.setflags(write=False)
    weights.setflags(write=False)
    return sines, weights


def slice_average(spline: CubicSpline, dimension: int, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """r^-n times the ball integral of a one-axis factor, broadcast over centers and radii"""
    sines, weights = slice_rule(dimension)
    centers, radii = np.broadcast_arrays(np.asarray(centers, dtype=float), np.asarray(radii, dtype=float))
    samples = spline(centers[..., None] + radii[..., None] * sines)
    return samples @ weights


def log_trapezoid(integrand: Callable[[np.ndarray], np.ndarray], lower: float, upper: float,
                  rtol: float, initial: int = 256, max_levels: int = 10, block: int = 512) -> tuple[np.ndarray, float]:
    """
    Step-halving trapezoid rule on [lower, upper] for integrands vectorized
    over their first axis (one row per node). Returns the estimate and the
    relative change of the last halving.
    """
    step = (upper - lower) / initial

    def node_sum(nodes: np.ndarray) -> np.ndarray:
        total = None
        for start in range(0, len(nodes), block):
            part = np.sum(integrand(nodes[start:start + block]), axis=0)
            total = part if total is None else total + part
        return total

    ends = integrand(np.array([lower, upper]))
    inner = node_sum(lower + step * np.arange(1, initial))
    estimate = step * (inner + 0.5 * (ends[0] + ends[1]))
    achieved = math.inf
    for _ in range(max_levels):
        midpoints = lower + step * (np.arange(initial) + 0.5)
        refined = 0.5 * estimate + 0.5 * step * node_sum(midpoints)
        scale = max(float(np.max(np.abs(refined))), np.finfo(float).tiny)
        achieved = float(np.max(np.abs(refined - estimate))) / scale
        estimate = refined
        step *= 0.5
        initial *= 2
        if achieved <= rtol:
            return estimate, achieved
    raise QuadratureError(f"quadrature tolerance {rtol:.1e} unmet: achieved {achieved:.3e}")


def trapezoid_weights(log_nodes: np.ndarray) -> np.ndarray:
    """trapezoid weights on an arbitrary ascending node set"""
    gaps = np.diff(log_nodes)
    weights = np.zeros(len(log_nodes))
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    return weights


def bessel_poisson_multiplier(sigma: float, z: np.ndarray) -> np.ndarray:
    """closed form (2/Gamma(sigma)) (z/2)^sigma K_sigma(z) of the generalized Poisson multiplier"""
    z = np.asarray(z, dtype=float)
    safe = np.where(z > 0, z, 1.0)
    value = 2.0 / gamma_function(sigma) * (safe / 2) ** sigma * kv(sigma, safe)
    return np.where(z > 0, value, 1.0)


def subordination_quadrature(sigma: float, z: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """
    (1/Gamma(sigma)) int_0^inf e^{-r} e^{-z^2/(4r)} r^{sigma-1} dr, by the
    trapezoid rule in s = log r.
    """
    if not 0 < sigma < 1:
        raise ParameterRangeError(f"sigma must lie in (0, 1), got {sigma}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    quarter = 0.25 * z ** 2
    lower = math.log(1e-14 * sigma) / sigma
    upper = math.log(60.0)
    norm = gamma_function(sigma)

    def integrand(s: np.ndarray) -> np.ndarray:
        r = np.exp(s)[:, None]
        return np.exp(sigma * s[:, None] - r - quarter[None, :] / r)

    value, _ = log_trapezoid(integrand, lower, upper, rtol)
    return value / norm


class SubordinationProfile:
    """
    The multiplier F_sigma(z) of P^sigma_t at z = t*sqrt(lambda), tabulated once
    by quadrature and interpolated in log z (log F is interpolated to keep the
    relative accuracy in the exponential tail).
    """

    def __init__(self, sigma: float, rtol: float = 1e-9):
        self.sigma = sigma
        self.rtol = rtol
        log_z = np.arange(math.log(PROFILE_Z_MIN), math.log(PROFILE_Z_MAX) + PROFILE_LOG_STEP, PROFILE_LOG_STEP)
        values = subordination_quadrature(sigma, np.exp(log_z), rtol)
        self._spline = CubicSpline(log_z, np.log(values))
        self._small = math.gamma(1 - sigma) / math.gamma(1 + sigma)
        logger.debug("tabulated subordination profile for sigma=%s on %s nodes", sigma, len(log_z))

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        clipped = np.clip(z, PROFILE_Z_MIN, PROFILE_Z_MAX)
        inside = np.exp(self._spline(np.log(clipped)))
        small = 1.0 - self._small * (np.maximum(z, 0.0) / 2) ** (2 * self.sigma)
        return np.where(z < PROFILE_Z_MIN, small, np.where(z > PROFILE_Z_MAX, 0.0, inside))


_profiles: cachetools.LRUCache = cachetools.LRUCache(maxsize=8)


def subordination_profile(sigma: float, rtol: float = 1e-9) -> SubordinationProfile:
    key = (float(sigma), float(rtol))
    profile = _profiles.get(key)
    if profile is None:
        profile = SubordinationProfile(sigma, rtol)
        _profiles[key] = profile
    return profile


def derivative_formula_multiplier(t: float, lam: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """
    t d/dt e^{-t sqrt(lambda)} through the subordination derivative formula
    (t/sqrt(pi)) int_0^inf e^{-t^2/(4v)} v d/dv(e^{-v lambda}) v^{-3/2} dv.
    """
    shape = np.shape(lam)
    lam = np.atleast_1d(np.asarray(lam, dtype=float)).reshape(-1)
    lower = math.log(t ** 2 / (4 * 80.0))
    upper = math.log(80.0 / float(np.min(lam)))

    def integrand(s: np.ndarray) -> np.ndarray:
        v = np.exp(s)[:, None]
        return -np.exp(-t ** 2 / (4 * v) - v * lam[None, :] + 0.5 * s[:, None]) * lam[None, :]

    value, _ = log_trapezoid(integrand, lower, upper, rtol)
    return (t / math.sqrt(math.pi) * value).reshape(shape)


def negative_power_multiplier(gamma: float, lam: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """lambda^{-gamma/2} through (1/Gamma(gamma/2)) int_0^inf e^{-t lambda} t^{gamma/2 - 1} dt"""
    if not gamma > 0:
        raise ParameterRangeError(f"gamma must be positive, got {gamma}")
    shape = np.shape(lam)
    lam = np.atleast_1d(np.asarray(lam, dtype=float)).reshape(-1)
    half = gamma / 2
    lower = math.log(1e-14 ** (1 / half) / float(np.max(lam)))
    upper = math.log(80.0 / float(np.min(lam)))

    def integrand(s: np.ndarray) -> np.ndarray:
        t = np.exp(s)[:, None]
        return np.exp(half * s[:, None] - t * lam[None, :])

    value, _ = log_trapezoid(integrand, lower, upper, rtol)
    return (value / gamma_function(half)).reshape(shape)
