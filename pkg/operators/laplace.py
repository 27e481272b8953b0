import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from operators.operator import KernelSample, SchrodingerOperator
from schrodinger.errors import ConfigurationError, ConsistencyError, ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import laplace_kernel
from schrodinger.spectral import SpectralModel

logger = logging.getLogger("schroedinger-lab")

BOUND_SLACK = 1e-8


class SymbolKind(Enum):
    CONSTANT = "constant"
    EXPONENTIAL_DECAY = "exponential-decay"
    WINDOW = "window"
    SAMPLED = "sampled"


SYMBOL_KEYS = ("kind", "value", "rate", "length", "times", "samples", "bound")


@dataclass(frozen=True, eq=False)
class LaplaceSymbol:
    """
    The bounded function a(t) of m(lambda) = lambda int_0^inf a(t) e^{-t lambda} dt:
    value (constant), value e^{-rate t} (exponential-decay), value on [0, length]
    (window), or the piecewise linear interpolant of (times, samples) held
    constant beyond the first and last time (sampled).
    """
    kind: SymbolKind
    value: float = 1.0
    rate: float = 1.0
    length: float = 1.0
    times: tuple[float, ...] = ()
    samples: tuple[float, ...] = ()
    bound: float | None = None

    def __post_init__(self) -> None:
        if self.kind == SymbolKind.EXPONENTIAL_DECAY and not self.rate > 0:
            raise ParameterRangeError(f"exponential-decay symbol needs rate > 0, got {self.rate}")
        if self.kind == SymbolKind.WINDOW and not self.length > 0:
            raise ParameterRangeError(f"window symbol needs length > 0, got {self.length}")
        if self.kind == SymbolKind.SAMPLED:
            times = np.asarray(self.times, dtype=float)
            if len(times) < 2 or len(times) != len(self.samples):
                raise ParameterRangeError("sampled symbol needs at least two (time, sample) pairs of equal length")
            if times[0] < 0 or np.any(np.diff(times) <= 0):
                raise ParameterRangeError("sampled symbol times must be nonnegative and strictly ascending")
            if not np.all(np.isfinite(self.samples)):
                raise ParameterRangeError("sampled symbol values must be finite")
        natural = self.natural_bound
        if self.bound is None:
            object.__setattr__(self, "bound", natural)
        elif natural > self.bound:
            raise ParameterRangeError(f"symbol exceeds its declared bound: sup |a| = {natural} > {self.bound}")

    @property
    def natural_bound(self) -> float:
        if self.kind == SymbolKind.SAMPLED:
            return float(np.max(np.abs(self.samples)))
        return abs(self.value)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == SymbolKind.CONSTANT:
            return np.full(t.shape, self.value)
        if self.kind == SymbolKind.EXPONENTIAL_DECAY:
            return self.value * np.exp(-self.rate * t)
        if self.kind == SymbolKind.WINDOW:
            return np.where(t <= self.length, self.value, 0.0)
        return np.interp(t, self.times, self.samples)

    def multiplier(self, lam: np.ndarray) -> np.ndarray:
        """m(lambda) in closed form; sampled symbols are integrated exactly segment by segment"""
        lam = np.asarray(lam, dtype=float)
        if self.kind == SymbolKind.CONSTANT:
            return np.full(lam.shape, self.value)
        if self.kind == SymbolKind.EXPONENTIAL_DECAY:
            return self.value * lam / (self.rate + lam)
        if self.kind == SymbolKind.WINDOW:
            return self.value * -np.expm1(-self.length * lam)
        return self._sampled_multiplier(lam)

    def _sampled_multiplier(self, lam: np.ndarray) -> np.ndarray:
        times = np.asarray(self.times, dtype=float)
        samples = np.asarray(self.samples, dtype=float)
        # head [0, t_0] and tail [t_N, inf) at constant value
        total = samples[0] * -np.expm1(-times[0] * lam) + samples[-1] * np.exp(-times[-1] * lam)
        for left, right, a_left, a_right in zip(times[:-1], times[1:], samples[:-1], samples[1:]):
            slope = (a_right - a_left) / (right - left)
            e_left, e_right = np.exp(-left * lam), np.exp(-right * lam)
            total = total + a_left * e_left - a_right * e_right + slope * (e_left - e_right) / lam
        return total

    def checked_multiplier(self, lam: np.ndarray) -> np.ndarray:
        values = self.multiplier(lam)
        limit = self.bound * (1 + BOUND_SLACK)  # type: ignore[operator]
        if np.any(np.abs(values) > limit):
            worst = float(np.max(np.abs(values)))
            raise ConsistencyError(f"multiplier |m| = {worst:.12g} exceeds the symbol bound {self.bound:.12g}")
        return values

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = dict(kind=self.kind.value, value=self.value)
        if self.kind == SymbolKind.EXPONENTIAL_DECAY:
            data["rate"] = self.rate
        elif self.kind == SymbolKind.WINDOW:
            data["length"] = self.length
        elif self.kind == SymbolKind.SAMPLED:
            data = dict(kind=self.kind.value, times=list(self.times), samples=list(self.samples))
        data["bound"] = self.bound
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: str = "symbol") -> "LaplaceSymbol":
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: symbol must be an object")
        unknown = sorted(set(data) - set(SYMBOL_KEYS))
        if unknown:
            raise ConfigurationError(f"{path}.{unknown[0]}: unknown key")
        values = dict(data)
        try:
            values["kind"] = SymbolKind(values.get("kind", "constant"))
        except ValueError:
            raise ConfigurationError(f"{path}.kind: unknown symbol kind '{data.get('kind')}'")
        for name in ("times", "samples"):
            if name in values:
                values[name] = tuple(float(v) for v in values[name])
        return cls(**values)


def laplace_multiplier(model: SpectralModel, symbol: LaplaceSymbol, f: GridFunction) -> GridFunction:
    if symbol.kind == SymbolKind.CONSTANT:
        return f * symbol.value
    return model.apply(symbol.checked_multiplier, f)


class LaplaceMultiplier(SchrodingerOperator):
    kind = "laplace-multiplier"
    singular = True

    @property
    def symbol(self) -> LaplaceSymbol:
        assert self.descriptor.symbol is not None
        return self.descriptor.symbol

    def apply(self, f: GridFunction) -> GridFunction:
        return laplace_multiplier(self.model, self.symbol, self._grid_function(f))

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        values = laplace_kernel(self.route, self.symbol, x, y)
        return KernelSample(values, np.abs(values))
