import hashlib
import json
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from base.config import Configuration
from schrodinger.errors import ConfigurationError, OnDiagonalError, ParameterRangeError
from schrodinger.grid import GridFunction
from schrodinger.kernels import HeatRoute
from schrodinger.potential import Potential
from schrodinger.report import VerificationReport
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid

if TYPE_CHECKING:
    from operators.laplace import LaplaceSymbol
    from operators.operatormanager import OperatorManager

logger = logging.getLogger("schroedinger-lab")

OPERATOR_KINDS = {
    "identity": "Identity",
    "heat-at-t": "HeatAtT",
    "heat-maximal": "HeatMaximal",
    "poisson-sigma-at-t": "PoissonSigmaAtT",
    "poisson-maximal": "PoissonMaximal",
    "g-heat": "GHeat",
    "g-poisson": "GPoisson",
    "laplace-multiplier": "LaplaceMultiplier",
    "riesz-component": "RieszComponent",
    "negative-power": "NegativePower",
}

TIMED_KINDS = ("heat-at-t", "poisson-sigma-at-t")
POISSON_KINDS = ("poisson-sigma-at-t", "poisson-maximal")
DESCRIPTOR_KEYS = ("kind", "t", "sigma", "gamma", "axis", "symbol", "tgrid_size", "p", "delta")


def json_encoder(obj: object) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"custom json_encoder: unable to encode {type(obj)}")


def calculate_checksum_for_dict(data: dict[str, Any]) -> str:
    json_str = json.dumps(
        data,
        sort_keys=True,
        default=json_encoder,
        indent=2
    )
    checksum = hashlib.md5(json_str.encode('utf-8')).hexdigest()
    return checksum


@dataclass(frozen=True)
class OperatorDescriptor:
    """
    Kind tag plus parameters of one operator. `axis` is 1-based; `gamma` is
    the order of negative powers and 0 for every other kind.
    """
    kind: str
    t: float | None = None
    sigma: float | None = None
    gamma: float = 0.0
    axis: int | None = None
    symbol: "LaplaceSymbol | None" = None
    tgrid_size: int | None = None
    p: float = 2.0
    delta: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise ConfigurationError(f"unknown operator kind '{self.kind}', "
                                     f"expected one of {', '.join(OPERATOR_KINDS)}")
        if self.kind in TIMED_KINDS and not (self.t is not None and self.t > 0):
            raise ConfigurationError(f"operator {self.kind} needs t > 0")
        if self.kind in POISSON_KINDS:
            sigma = 0.5 if self.sigma is None else self.sigma
            if not 0 < sigma < 1:
                raise ConfigurationError(f"sigma must lie in (0, 1), got {sigma}")
            object.__setattr__(self, "sigma", float(sigma))
        if self.kind == "negative-power":
            if not self.gamma > 0:
                raise ConfigurationError(f"negative-power needs gamma > 0, got {self.gamma}")
        elif self.gamma != 0:
            raise ConfigurationError(f"gamma must be 0 for operator {self.kind}")
        if self.kind == "riesz-component" and (self.axis is None or self.axis < 1):
            raise ConfigurationError("riesz-component needs an axis index i >= 1")
        if self.kind == "laplace-multiplier" and self.symbol is None:
            raise ConfigurationError("laplace-multiplier needs a symbol")
        if not self.p >= 1:
            raise ConfigurationError(f"Lebesgue exponent p must be >= 1, got {self.p}")
        if self.tgrid_size is not None and self.tgrid_size < 32:
            raise ConfigurationError(f"tgrid_size must be >= 32, got {self.tgrid_size}")

    @property
    def label(self) -> str:
        details = []
        for name in ("t", "sigma", "axis"):
            value = getattr(self, name)
            if value is not None and not (name == "sigma" and self.kind not in POISSON_KINDS):
                details.append(f"{name}={value:g}" if isinstance(value, float) else f"{name}={value}")
        if self.kind == "negative-power":
            details.append(f"gamma={self.gamma:g}")
        if self.symbol is not None:
            details.append(f"symbol={self.symbol.kind.value}")
        return self.kind + (f"[{','.join(details)}]" if details else "")

    def q_leb(self, dimension: int) -> float:
        """1/q = 1/p - gamma/n"""
        inverse = 1.0 / self.p - self.gamma / dimension
        return math.inf if inverse <= 0 else 1.0 / inverse

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = dict(kind=self.kind)
        for name in DESCRIPTOR_KEYS[1:]:
            value = getattr(self, name)
            if name == "gamma" and value == 0:
                continue
            if name == "p" and value == 2.0:
                continue
            if value is not None:
                data[name] = value.to_dict() if name == "symbol" else value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: str = "operators") -> "OperatorDescriptor":
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: operator descriptor must be an object")
        unknown = sorted(set(data) - set(DESCRIPTOR_KEYS))
        if unknown:
            raise ConfigurationError(f"{path}.{unknown[0]}: unknown key")
        if "kind" not in data:
            raise ConfigurationError(f"{path}.kind: missing")
        values = dict(data)
        if "symbol" in values and values["symbol"] is not None:
            from operators.laplace import LaplaceSymbol
            values["symbol"] = LaplaceSymbol.from_dict(values["symbol"], f"{path}.symbol")
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigurationError(f"{path}: {e}") from e

    @property
    def checksum(self) -> str:
        return calculate_checksum_for_dict(self.to_dict())


@dataclass(frozen=True, eq=False)
class SliceFamily:
    """
    Per-t slices of a vector-valued operator (T x grid) with their Banach
    norm: "E" is the max over the t-grid, "F" the L^2(dt/t) quadrature.
    """
    tgrid: TGrid
    slices: np.ndarray
    norm: str

    def reduce(self, slices: np.ndarray | None = None) -> np.ndarray:
        """the Banach norm along the first axis"""
        data = self.slices if slices is None else slices
        if self.norm == "E":
            return np.max(np.abs(data), axis=0)
        weights = self.tgrid.weights.reshape((-1,) + (1,) * (data.ndim - 1))
        return np.sqrt(np.sum(weights * data ** 2, axis=0))


def reduce_kernel(values: np.ndarray, norm: str | None, tgrid: TGrid | None) -> np.ndarray:
    if norm is None:
        return np.abs(values)
    if norm == "E":
        return np.max(np.abs(values), axis=0)
    assert tgrid is not None
    return np.sqrt(tgrid.weights @ values ** 2)


@dataclass(frozen=True, eq=False)
class KernelSample:
    """kernel values at probe pairs: (P,) for scalar kinds, (T, P) for vector kinds, with the reduced norm"""
    values: np.ndarray
    norm: np.ndarray
    times: np.ndarray | None = None


class SchrodingerOperator:
    """Holds one operator of the suite bound to a spectral model"""
    kind: str = "UNDEFINED"
    vector_norm: str | None = None
    singular: bool = False

    def __init__(self, descriptor: OperatorDescriptor, model: SpectralModel, config: Configuration | None = None,
                 tgrid: TGrid | None = None, manager: "OperatorManager | None" = None):
        if descriptor.kind != self.kind:
            raise ConfigurationError(f"descriptor of kind {descriptor.kind} given to {type(self).__name__}")
        self.descriptor = descriptor
        self.model = model
        self.config = config or Configuration()
        self.manager = manager
        self._tgrid = tgrid
        self._route: HeatRoute | None = None

    def __str__(self) -> str:
        return self.descriptor.label

    @property
    def gamma(self) -> float:
        return self.descriptor.gamma

    @property
    def tgrid(self) -> TGrid | None:
        return self._tgrid

    @property
    def route(self) -> HeatRoute:
        if self._route is None:
            self._route = HeatRoute(self.model, step=self.config.kernel_log_step, floor=self.config.kernel_route_floor)
        return self._route

    def _grid_function(self, f: GridFunction | np.ndarray) -> GridFunction:
        return f if isinstance(f, GridFunction) else GridFunction(self.model.grid, f)

    def apply(self, f: GridFunction) -> GridFunction:
        """Tf; vector-valued kinds return the pointwise Banach norm of the slices"""
        family = self.slices(f)
        if family is None:
            logger.fatal(f"apply: not implemented for {self.kind}")
            raise NotImplementedError(self.kind)
        return GridFunction(self.model.grid, family.reduce())

    def slices(self, f: GridFunction) -> SliceFamily | None:
        return None

    def kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        y = np.atleast_2d(np.asarray(y, dtype=np.int64))
        if self.singular and np.any(np.all(x == y, axis=-1)):
            raise OnDiagonalError(f"on-diagonal sample for singular kernel {self.descriptor.label}")
        return self._kernel(x, y)

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        logger.fatal(f"kernel: not implemented for {self.kind}")
        raise NotImplementedError(self.kind)

    def admissible_alpha(self, potential: Potential) -> float:
        """supremum of the alpha range of the boundedness theorem for this kind"""
        return min(1.0, potential.delta0)

    def classification(self) -> dict[str, Any]:
        n = self.model.dimension
        return dict(kind=self.kind, label=self.descriptor.label, gamma=self.gamma,
                    delta=self.descriptor.delta, p=self.descriptor.p, q=self.descriptor.q_leb(n),
                    vector_norm=self.vector_norm)


def admissible_alpha(operator: SchrodingerOperator, potential: Potential) -> float:
    return operator.admissible_alpha(potential)


def kernel_of(descriptor: OperatorDescriptor, model: SpectralModel, x: np.ndarray, y: np.ndarray,
              manager: "OperatorManager | None" = None) -> KernelSample:
    if manager is None:
        from operators.operatormanager import OperatorManager
        manager = OperatorManager(model)
    return manager.get(descriptor).kernel(x, y)


def lp_operator_norm(operator: SchrodingerOperator, family: Sequence[GridFunction]) -> VerificationReport:
    """empirical L^p -> L^q_Leb norm max ||Tf||_q / ||f||_p over a family"""
    p = operator.descriptor.p
    q = operator.descriptor.q_leb(operator.model.dimension)
    rows, ratios = [], []
    skipped = 0
    for index, f in enumerate(family):
        size = f.norm(p)
        if size == 0:
            skipped += 1
            continue
        image = operator.apply(f).norm(q)
        rows.append((index, size, image, image / size))
        ratios.append(image / size)
    return VerificationReport.from_ratios(
        f"lp_norm[{operator.descriptor.label}]", ("member", "norm_f", "norm_tf", "ratio"), rows,
        np.asarray(ratios), excluded=dict(zero_norm=skipped), header=dict(p=p, q=q))


def validate_alpha(operator: SchrodingerOperator, potential: Potential, alpha: float) -> None:
    ceiling = operator.admissible_alpha(potential)
    if alpha >= ceiling and not (operator.kind == "identity"):
        logger.warning("alpha = %s is outside the admissible range alpha < %.4g of %s",
                       alpha, ceiling, operator.descriptor.label)
    if alpha < 0:
        raise ParameterRangeError(f"alpha must be >= 0, got {alpha}")


__all__ = ["OPERATOR_KINDS", "OperatorDescriptor", "SliceFamily", "KernelSample", "SchrodingerOperator",
           "kernel_of", "admissible_alpha", "lp_operator_norm", "calculate_checksum_for_dict", "json_encoder",
           "reduce_kernel", "validate_alpha"]
