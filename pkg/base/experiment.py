import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Sequence

import numpy as np

from base.config import Configuration, DiscretizationMode
from operators.operator import OperatorDescriptor, calculate_checksum_for_dict
from schrodinger.bmo import EnsemblePolicy
from schrodinger.errors import ConfigurationError, LabError
from schrodinger.grid import BoxGrid
from schrodinger.potential import Potential, PotentialMode, build_potential, parse_preset
from schrodinger.probes import ProbePolicy
from schrodinger.verify import EstimateId

logger = logging.getLogger("schroedinger-lab")

SCHEMA_VERSION = 1
CHECKS = ("rho", "cover", "spectrum", "bmo", "t1", "verify", "norms")

TOP_KEYS = ("schema_version", "grid", "potential", "operators", "ensemble", "probes", "alphas", "gammas",
            "estimates", "checks", "output_dir", "seed", "tolerances")
GRID_KEYS = ("dimension", "points", "half_width", "margin")
POTENTIAL_KEYS = ("preset", "value", "scale", "coefficients", "q", "mode")

# independent child seeds of the experiment seed
SEED_STREAMS = ("ensemble", "probes", "battery", "pairs")


def _section(data: Any, path: str, keys: Sequence[str]) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(keys))
    if unknown:
        raise ConfigurationError(f"{path}.{unknown[0]}: unknown key")
    return data


def _number(value: Any, path: str, integer: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _numbers(value: Any, path: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigurationError(f"{path}: expected a list of numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _strings(value: Any, path: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigurationError(f"{path}: expected a list of strings")
    return list(value)


def derived_seeds(seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_STREAMS, children)}


@dataclass(frozen=True)
class GridSpec:
    dimension: int = 3
    points: int = 32
    half_width: float = 4.0
    margin: float = 1.0

    def build(self) -> BoxGrid:
        return BoxGrid(self.dimension, self.points, self.half_width)

    @classmethod
    def parse(cls, text: str, margin: float = 1.0) -> "GridSpec":
        """'3,32,4' -> n = 3, m = 32, Lbox = 4"""
        parts = [p for p in text.replace("x", ",").split(",") if p]
        if len(parts) != 3:
            raise ConfigurationError(f"--grid: expected 'n,m,L', got '{text}'")
        try:
            return cls(int(parts[0]), int(parts[1]), float(parts[2]), margin)
        except ValueError as e:
            raise ConfigurationError(f"--grid: {e}") from e

    @classmethod
    def from_dict(cls, data: Any, path: str = "grid") -> "GridSpec":
        data = _section(data, path, GRID_KEYS)
        values: dict[str, Any] = {}
        for name in GRID_KEYS:
            if name in data:
                values[name] = _number(data[name], f"{path}.{name}", integer=name in ("dimension", "points"))
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        return dict(dimension=self.dimension, points=self.points, half_width=self.half_width, margin=self.margin)


@dataclass(frozen=True)
class PotentialSpec:
    preset: str = "constant"
    params: dict[str, Any] = field(default_factory=lambda: dict(value=1.0))
    q: float | None = None
    mode: PotentialMode | None = None

    @classmethod
    def parse(cls, text: str) -> "PotentialSpec":
        try:
            name, params = parse_preset(text)
        except LabError as e:
            raise ConfigurationError(f"--preset: {e}") from e
        return cls(name, params)

    @classmethod
    def from_dict(cls, data: Any, path: str = "potential") -> "PotentialSpec":
        if isinstance(data, str):
            return cls.parse(data)
        data = _section(data, path, POTENTIAL_KEYS)
        if "preset" not in data:
            raise ConfigurationError(f"{path}.preset: missing")
        params: dict[str, Any] = {}
        for name in ("value", "scale"):
            if name in data:
                params[name] = _number(data[name], f"{path}.{name}")
        if "coefficients" in data:
            params["coefficients"] = data["coefficients"]
        q = data.get("q")
        if q is not None:
            q = math.inf if q == "inf" else _number(q, f"{path}.q")
        mode = None
        if "mode" in data:
            try:
                mode = PotentialMode(data["mode"])
            except ValueError:
                raise ConfigurationError(f"{path}.mode: expected 'separable' or 'dense', got {data['mode']!r}")
        return cls(str(data["preset"]), params, q, mode)

    def build(self, grid: BoxGrid, config: Configuration) -> Potential:
        mode = self.mode or PotentialMode(config.default_mode.value)
        return build_potential(dict(preset=self.preset, **self.params), grid, q=self.q, mode=mode,
                               dense_cap=config.dense_cap)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = dict(preset=self.preset, **self.params)
        if self.q is not None:
            data["q"] = "inf" if math.isinf(self.q) else self.q
        if self.mode is not None:
            data["mode"] = self.mode.value
        return data


def _policy(policy_class: type, data: Any, path: str) -> Any:
    names = [f.name for f in fields(policy_class) if f.name != "seed"]
    data = _section(data, path, names)
    values: dict[str, Any] = {}
    for name, value in data.items():
        if isinstance(value, list):
            values[name] = _numbers(value, f"{path}.{name}")
        else:
            values[name] = value
    try:
        return policy_class(**values)
    except (LabError, TypeError) as e:
        raise ConfigurationError(f"{path}: {e}") from e


def _estimate(value: str, path: str) -> EstimateId:
    try:
        return EstimateId(value)
    except ValueError:
        pass
    try:
        return EstimateId[value]
    except KeyError:
        raise ConfigurationError(f"{path}: unknown estimate '{value}'")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: what to build, which checks to run and where the artifacts go"""
    grid: GridSpec = field(default_factory=GridSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    operators: tuple[OperatorDescriptor, ...] = ()
    ensemble: EnsemblePolicy = field(default_factory=EnsemblePolicy)
    probes: ProbePolicy = field(default_factory=ProbePolicy)
    alphas: tuple[float, ...] = (0.25, 0.5)
    gammas: tuple[float, ...] = (0.5,)
    estimates: tuple[EstimateId, ...] = tuple(EstimateId)
    checks: tuple[str, ...] = ("rho", "spectrum")
    output_dir: str = "results"
    seed: int = 0
    tolerances: dict[str, Any] = field(default_factory=dict)
    source: str | None = None

    @classmethod
    def load(cls, file_name: str) -> "ExperimentConfig":
        if not os.path.isfile(file_name):
            raise ConfigurationError(f"experiment config {file_name} does not exist")
        with open(file_name) as config_io:
            text = config_io.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{file_name}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e
        return cls.from_dict(data, source=file_name)

    @classmethod
    def from_dict(cls, data: Any, source: str | None = None) -> "ExperimentConfig":
        data = _section(data, "config", TOP_KEYS)
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"config.schema_version: expected {SCHEMA_VERSION}, got {version!r}")

        values: dict[str, Any] = dict(source=source)
        if "grid" in data:
            values["grid"] = GridSpec.from_dict(data["grid"])
        if "potential" in data:
            values["potential"] = PotentialSpec.from_dict(data["potential"])
        if "operators" in data:
            if not isinstance(data["operators"], list):
                raise ConfigurationError("operators: expected a list of operator descriptors")
            values["operators"] = tuple(OperatorDescriptor.from_dict(d, f"operators[{i}]")
                                        for i, d in enumerate(data["operators"]))
        if "ensemble" in data:
            values["ensemble"] = _policy(EnsemblePolicy, data["ensemble"], "ensemble")
        if "probes" in data:
            values["probes"] = _policy(ProbePolicy, data["probes"], "probes")
        for name in ("alphas", "gammas"):
            if name in data:
                values[name] = _numbers(data[name], name)
        if "estimates" in data:
            requested = data["estimates"]
            if requested != "all":
                values["estimates"] = tuple(_estimate(v, f"estimates[{i}]")
                                            for i, v in enumerate(_strings(requested, "estimates")))
        if "checks" in data:
            checks = _strings(data["checks"], "checks")
            for i, check in enumerate(checks):
                if check not in CHECKS:
                    raise ConfigurationError(f"checks[{i}]: unknown check '{check}', "
                                             f"expected one of {', '.join(CHECKS)}")
            values["checks"] = tuple(checks)
        if "output_dir" in data:
            if not isinstance(data["output_dir"], str):
                raise ConfigurationError("output_dir: expected a string")
            values["output_dir"] = data["output_dir"]
        if "seed" in data:
            values["seed"] = _number(data["seed"], "seed", integer=True)
        if "tolerances" in data:
            tolerances = data["tolerances"]
            if not isinstance(tolerances, dict):
                raise ConfigurationError("tolerances: expected an object")
            known = Configuration.__dataclass_fields__
            for name in tolerances:
                if name not in known:
                    raise ConfigurationError(f"tolerances.{name}: unknown key")
            values["tolerances"] = dict(tolerances)
        for i, alpha in enumerate(values.get("alphas", ())):
            if not 0 <= alpha <= 1:
                raise ConfigurationError(f"alphas[{i}]: alpha must lie in [0, 1], got {alpha}")
        return cls(**values).seeded()

    def seeded(self) -> "ExperimentConfig":
        """ensemble and probe seeds derived from the experiment seed"""
        seeds = derived_seeds(self.seed)
        return replace(self, ensemble=replace(self.ensemble, seed=seeds["ensemble"]),
                       probes=replace(self.probes, seed=seeds["probes"]))

    def with_overrides(self, output_dir: str | None = None, seed: int | None = None, grid: str | None = None,
                       preset: str | None = None, checks: Sequence[str] | None = None) -> "ExperimentConfig":
        """command line switches on top of the loaded file"""
        config = self
        if output_dir is not None:
            config = replace(config, output_dir=output_dir)
        if grid is not None:
            config = replace(config, grid=GridSpec.parse(grid, config.grid.margin))
        if preset is not None:
            config = replace(config, potential=replace(PotentialSpec.parse(preset), q=config.potential.q,
                                                       mode=config.potential.mode))
        if checks is not None:
            config = replace(config, checks=tuple(checks))
        if seed is not None:
            config = replace(config, seed=seed)
        return config.seeded()

    def seed_for(self, stream: str) -> int:
        return derived_seeds(self.seed)[stream]

    def runtime(self, base: Configuration | None = None) -> Configuration:
        """the runtime configuration with the tolerance overrides applied"""
        runtime = replace(base) if base is not None else Configuration()
        try:
            runtime.apply_overrides(self.tolerances)
        except ValueError as e:
            raise ConfigurationError(f"tolerances: {e}") from e
        if self.potential.mode is not None:
            runtime.default_mode = DiscretizationMode(self.potential.mode.value)
        runtime.margin = self.grid.margin
        return runtime

    def to_dict(self) -> dict[str, Any]:
        ensemble = self.ensemble.to_dict()
        probes = self.probes.to_dict()
        ensemble.pop("seed")
        probes.pop("seed")
        return dict(
            schema_version=SCHEMA_VERSION,
            grid=self.grid.to_dict(),
            potential=self.potential.to_dict(),
            operators=[d.to_dict() for d in self.operators],
            ensemble=ensemble,
            probes=probes,
            alphas=list(self.alphas),
            gammas=list(self.gammas),
            estimates=[e.value for e in self.estimates],
            checks=list(self.checks),
            output_dir=self.output_dir,
            seed=self.seed,
            tolerances=dict(sorted(self.tolerances.items())),
        )

    @property
    def config_hash(self) -> str:
        """md5 of the canonical dump; the output directory does not enter it"""
        data = self.to_dict()
        data.pop("output_dir")
        return calculate_checksum_for_dict(data)
