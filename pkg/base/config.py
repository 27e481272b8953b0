import logging
import os
import re
from configparser import ConfigParser
from dataclasses import dataclass, field
from enum import Enum
from itertools import chain
from typing import Any


def str2bool(v: str | bool) -> bool:
    if isinstance(v, bool):
        return v
    return v.lower() in ("yes", "true", "t", "1")


class DiscretizationMode(Enum):
    SEPARABLE = "separable"
    DENSE = "dense"


logger = logging.getLogger("schroedinger-lab")


@dataclass(order=True)
class Configuration:
    debug: bool = False
    disable_colors: bool = False

    sentry_enabled: bool = False
    sentry_dsn: str = ""

    workers: int = 1
    output_dir: str = "results"
    default_seed: int = 0
    default_mode: DiscretizationMode = DiscretizationMode.SEPARABLE

    dense_cap: int = 4096
    margin: float = 1.0

    rho_scan_size: int = 64
    rho_bisection_steps: int = 40
    rho_table_size: int = 1024

    tgrid_size: int = 64
    kernel_log_step: float = 0.05
    kernel_route_floor: float = 1e-3

    energy_cutoff: float = 0.0
    spectral_tolerance: float = 1e-8
    quadrature_tolerance: float = 1e-9
    g_residual_tolerance: float = 1e-6

    truncation_threshold: float = 0.05
    stability_threshold: float = 0.25
    criterion_stability_threshold: float = 0.2

    checks_exclude: list[str] = field(default_factory=lambda: [])

    def _convert_to_type(self, field_name: str, value: Any) -> Any:
        if not isinstance(value, str):
            return value

        current = getattr(self, field_name)
        if isinstance(current, Enum):
            try:
                return type(current)(value.strip().lower())
            except ValueError:
                choices = "|".join(member.value for member in type(current))
                raise ValueError(f"configuration field {field_name} expects one of {choices}, got '{value}'")
        if isinstance(current, bool):
            return str2bool(value)
        if isinstance(current, list):
            return [item for item in re.split(r"[\s,]+", value.strip()) if item]
        for kind in (str, int, float):
            if isinstance(current, kind):
                try:
                    return kind(value)
                except ValueError:
                    raise ValueError(f"configuration field {field_name} expects {kind.__name__}, got '{value}'")
        raise ValueError(f"type not implemented {current} {value}")

    def load_config_file(self, file_name: str) -> None:
        if not os.path.isfile(file_name):
            raise ValueError(f"file {file_name} does not exist")

        config_ini = ConfigParser(inline_comment_prefixes="#")

        # fake a "top" section because configparser wants mandatory sections
        with open(file_name) as lines_io:
            lines = chain(["[top]"], lines_io.readlines())
            config_ini.read_file(lines)

        for field_name in self.__dataclass_fields__:
            if field_name not in config_ini["top"]:
                continue

            value = config_ini["top"][field_name]
            setattr(self, field_name, self._convert_to_type(field_name, value))

    def load_from_environment_variables(self) -> None:
        for field_name in self.__dataclass_fields__:
            if field_name.upper() in os.environ and os.environ[field_name.upper()] != "":
                print("setting %s by environment variable %s" % (field_name, field_name.upper()))
                setattr(self, field_name, self._convert_to_type(field_name, os.environ[field_name.upper()]))

    def apply_overrides(self, overrides: dict[str, Any]) -> None:
        """tolerance overrides of an experiment config, keyed by field name"""
        for field_name, value in overrides.items():
            if field_name not in self.__dataclass_fields__:
                raise ValueError(f"unknown configuration field {field_name}")
            current = getattr(self, field_name)
            if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            elif isinstance(value, str):
                value = self._convert_to_type(field_name, value)
            elif type(value) is not type(current):
                raise ValueError(f"configuration field {field_name} expects {type(current).__name__}, "
                                 f"got {type(value).__name__}")
            setattr(self, field_name, value)

    def as_dict(self) -> dict[str, Any]:
        result = {}
        for field_name in self.__dataclass_fields__:
            value = getattr(self, field_name)
            result[field_name] = value.value if isinstance(value, Enum) else value
        return result

    def show_effective_config(self, show_as_ini_variables: bool = False) -> None:
        values = self.as_dict()
        name_len = max(len(name) for name in values)
        value_len = max(len(str(value)) for value in values.values())

        format_string = f"** %-{name_len + 2}s %-{value_len}s **"
        rule = "*" * (name_len + value_len + 9)
        print(rule)
        print(format_string % ("EFFECTIVE CONFIG", ""))
        print(format_string % ("", ""))
        for field_name, value in values.items():
            print(format_string % (field_name if show_as_ini_variables else field_name.upper(), value))
        print(format_string % ("", ""))
        print(rule)
