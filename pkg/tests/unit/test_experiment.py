import json
import math

import pytest

from base.config import Configuration, DiscretizationMode
from base.experiment import ExperimentConfig, GridSpec, PotentialSpec, derived_seeds
from schrodinger.errors import ConfigurationError
from schrodinger.potential import PotentialMode
from schrodinger.verify import EstimateId


def _write(tmp_path, data, name="experiment.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data, indent=2))
    return str(path)


def _load(tmp_path, data):
    return ExperimentConfig.load(_write(tmp_path, data))


def test_load_full_config(tmp_path):
    config = _load(tmp_path, {
        "schema_version": 1,
        "grid": {"dimension": 2, "points": 33, "half_width": 5, "margin": 1.5},
        "potential": {"preset": "harmonic", "scale": 0.5, "q": "inf", "mode": "dense"},
        "operators": [{"kind": "heat-at-t", "t": 0.5}, {"kind": "negative-power", "gamma": 0.5}],
        "ensemble": {"centers_per_axis": 3, "radii_per_decade": 6},
        "probes": {"count": 64, "separation_decades": [-1, 0]},
        "alphas": [0, 0.5],
        "estimates": ["heat-gaussian", "NEGPOW_SIZE"],
        "checks": ["rho", "verify"],
        "seed": 7,
        "tolerances": {"truncation_threshold": 0.1},
    })
    assert (config.grid == GridSpec(2, 33, 5.0, 1.5))
    assert (config.potential.params == {"scale": 0.5})
    assert (math.isinf(config.potential.q))
    assert (config.potential.mode == PotentialMode.DENSE)
    assert ([d.label for d in config.operators] == ["heat-at-t[t=0.5]", "negative-power[gamma=0.5]"])
    assert (config.ensemble.centers_per_axis == 3)
    assert (config.probes.separation_decades == (-1.0, 0.0))
    assert (config.estimates == (EstimateId.HEAT_GAUSSIAN, EstimateId.NEGPOW_SIZE))
    assert (config.checks == ("rho", "verify"))
    assert (config.source.endswith("experiment.json"))


def test_defaults():
    config = ExperimentConfig.from_dict({"schema_version": 1})
    assert (config.grid == GridSpec())
    assert (config.estimates == tuple(EstimateId))
    assert (config.checks == ("rho", "spectrum"))
    assert (config.operators == ())


def test_invalid_json_reports_line_and_column(tmp_path):
    path = _write(tmp_path, '{\n  "schema_version": 1,\n  "seed": ,\n}\n', name="bad.json")
    with pytest.raises(ConfigurationError, match="bad.json:3:11: invalid JSON"):
        ExperimentConfig.load(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="does not exist"):
        ExperimentConfig.load(str(tmp_path / "nope.json"))


@pytest.mark.parametrize("data, message", [
    ({}, "config.schema_version: expected 1, got None"),
    ({"schema_version": 2}, "config.schema_version: expected 1, got 2"),
    ({"schema_version": 1, "gird": {}}, "config.gird: unknown key"),
    ({"schema_version": 1, "grid": {"points": 32, "spacing": 1}}, "grid.spacing: unknown key"),
    ({"schema_version": 1, "grid": {"points": 32.5}}, "grid.points: expected an integer"),
    ({"schema_version": 1, "grid": {"half_width": "4"}}, "grid.half_width: expected a number"),
    ({"schema_version": 1, "potential": {"value": 1}}, "potential.preset: missing"),
    ({"schema_version": 1, "potential": {"preset": "constant", "mode": "sparse"}}, "potential.mode: expected"),
    ({"schema_version": 1, "operators": [{"kind": "identity"}, {"t": 1}]}, r"operators\[1\].kind: missing"),
    ({"schema_version": 1, "operators": [{"kind": "identity", "nope": 1}]}, r"operators\[0\].nope: unknown key"),
    ({"schema_version": 1, "operators": {"kind": "identity"}}, "expected a list of operator descriptors"),
    ({"schema_version": 1, "ensemble": {"radii_per_decade": 2}}, "ensemble: ensemble needs at least 4"),
    ({"schema_version": 1, "ensemble": {"seed": 3}}, "ensemble.seed: unknown key"),
    ({"schema_version": 1, "probes": {"count": 0}}, "probes: probe count"),
    ({"schema_version": 1, "alphas": [0.5, 1.5]}, r"alphas\[1\]: alpha must lie in \[0, 1\]"),
    ({"schema_version": 1, "estimates": ["heat-gaussian", "heat-bessel"]}, r"estimates\[1\]: unknown estimate"),
    ({"schema_version": 1, "checks": ["rho", "everything"]}, r"checks\[1\]: unknown check 'everything'"),
    ({"schema_version": 1, "seed": 1.5}, "seed: expected an integer"),
    ({"schema_version": 1, "output_dir": 3}, "output_dir: expected a string"),
    ({"schema_version": 1, "tolerances": {"nope": 1}}, "tolerances.nope: unknown key"),
])
def test_validation_errors(data, message):
    with pytest.raises(ConfigurationError, match=message):
        ExperimentConfig.from_dict(data)


def test_all_estimates():
    config = ExperimentConfig.from_dict({"schema_version": 1, "estimates": "all"})
    assert (config.estimates == tuple(EstimateId))


def test_potential_as_string():
    config = ExperimentConfig.from_dict({"schema_version": 1, "potential": "harmonic:0.5"})
    assert (config.potential == PotentialSpec("harmonic", {"scale": 0.5}))


def test_grid_parse():
    assert (GridSpec.parse("3,32,4") == GridSpec(3, 32, 4.0))
    assert (GridSpec.parse("2x16x3", margin=0.5) == GridSpec(2, 16, 3.0, 0.5))
    with pytest.raises(ConfigurationError, match="--grid: expected 'n,m,L'"):
        GridSpec.parse("3,32")
    with pytest.raises(ConfigurationError, match="--grid"):
        GridSpec.parse("3,many,4")


def test_preset_parse_error():
    with pytest.raises(ConfigurationError, match="--preset: .*takes no argument"):
        PotentialSpec.parse("zero:1")


def test_overrides():
    config = ExperimentConfig.from_dict({"schema_version": 1, "grid": {"margin": 1.5},
                                         "potential": {"preset": "constant", "value": 1, "q": 4}})
    changed = config.with_overrides(output_dir="elsewhere", seed=3, grid="2,16,3", preset="harmonic",
                                    checks=["bmo"])
    assert (changed.output_dir == "elsewhere")
    assert (changed.grid == GridSpec(2, 16, 3.0, 1.5))
    assert (changed.potential.preset == "harmonic")
    assert (changed.potential.q == 4.0)
    assert (changed.checks == ("bmo",))
    assert (changed.probes.seed == derived_seeds(3)["probes"])
    assert (config.with_overrides() == config)


def test_derived_seeds():
    seeds = derived_seeds(0)
    assert (set(seeds) == {"ensemble", "probes", "battery", "pairs"})
    assert (len(set(seeds.values())) == 4)
    assert (derived_seeds(0) == seeds)
    assert (derived_seeds(1) != seeds)
    config = ExperimentConfig.from_dict({"schema_version": 1, "seed": 5})
    assert (config.ensemble.seed == config.seed_for("ensemble"))
    assert (config.probes.seed == config.seed_for("probes"))


def test_config_hash():
    config = ExperimentConfig.from_dict({"schema_version": 1, "seed": 5})
    assert (len(config.config_hash) == 32)
    assert (config.with_overrides(output_dir="other").config_hash == config.config_hash)
    assert (config.with_overrides(seed=6).config_hash != config.config_hash)
    assert (ExperimentConfig.from_dict(config.to_dict()).config_hash == config.config_hash)


def test_runtime_configuration():
    config = ExperimentConfig.from_dict({"schema_version": 1, "grid": {"margin": 0.5},
                                         "potential": {"preset": "constant", "mode": "dense"},
                                         "tolerances": {"truncation_threshold": 0.1, "tgrid_size": 48}})
    runtime = config.runtime()
    assert (runtime.truncation_threshold == 0.1)
    assert (runtime.tgrid_size == 48)
    assert (runtime.margin == 0.5)
    assert (runtime.default_mode == DiscretizationMode.DENSE)
    base = Configuration(workers=4)
    assert (config.runtime(base).workers == 4)
    assert (base.truncation_threshold == Configuration().truncation_threshold)
    bad = ExperimentConfig.from_dict({"schema_version": 1, "tolerances": {"tgrid_size": 1.5}})
    with pytest.raises(ConfigurationError, match="tolerances: configuration field tgrid_size expects int"):
        bad.runtime()


def test_potential_build_follows_the_default_mode():
    spec = PotentialSpec("constant", {"value": 1.0})
    config = Configuration(default_mode=DiscretizationMode.DENSE)
    potential = spec.build(GridSpec(2, 9, 2.0).build(), config)
    assert (not potential.is_separable)
