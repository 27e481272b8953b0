import csv
import json
import math

import numpy as np

from base.reports import MANIFEST_FILE, SCHEMA_FILE, ArtifactWriter, _cell, artifact_name
from schrodinger.report import VerificationReport


def test_cell_formatting():
    assert (_cell(None) == "")
    assert (_cell(True) == "true")
    assert (_cell(np.bool_(False)) == "false")
    assert (_cell(0.1) == "0.1")
    assert (float(_cell(1 / 3)) == 1 / 3)
    assert (_cell(np.float64(2.5)) == "2.5")
    assert (_cell(math.inf) == "inf")
    assert (_cell(np.int64(7)) == "7")
    assert (_cell("sub-critical") == "sub-critical")


def test_artifact_name():
    assert (artifact_name("NEGPOW_SIZE[N=1,gamma=0.5]") == "NEGPOW_SIZE_N=1,gamma=0.5")
    assert (artifact_name("criterion_alpha[heat-at-t[t=1],alpha=0.25]") == "criterion_alpha_heat-at-t_t=1_,alpha=0.25")
    assert (artifact_name("a b/c") == "a_b_c")


def test_write_report(tmp_path):
    writer = ArtifactWriter(str(tmp_path / "out"), "abc")
    report = VerificationReport.from_ratios("HEAT_GAUSSIAN[N=2]", ("probe", "x1", "t", "ratio"),
                                            [(0, 0.5, None, 0.25), (1, -0.5, 0.1, 0.75)], np.array([0.25, 0.75]),
                                            excluded=dict(outside_margin=3))
    writer.write_report("verify", report, 0.25)

    with open(tmp_path / "out" / "verify__HEAT_GAUSSIAN_N=2.csv") as csv_io:
        rows = list(csv.reader(csv_io))
    assert (rows[0] == ["probe", "x1", "t", "ratio"])
    assert (rows[1] == ["0", "0.5", "", "0.25"])
    with open(tmp_path / "out" / "verify__HEAT_GAUSSIAN_N=2.json") as json_io:
        document = json.load(json_io)
    assert (document["config_hash"] == "abc")
    assert (document["check"] == "verify")
    assert (document["report"]["constant"] == 0.75)
    assert (document["report"]["attained_at"] == {"probe": 1, "x1": -0.5, "t": 0.1, "ratio": 0.75})
    assert (document["report"]["excluded"] == {"outside_margin": 3})


def test_schema_and_manifest(tmp_path):
    writer = ArtifactWriter(str(tmp_path), "abc")
    writer.write_rows("rho__field.csv", ("x1", "x2", "rho", "capped"), [(0.0, 0.0, 1.0, False)],
                      description="critical radius on the grid")
    writer.write_schema()
    writer.write_manifest(dict(seed=0), dict(total=1.23456), dict(rho=dict(reports={})), 0)

    with open(tmp_path / SCHEMA_FILE) as json_io:
        schema = json.load(json_io)
    columns = schema["files"]["rho__field.csv"]["columns"]
    assert (columns["x2"] == "coordinate 2 of the point x")
    assert (columns["rho"].startswith("critical radius"))
    with open(tmp_path / MANIFEST_FILE) as json_io:
        manifest = json.load(json_io)
    assert (manifest["exit_code"] == 0)
    assert (manifest["wall_times"] == {"total": 1.235})
    assert (manifest["files"] == sorted(["rho__field.csv", SCHEMA_FILE]))
    assert (set(manifest["versions"]) == {"lab", "python", "numpy", "scipy"})
    assert (manifest["config"] == {"seed": 0})
