import csv
import json
import logging
import math
import os
import platform
import re
import threading
from datetime import datetime, timezone
from typing import Any, Iterable, Sequence

import numpy as np
import scipy

import schrodinger
from operators.operator import json_encoder
from schrodinger.report import VerificationReport

logger = logging.getLogger("schroedinger-lab")

SCHEMA_FILE = "csv_schema.json"
MANIFEST_FILE = "manifest.json"

COLUMN_DOCS = {
    "probe": "index of the probe tuple",
    "member": "label of the test function in the battery",
    "t": "time parameter (empty for estimates without t)",
    "measured": "left-hand side of the estimate at the probe",
    "bound": "right-hand side of the estimate without its constant",
    "ratio": "measured / bound; the reported constant is the maximum",
    "radius": "ball radius s",
    "rho": "critical radius rho at the ball center or point",
    "class": "ball class: sub-critical (s <= rho/2), intermediate or critical (s >= rho)",
    "k0": "decay exponent of the rho equivalence bound",
    "c": "smallest equivalence constant for this k0",
    "kind": "operator kind tag",
    "value": "kernel value",
    "x": "space-separated coordinates of the first point",
    "y": "space-separated coordinates of the second point",
}


def _cell(value: Any) -> str:
    """repr for floats so the CSV round-trips every bit"""
    if value is None:
        return ""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def artifact_name(name: str) -> str:
    """file-system safe stem of a report name"""
    return re.sub(r"[^A-Za-z0-9=.,_+-]+", "_", name).strip("_")


def _describe(column: str) -> str:
    if column in COLUMN_DOCS:
        return COLUMN_DOCS[column]
    if re.fullmatch(r"[xyz]\d+", column):
        return f"coordinate {column[1:]} of the point {column[0]}"
    if re.fullmatch(r"[ij]\d+", column):
        return f"grid index along axis {column[1:]} of the {'first' if column[0] == 'i' else 'second'} point"
    return ""


class ArtifactWriter:
    """
    Writes the CSV and JSON artifacts of one run into `output_dir`. Writes are
    serialized; CSV bodies carry no timestamps, these go to the manifest only.
    """

    def __init__(self, output_dir: str, config_hash: str):
        self.output_dir = output_dir
        self.config_hash = config_hash
        self.lock = threading.Lock()
        self.schema: dict[str, dict[str, Any]] = {}
        self.files: list[str] = []
        os.makedirs(output_dir, exist_ok=True)

    def _path(self, file_name: str) -> str:
        return os.path.join(self.output_dir, file_name)

    def write_rows(self, file_name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                   description: str = "") -> str:
        path = self._path(file_name)
        with self.lock:
            with open(path, "w", newline="", encoding="utf-8") as csv_io:
                writer = csv.writer(csv_io, lineterminator="\n")
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_cell(v) for v in row])
            self.schema[file_name] = dict(description=description,
                                          columns={column: _describe(column) for column in columns})
            self.files.append(file_name)
        logger.debug("wrote %s", path)
        return path

    def write_json(self, file_name: str, data: dict[str, Any]) -> str:
        path = self._path(file_name)
        document = dict(config_hash=self.config_hash, **data)
        with self.lock:
            with open(path, "w", encoding="utf-8") as json_io:
                json.dump(document, json_io, sort_keys=True, indent=2, default=json_encoder)
                json_io.write("\n")
            self.files.append(file_name)
        logger.debug("wrote %s", path)
        return path

    def write_report(self, check: str, report: VerificationReport, stability_threshold: float) -> str:
        """rows as <check>__<name>.csv plus the summary as <check>__<name>.json"""
        stem = f"{check}__{artifact_name(report.name)}"
        self.write_rows(f"{stem}.csv", report.columns, report.rows,
                        description=f"{check}: {report.name}")
        return self.write_json(f"{stem}.json", dict(check=check, report=report.summary(stability_threshold)))

    def write_schema(self) -> str:
        with self.lock:
            schema = dict(sorted(self.schema.items()))
        return self.write_json(SCHEMA_FILE, dict(files=schema))

    def write_manifest(self, config: dict[str, Any], wall_times: dict[str, float], checks: dict[str, Any],
                       exit_code: int) -> str:
        return self.write_json(MANIFEST_FILE, dict(
            created=datetime.now(timezone.utc).replace(microsecond=0).isoformat(),
            versions=dict(lab=schrodinger.__version__, python=platform.python_version(), numpy=np.__version__,
                          scipy=scipy.__version__),
            config=config,
            wall_times={name: round(seconds, 3) for name, seconds in wall_times.items()},
            checks=checks,
            files=sorted(set(self.files)),
            exit_code=exit_code,
        ))
