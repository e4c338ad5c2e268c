"""
Loading module contains functions to read configuration files and to
read and write the CSV / JSON files the pipeline stages exchange.

CSV files use "\n" line endings and repr() floats, so they do not depend
on the locale and are byte-identical for identical data.
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from beams import ModeSpec
from detector import DetectorGeometry, EventBatch
from stack import StackSpec
from util import ConfigurationError, MalformedInputError, ValidationError

logger = logging.getLogger(__name__)

EVENTS_HEADER = ["event_id", "true_column", "true_x_um", "true_y_um", "t_pos_ps", "t_neg_ps"]
PROFILE_HEADER = ["column", "x_um", "count"]
HISTOGRAM_HEADER = ["bin_low_ps", "bin_high_ps", "count"]


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a simulation run needs. outputs maps artifact names to paths.
    """
    mode: ModeSpec
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)
    n_events: int = 1_000_000
    seed: int = 0
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_events < 1:
            raise ValidationError("n_events must be ≥ 1")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def from_data(cls, data):
        """
        Return run config from a full RunConfig object or a bare ModeSpec.
        """
        if "mode" not in data:
            return cls(ModeSpec.from_dict(data))
        try:
            return cls(
                ModeSpec.from_dict(data["mode"]),
                DetectorGeometry.from_dict(data.get("geometry", {})),
                int(data.get("n_events", 1_000_000)),
                int(data.get("seed", 0)),
                dict(data.get("outputs", {})),
            )
        except (TypeError, ValueError, AttributeError) as error:
            if isinstance(error, ValidationError):
                raise
            raise ConfigurationError(f"malformed run config: {error!r}") from error


def get_config_data(path):
    """
    Return a dictionary of a decoded JSON or YAML file.

    YAML is a superset of JSON, so one loader reads both.
    """
    try:
        with open(path, encoding="utf-8") as config_file:
            data = yaml.safe_load(config_file)
    except OSError as error:
        raise ConfigurationError(f"cannot read {path}: {error.strerror}") from error
    except yaml.YAMLError as error:
        raise ConfigurationError(f"{path} is not valid JSON or YAML: {error}") from error
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must contain an object")
    return data


def get_run_config(path):
    return RunConfig.from_data(get_config_data(path))


def get_mode_spec(path):
    data = get_config_data(path)
    return ModeSpec.from_dict(data.get("mode", data))


def get_geometry(path):
    return DetectorGeometry.from_dict(get_config_data(path))


def get_stack_spec(path):
    return StackSpec.from_dict(get_config_data(path))


def dump_json(data):
    """
    Return data as JSON text; NaN is not valid JSON and is refused.
    """
    return json.dumps(data, indent=2, ensure_ascii=False, allow_nan=False)


def write_json(path, data):
    Path(path).write_text(dump_json(data) + "\n", encoding="utf-8")


def _open_csv_writer(path):
    csv_file = open(path, "w", encoding="utf-8", newline="")
    return csv_file, csv.writer(csv_file, lineterminator="\n")


def write_events(path, batch):
    """
    Write an EventBatch to the events CSV format.
    """
    csv_file, writer = _open_csv_writer(path)
    with csv_file:
        writer.writerow(EVENTS_HEADER)
        writer.writerows(zip(
            range(len(batch)),
            batch.columns.tolist(),
            batch.x.tolist(),
            batch.y.tolist(),
            batch.t_pos.tolist(),
            batch.t_neg.tolist(),
        ))
    logger.debug("wrote %d events to %s", len(batch), path)


def read_events(path):
    """
    Return an EventBatch read from an events CSV file.

    Malformed rows are reported with their line number; a file without
    any event is malformed too.
    """
    columns, x, y, t_pos, t_neg = [], [], [], [], []
    try:
        with open(path, encoding="utf-8", newline="") as csv_file:
            reader = csv.reader(csv_file)
            header = next(reader, None)
            if header is None:
                raise MalformedInputError("empty events file", line=1)
            if [name.strip() for name in header] != EVENTS_HEADER:
                raise MalformedInputError(
                    "expected header {}, got {}".format(",".join(EVENTS_HEADER), ",".join(header)),
                    line=1)
            for row in reader:
                if not row:
                    continue
                if len(row) != len(EVENTS_HEADER):
                    raise MalformedInputError(
                        f"expected {len(EVENTS_HEADER)} fields, got {len(row)}",
                        line=reader.line_num)
                try:
                    columns.append(int(row[1]))
                    x.append(float(row[2]))
                    y.append(float(row[3]))
                    t_pos.append(float(row[4]))
                    t_neg.append(float(row[5]))
                except ValueError as error:
                    raise MalformedInputError(str(error), line=reader.line_num) from error
    except OSError as error:
        raise ConfigurationError(f"cannot read {path}: {error.strerror}") from error
    if not columns:
        raise MalformedInputError("events file contains no events")
    if not np.all(np.isfinite(t_pos)) or not np.all(np.isfinite(t_neg)):
        raise MalformedInputError("time tags must be finite")
    return EventBatch(columns, x, y, t_pos, t_neg)


def write_profile(path, profile, geom):
    csv_file, writer = _open_csv_writer(path)
    with csv_file:
        writer.writerow(PROFILE_HEADER)
        writer.writerows(zip(geom.column_indices.tolist(),
                             profile.x_positions.tolist(), profile.counts.tolist()))


def write_histogram(path, hist):
    csv_file, writer = _open_csv_writer(path)
    with csv_file:
        writer.writerow(HISTOGRAM_HEADER)
        writer.writerows(zip(hist.bin_edges[:-1].tolist(), hist.bin_edges[1:].tolist(),
                             hist.counts.tolist()))


def write_grid(path, curve):
    """
    Write a tolerance curve as a matrix: rows are diameters, columns offsets.
    """
    csv_file, writer = _open_csv_writer(path)
    with csv_file:
        writer.writerow(["diameter_um"] + [f"offset_{offset!r}_um" for offset in curve.offsets.tolist()])
        for diameter, losses in zip(curve.diameters.tolist(), curve.loss.tolist()):
            writer.writerow([diameter] + losses)
