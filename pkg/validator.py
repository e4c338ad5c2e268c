"""
Validator checks that the files the pipeline writes have the right
structure. Called by the CLI before it writes JSON and by the tests on
every emitted file type.

Check functions return True, or a tuple naming the problem.
"""
import csv

import jsonschema

from loading import EVENTS_HEADER, HISTOGRAM_HEADER, PROFILE_HEADER

NUMBER = {"type": "number"}
FRACTION = {"type": "number", "minimum": 0, "maximum": 1}
POSITIVE = {"type": "number", "exclusiveMinimum": 0}
NONNEGATIVE = {"type": "number", "minimum": 0}

MODE_SPEC = {
    "type": "object",
    "required": ["mfd_um", "modes"],
    "properties": {
        "mfd_um": POSITIVE,
        "wavelength_um": POSITIVE,
        "center_um": {"type": "array", "items": NUMBER, "minItems": 2, "maxItems": 2},
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["p", "weight"],
                "properties": {
                    "l": {"type": "integer", "const": 0},
                    "p": {"type": "integer", "minimum": 0, "maximum": 4},
                    "weight": FRACTION,
                },
            },
        },
    },
}

GEOMETRY = {
    "type": "object",
    "properties": {
        "column_pitch_um": POSITIVE,
        "wire_width_um": POSITIVE,
        "n_columns": {"type": "integer", "minimum": 1},
        "path_increment_um": POSITIVE,
        "pulse_velocity_c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "jitter_sigma_ps": NONNEGATIVE,
        "active_diameter_um": POSITIVE,
        "channel_skew_ps": NUMBER,
    },
    "additionalProperties": False,
}

RUN_CONFIG = {
    "type": "object",
    "required": ["mode"],
    "properties": {
        "mode": MODE_SPEC,
        "geometry": GEOMETRY,
        "n_events": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "outputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

DIVERGENCE = {
    "type": "object",
    "required": ["fiber_mfd_um", "fit_mfd_um", "diverged", "path_um", "path_range_um"],
    "properties": {
        "diverged": {"type": "boolean"},
        "path_um": NONNEGATIVE,
        "path_range_um": {"type": "array", "items": NONNEGATIVE, "minItems": 2, "maxItems": 2},
    },
}

FIT_RESULT = {
    "type": "object",
    "required": ["mfd_um", "mfd_sigma_um", "center_x_um", "weights", "chi2_per_dof"],
    "properties": {
        "mfd_um": POSITIVE,
        "mfd_sigma_um": NONNEGATIVE,
        "center_x_um": NUMBER,
        "center_x_sigma_um": NONNEGATIVE,
        "chi2_per_dof": NONNEGATIVE,
        "weights": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["p", "weight", "sigma"],
                "properties": {
                    "p": {"type": "integer", "minimum": 0, "maximum": 4},
                    "weight": FRACTION,
                    "sigma": NONNEGATIVE,
                },
            },
        },
        "comb": {
            "type": "object",
            "required": ["pitch_ps", "offset_ps", "low_confidence"],
        },
        "rejected_events": {"type": "integer", "minimum": 0},
        "divergence": DIVERGENCE,
    },
}

STACK_SPEC = {
    "type": "object",
    "required": ["wavelength_nm", "ambient_n", "substrate_n", "layers"],
    "properties": {
        "wavelength_nm": POSITIVE,
        "ambient_n": POSITIVE,
        "substrate_n": POSITIVE,
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["thickness_nm", "n"],
                "properties": {
                    "thickness_nm": POSITIVE,
                    "n": POSITIVE,
                    "k": NONNEGATIVE,
                    "name": {"type": "string"},
                },
            },
        },
    },
}

STACK_RESPONSE = {
    "type": "object",
    "required": ["R", "T", "A", "per_layer_absorption"],
    "properties": {
        "R": FRACTION,
        "T": FRACTION,
        "A": FRACTION,
        "per_layer_absorption": {"type": "array", "items": NUMBER},
    },
}

SIMULATE_SUMMARY = {
    "type": "object",
    "required": ["events", "acceptance_rate", "seed", "out"],
    "properties": {
        "events": {"type": "integer", "minimum": 1},
        "acceptance_rate": FRACTION,
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
}

COUPLING = {
    "type": "object",
    "minProperties": 1,
    "properties": {
        "efficiency": FRACTION,
        "loss": FRACTION,
        "max_offset_um": NONNEGATIVE,
    },
}

ERROR = {
    "type": "object",
    "required": ["error", "message"],
    "properties": {"error": {"type": "string"}, "message": {"type": "string"}},
}

SCHEMAS = {
    "mode": MODE_SPEC,
    "geometry": GEOMETRY,
    "run": RUN_CONFIG,
    "fit": FIT_RESULT,
    "stack": STACK_SPEC,
    "stack_response": STACK_RESPONSE,
    "simulate": SIMULATE_SUMMARY,
    "couple": COUPLING,
    "error": ERROR,
}

CSV_HEADERS = {
    "events": EVENTS_HEADER,
    "profile": PROFILE_HEADER,
    "histogram": HISTOGRAM_HEADER,
}


def check_json(data, kind):
    """
    Check decoded JSON data against the schema of the given kind.
    """
    try:
        jsonschema.validate(instance=data, schema=SCHEMAS[kind])
    except jsonschema.ValidationError as error:
        path = "/".join(str(part) for part in error.absolute_path)
        return kind, path, error.message  # ('fit', 'weights/0/weight', '1.2 is greater ...')
    return True


def check_csv(path, kind):
    """
    Check header, field count and numeric fields of an emitted CSV file.

    kind: "events", "profile", "histogram" or "grid".
    """
    with open(path, encoding="utf-8", newline="") as csv_file:
        raw = csv_file.read()
    if "\r" in raw:
        return kind, 0, "line endings must be \\n"
    rows = list(csv.reader(raw.splitlines()))
    if not rows:
        return kind, 0, "empty file"
    header = rows[0]
    if kind == "grid":
        if header[0] != "diameter_um" or len(header) < 2:
            return kind, 1, header[0]
    elif header != CSV_HEADERS[kind]:
        return kind, 1, ",".join(header)
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            return kind, line, len(row)  # ('events', 7, 5)
        for value in row:
            try:
                float(value)
            except ValueError:
                return kind, line, value
    return True
