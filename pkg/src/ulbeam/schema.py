"""Strict schemas for the CSV files the package writes.

A file passes when its header is exactly the schema's column list and
every cell parses as the column's type. Floats may be ``nan`` only where
the schema allows it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .errors import UlbeamError


class SchemaError(UlbeamError, ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str               # "int" | "float" | "str"
    nullable: bool = False  # float columns: nan allowed
    choices: tuple = ()


TRAIN_LOG = (
    Column("epoch", "int"),
    Column("L_H", "float"),
    Column("L_P", "float"),
    Column("val_rate", "float", nullable=True),
    Column("val_NMSE", "float", nullable=True),
    Column("wall_time", "float"),
)

RESULTS = (
    Column("sweep_value", "str"),
    Column("scheme", "str"),
    Column("mean_rate", "float", nullable=True),
    Column("stderr", "float", nullable=True),
    Column("mean_nmse", "float", nullable=True),
    Column("count", "int"),
    Column("status", "str", choices=("ok", "failed")),
)

TRACE = (
    Column("iteration", "int"),
    Column("objective", "float"),
)

SCHEMAS = {"train_log": TRAIN_LOG, "results": RESULTS, "trace": TRACE}


def _check_cell(col, text, where):
    if col.kind == "int":
        try:
            v = int(text)
        except ValueError:
            raise SchemaError(f"{where}: {col.name}={text!r} is not an integer") from None
        if v < 0:
            raise SchemaError(f"{where}: {col.name} must be nonnegative")
    elif col.kind == "float":
        try:
            v = float(text)
        except ValueError:
            raise SchemaError(f"{where}: {col.name}={text!r} is not a number") from None
        if math.isnan(v) and not col.nullable:
            raise SchemaError(f"{where}: {col.name} may not be nan")
        if math.isinf(v):
            raise SchemaError(f"{where}: {col.name} is infinite")
    elif col.choices and text not in col.choices:
        raise SchemaError(f"{where}: {col.name}={text!r} not in {col.choices}")


def check_csv(path, schema):
    """Validate ``path`` against ``schema`` (a name in SCHEMAS or a column
    tuple); returns the number of data rows."""
    cols = SCHEMAS[schema] if isinstance(schema, str) else schema
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    expected = [c.name for c in cols]
    if header != expected:
        raise SchemaError(f"{path}: header {header} != {expected}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(cols):
            raise SchemaError(f"{path}:{i}: {len(row)} fields, expected {len(cols)}")
        for col, text in zip(cols, row):
            _check_cell(col, text, f"{path}:{i}")
    return len(rows) - 1
