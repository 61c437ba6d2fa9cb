"""CSV/JSON artifact helpers shared by the CLI."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dp import ValueTable
from .errors import InvalidInstanceError


def fmt(v):
    # 17 significant digits round-trip doubles
    return f"{float(v):.17g}"


def write_table_csv(path, table):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "value"])
        for x, v in zip(table.lattice.points, table.values):
            wr.writerow([fmt(x), fmt(v)])


def read_table_csv(path, lattice):
    """Load an ``x,value`` table and check it matches ``lattice`` point by point."""
    xs, vals = [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["x", "value"]:
            raise InvalidInstanceError("table CSV has header x,value", str(path))
        for row in rd:
            xs.append(float(row[0]))
            vals.append(float(row[1]))
    if len(xs) != lattice.n_points or not np.allclose(xs, lattice.points, atol=1e-9 * lattice.step):
        raise InvalidInstanceError("table lattice matches the instance lattice", str(path))
    return ValueTable(lattice, np.asarray(vals))


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
