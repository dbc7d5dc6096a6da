# utils/data_io.py

import csv
import logging
import math
import os

import numpy as np
from pydantic import ValidationError

from checks.reachability import TubeRow, TubeTable
from gp.posterior import Dataset, DatasetRole
from utils.errors import DataError

DATA_HEADER = ("t", "y")
TUBE_HEADER = ("interval_start", "interval_end", "tau_lower", "tau_upper")


def format_value(value):
    """Fixed CSV cell formatting; floats keep full precision so files are byte-identical across runs."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def read_columns(path, required):
    """Reads the named float columns of a CSV file as {name: [(line_number, value), ...]}."""
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty", line_number=1)
        header = [h.strip() for h in header]
        missing = [name for name in required if name not in header]
        if missing:
            raise DataError(f"header must contain {', '.join(required)}; missing {', '.join(missing)}", line_number=1)
        index = {name: header.index(name) for name in required}

        columns = {name: [] for name in required}
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line_number=line)
            for name, idx in index.items():
                try:
                    value = float(row[idx])
                except ValueError:
                    raise DataError(f"{name} value {row[idx]!r} is not a number", line_number=line) from None
                if not math.isfinite(value):
                    raise DataError(f"{name} value {row[idx]!r} is not finite", line_number=line)
                columns[name].append((line, value))
    if not columns[required[0]]:
        raise DataError(f"{path} has a header but no data rows")
    return columns


def _sorted_series(t_column, y_column):
    rows = sorted(((t, y, line) for (line, t), (_, y) in zip(t_column, y_column)), key=lambda r: (r[0], r[2]))
    for (t_prev, _, line_prev), (t_next, _, line_next) in zip(rows, rows[1:]):
        if t_prev == t_next:
            raise DataError(f"duplicate time t={t_next} (also on line {line_prev})", line_number=line_next)
    for t, _, line in rows:
        if t < 0.0:
            raise DataError(f"time t={t} is negative", line_number=line)
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


def ingest_csv(path, role=DatasetRole.HYPERPARAMETER_TRAINING):
    """Parses a 't,y' file into a Dataset sorted by time."""
    columns = read_columns(path, DATA_HEADER)
    t, y = _sorted_series(columns["t"], columns["y"])
    logging.info(f"Loaded {t.size} observations from {path}")
    return Dataset(t=t, y=y, role=role)


def ingest_reference(path):
    """Reference samples for a trackability check: the y column of a data file or the mean column of a prediction file."""
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = [h.strip() for h in next(csv.reader(f), [])]
    value_column = "mean" if "mean" in header else "y"
    columns = read_columns(path, ("t", value_column))
    return _sorted_series(columns["t"], columns[value_column])


def load_tube_table(path):
    columns = read_columns(path, TUBE_HEADER)
    rows = []
    for cells in zip(*(columns[name] for name in TUBE_HEADER)):
        line = cells[0][0]
        try:
            rows.append(TubeRow(**{name: value for name, (_, value) in zip(TUBE_HEADER, cells)}))
        except ValidationError as e:
            raise DataError(f"invalid tube row: {e.errors()[0]['msg']}", line_number=line) from e
    logging.info(f"Loaded tube table with {len(rows)} rows from {path}")
    return TubeTable(rows=tuple(rows))


def write_csv(path, header, rows):
    """rows: iterable of dicts keyed by header names, or of sequences in header order."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            cells = [row[name] for name in header] if isinstance(row, dict) else row
            writer.writerow([format_value(cell) for cell in cells])
    logging.info(f"CSV written to: {path}")


def write_dataset(path, data):
    write_csv(path, DATA_HEADER, zip(data.t, data.y))
