"""Deterministic CSV emission: comma separator, header row, LF line endings,
floats at 17 significant digits, '.' decimal separator."""

import csv
from pathlib import Path

import numpy as np

NA = "NA"


def fmt_value(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if f != f:  # NaN
            return NA
        return format(f, ".17g")
    return str(v)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(v) for v in row])
