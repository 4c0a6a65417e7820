# utils/io.py
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

FIELD_HEADER = "aniso-ac field n_div={n_div} t={time}"
FLOAT_FORMAT = "%.17g"


def _atomic_write(path: str | Path, text: str) -> Path:
    """Write to a temporary sibling and rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_field(path, values: np.ndarray, n_div: int, time: float) -> Path:
    values = np.asarray(values, dtype=float)
    if values.size != (n_div + 1) ** 2:
        raise ValueError(f"field has {values.size} values, mesh n_div={n_div} needs {(n_div + 1) ** 2}")
    lines = [FIELD_HEADER.format(n_div=n_div, time=FLOAT_FORMAT % time)]
    lines.extend(FLOAT_FORMAT % v for v in values)
    return _atomic_write(path, "\n".join(lines) + "\n")


def read_field(path) -> tuple[np.ndarray, int, float]:
    """Returns (values, n_div, time)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["aniso-ac", "field"]:
            raise ValueError(f"{path} is not a field snapshot")
        meta = dict(item.split("=", 1) for item in header[2:])
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    n_div = int(meta["n_div"])
    if values.size != (n_div + 1) ** 2:
        raise ValueError(f"{path}: expected {(n_div + 1) ** 2} values, found {values.size}")
    return values, n_div, float(meta["t"])


def write_vtk(path, values: np.ndarray, n_div: int, name: str = "y") -> Path:
    """Legacy VTK STRUCTURED_POINTS file of a nodal field on (-1, 1)^2."""
    h = 2.0 / n_div
    lines = [
        "# vtk DataFile Version 3.0",
        f"aniso-ac {name}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n_div + 1} {n_div + 1} 1",
        "ORIGIN -1 -1 0",
        f"SPACING {FLOAT_FORMAT % h} {FLOAT_FORMAT % h} 1",
        f"POINT_DATA {(n_div + 1) ** 2}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend(FLOAT_FORMAT % v for v in np.asarray(values, dtype=float))
    return _atomic_write(path, "\n".join(lines) + "\n")


def write_csv(path, frame: pd.DataFrame) -> Path:
    return _atomic_write(
        path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    )


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_json(path, payload: dict) -> Path:
    return _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
