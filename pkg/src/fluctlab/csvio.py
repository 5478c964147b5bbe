"""Versioned CSV artifacts and the on-disk path store.

Every file starts with the schema line ``# fluctlab-csv v1``, then optional
``# key=value`` metadata lines, one column-name row, and data rows. Floats
are written with repr, so reading a file back reproduces the exact doubles
and rerunning a deterministic experiment reproduces the bytes.

Space-time paths are stored in long format (record, index, axis, site,
value) with the grid shape in the metadata; the round trip through
``write_path_csv``/``read_path_csv`` is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pde import PathDiscretization

__all__ = [
    "CSV_VERSION",
    "CSVFormatError",
    "write_csv",
    "read_csv",
    "column",
    "write_report",
    "write_path_csv",
    "read_path_csv",
]

CSV_VERSION = "fluctlab-csv v1"


class CSVFormatError(RuntimeError):
    """Missing or mismatched schema header, or a malformed row."""


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    s = str(v)
    if "," in s or "\n" in s or s.startswith("#"):
        raise ValueError(f"cell value {s!r} would corrupt the CSV layout")
    return s


def write_csv(path, columns, rows, meta: dict | None = None) -> None:
    """Write a versioned CSV; rows are iterables matching ``columns``."""
    columns = list(columns)
    lines = [f"# {CSV_VERSION}"]
    for key, val in (meta or {}).items():
        lines.append(f"# {key}={_format_cell(val)}")
    lines.append(",".join(columns))
    for row in rows:
        cells = [_format_cell(v) for v in row]
        if len(cells) != len(columns):
            raise ValueError(f"row has {len(cells)} cells, expected {len(columns)}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_csv(path) -> tuple[list, list, dict]:
    """Read a versioned CSV back as (columns, rows of strings, metadata)."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines or lines[0] != f"# {CSV_VERSION}":
        found = lines[0] if lines else "<empty file>"
        raise CSVFormatError(f"{path}: expected header '# {CSV_VERSION}', found {found!r}")
    meta: dict = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            key, _, val = body.partition("=")
            meta[key.strip()] = val.strip()
        i += 1
    if i >= len(lines):
        raise CSVFormatError(f"{path}: no column row after the header")
    columns = lines[i].split(",")
    rows = [line.split(",") for line in lines[i + 1 :] if line]
    for r in rows:
        if len(r) != len(columns):
            raise CSVFormatError(f"{path}: row with {len(r)} cells, expected {len(columns)}")
    return columns, rows, meta


def column(columns: list, rows: list, name: str, cast=float) -> list:
    """Extract one column by name, cast cell-wise."""
    try:
        idx = columns.index(name)
    except ValueError:
        raise CSVFormatError(f"missing column {name!r}; have {columns}") from None
    return [cast(r[idx]) for r in rows]


def write_report(path, pairs, meta: dict | None = None) -> None:
    """Two-column (key, value) CSV for single-result subcommands."""
    write_csv(path, ("key", "value"), pairs, meta)


def write_path_csv(path, p: PathDiscretization) -> None:
    base = p.densities.shape[1:]
    rows = []
    for k, t in enumerate(p.times):
        rows.append(("time", k, -1, -1, float(t)))
    for k in range(p.K + 1):
        flat = p.densities[k].ravel()
        for s in range(flat.size):
            rows.append(("density", k, -1, s, float(flat[s])))
    for k in range(p.K):
        for ax in range(p.d):
            flat = p.increments[k, ax].ravel()
            for s in range(flat.size):
                rows.append(("increment", k, ax, s, float(flat[s])))
    meta = {"d": p.d, "M": p.M, "K": p.K, "sites": int(np.prod(base))}
    write_csv(path, ("record", "index", "axis", "site", "value"), rows, meta)


def read_path_csv(path) -> PathDiscretization:
    columns, rows, meta = read_csv(path)
    try:
        d = int(meta["d"])
        M = int(meta["M"])
        K = int(meta["K"])
    except KeyError as exc:
        raise CSVFormatError(f"{path}: path store is missing grid metadata {exc}") from None
    base = (M,) * d
    times = np.zeros(K + 1)
    densities = np.zeros((K + 1,) + base)
    increments = np.zeros((K, d) + base)
    rec = column(columns, rows, "record", str)
    idx = column(columns, rows, "index", int)
    axis = column(columns, rows, "axis", int)
    site = column(columns, rows, "site", int)
    value = column(columns, rows, "value", float)
    dflat = densities.reshape(K + 1, -1)
    wflat = increments.reshape(K, d, -1)
    for r, k, ax, s, v in zip(rec, idx, axis, site, value):
        if r == "time":
            times[k] = v
        elif r == "density":
            dflat[k, s] = v
        elif r == "increment":
            wflat[k, ax, s] = v
        else:
            raise CSVFormatError(f"{path}: unknown record kind {r!r}")
    return PathDiscretization(times, densities, increments)
