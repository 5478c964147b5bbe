"""Reader for the versioned CSV artifacts the lab CLI emits.

Deliberately independent of the producing package: figures consume files,
nothing else. The format is one `# fluctlab-csv v1` header line, optional
`# key=value` metadata lines, a column-name row, and comma-separated data
rows with repr-formatted floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

SCHEMA = "fluctlab-csv v1"


class DataError(RuntimeError):
    """Schema mismatch, missing column, or an empty table."""


@dataclass(frozen=True)
class Table:
    path: str
    columns: tuple
    rows: tuple          # tuple of row tuples, all strings
    meta: dict

    def column(self, name: str, cast=float) -> list:
        if name not in self.columns:
            raise DataError(
                f"{self.path}: missing column {name!r}; file has {list(self.columns)}"
            )
        idx = self.columns.index(name)
        try:
            return [cast(r[idx]) for r in self.rows]
        except ValueError as exc:
            raise DataError(f"{self.path}: column {name!r}: {exc}") from None


def load(path) -> Table:
    """Read one artifact, verifying the schema version and shape."""
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0] != f"# {SCHEMA}":
        found = lines[0] if lines else "<empty file>"
        raise DataError(f"{path}: expected schema '# {SCHEMA}', found {found!r}")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            key, _, val = body.partition("=")
            meta[key.strip()] = val.strip()
        i += 1
    if i >= len(lines):
        raise DataError(f"{path}: no column row after the header")
    columns = tuple(lines[i].split(","))
    rows = tuple(tuple(line.split(",")) for line in lines[i + 1 :] if line)
    for r in rows:
        if len(r) != len(columns):
            raise DataError(f"{path}: row with {len(r)} cells, expected {len(columns)}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Table(path=str(path), columns=columns, rows=rows, meta=meta)
