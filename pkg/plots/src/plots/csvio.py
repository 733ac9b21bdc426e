"""Reader for the scheduler CLI's CSV outputs.

Files carry ``# key: value`` metadata lines, then a header row, then data
rows. Raw lines are retained verbatim so that a figure's sidecar table can
re-emit the selected rows byte-identically to the source file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field


class TableError(Exception):
    """The CSV file does not have the expected layout or columns."""


@dataclass(frozen=True)
class Table:
    """One parsed CSV file plus its verbatim lines."""

    path: str
    meta: dict[str, str]
    header: list[str]
    rows: list[list[str]]
    meta_lines: list[str] = field(repr=False)
    header_line: str = field(repr=False)
    row_lines: list[str] = field(repr=False)

    def column(self, name: str) -> int:
        """Index of a header column; unknown names fail loudly by name."""
        try:
            return self.header.index(name)
        except ValueError:
            raise TableError(
                f"column {name!r} not found in {self.path} "
                f"(columns: {', '.join(self.header)})") from None

    def values(self, name: str) -> list[str]:
        idx = self.column(name)
        return [row[idx] for row in self.rows]

    def floats(self, name: str) -> list[float]:
        idx = self.column(name)
        try:
            return [float(row[idx]) for row in self.rows]
        except ValueError as exc:
            raise TableError(
                f"column {name!r} in {self.path} is not numeric: "
                f"{exc}") from exc


def read_table(path: str) -> Table:
    """Parse one CLI output file, keeping every line verbatim."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            content = fh.read()
    except OSError as exc:
        raise TableError(f"cannot read {path}: {exc}") from exc

    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    meta: dict[str, str] = {}
    meta_lines: list[str] = []
    body_start = 0
    for line in lines:
        if not line.startswith("#"):
            break
        meta_lines.append(line)
        body_start += 1
        key, sep, value = line.lstrip("#").partition(":")
        if sep:
            meta[key.strip()] = value.strip()

    if body_start >= len(lines):
        raise TableError(f"{path} has no header row")
    header_line = lines[body_start]
    row_lines = [line for line in lines[body_start + 1:] if line != ""]

    header = next(csv.reader([header_line]))
    rows = list(csv.reader(row_lines)) if row_lines else []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise TableError(
                f"{path} row {i + 1} has {len(row)} cells, "
                f"header has {len(header)}")
    return Table(path=path, meta=meta, header=header, rows=rows,
                 meta_lines=meta_lines, header_line=header_line,
                 row_lines=row_lines)


def write_selection(path: str, table: Table, indices: list[int]) -> None:
    """Sidecar data table: source metadata, header, and the selected rows.

    Rows are emitted in plot order as verbatim copies of the source lines,
    so each sidecar line byte-matches a line of the input file.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in table.meta_lines:
            fh.write(line + "\n")
        fh.write(table.header_line + "\n")
        for i in indices:
            fh.write(table.row_lines[i] + "\n")
