"""Schema-checked CSV loading.

Every simulator export starts with a ``# <schema-id> v<N>`` line, then any
number of ``# key=value ...`` metadata lines, a column-header line, and data
rows. This module refuses files whose schema line does not match what the
caller expects — figures must never be rendered from a file of the wrong
shape or version.
"""

from __future__ import annotations


class SchemaMismatch(Exception):
    """The file's schema line is not the one the figure needs."""


def read_csv(path: str, schema: str):
    """Load ``path``, insisting on ``schema``.

    Returns (meta, columns, rows): metadata key->value strings from the
    ``#`` lines, the column names, and the data rows as lists of strings.
    """
    with open(path, encoding="ascii") as fh:
        first = fh.readline().strip()
        if first != f"# {schema}":
            raise SchemaMismatch(
                f"{path}: expected '# {schema}', found {first!r}")
        meta: dict[str, str] = {}
        line = fh.readline()
        while line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    key, _, value = token.partition("=")
                    meta[key] = value
            line = fh.readline()
        columns = [c.strip() for c in line.strip().split(",")] if line.strip() else []
        rows = [raw.strip().split(",") for raw in fh if raw.strip()]
    return meta, columns, rows


def column(columns: list[str], rows: list[list[str]], name: str,
           cast=float) -> list:
    """Extract one column by name, cast; KeyError when absent."""
    try:
        k = columns.index(name)
    except ValueError:
        raise KeyError(f"column {name!r} not in {columns}") from None
    return [cast(r[k]) for r in rows]
