"""Domain types for multi-level header tables and their metric-type targets."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple


class Location(str, enum.Enum):
    ROW_HEADER = "rh"
    COLUMN_HEADER = "ch"
    OUT_OF_HEADER = "none"


class LocationClass(enum.IntEnum):
    """Prediction target of the location gate. Index order is also the tie-break order."""

    CAPT = 0
    RH = 1
    CH = 2

    @classmethod
    def from_location(cls, location: Location) -> "LocationClass":
        return _LOC_TO_CLASS[location]

    def to_location(self) -> Location:
        return _CLASS_TO_LOC[self]


_LOC_TO_CLASS = {
    Location.OUT_OF_HEADER: LocationClass.CAPT,
    Location.ROW_HEADER: LocationClass.RH,
    Location.COLUMN_HEADER: LocationClass.CH,
}
_CLASS_TO_LOC = {v: k for k, v in _LOC_TO_CLASS.items()}


# confusion-matrix classes, in report order
OUTPUT_CLASSES = ("LRow", "LCol", "CCapt", "Gen")


@dataclass(frozen=True)
class MetricTarget:
    location: Location
    level: Optional[int]
    tokens: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "location", Location(self.location))
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class TableInstance:
    id: str
    caption: Tuple[str, ...]
    row_headers: Tuple[Tuple[str, ...], ...]
    column_headers: Tuple[Tuple[str, ...], ...]
    cells: Tuple[Tuple[str, ...], ...]
    target: MetricTarget

    def __post_init__(self):
        # accept lists from callers, store tuples so instances stay hashable/immutable
        object.__setattr__(self, "caption", tuple(self.caption))
        object.__setattr__(self, "row_headers", tuple(tuple(lv) for lv in self.row_headers))
        object.__setattr__(self, "column_headers", tuple(tuple(lv) for lv in self.column_headers))
        object.__setattr__(self, "cells", tuple(tuple(r) for r in self.cells))

    @property
    def u(self) -> int:
        return len(self.row_headers)

    @property
    def v(self) -> int:
        return len(self.column_headers)

    @property
    def n_rows(self) -> int:
        if self.row_headers:
            return len(self.row_headers[0])
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        if self.column_headers:
            return len(self.column_headers[0])
        return len(self.cells[0]) if self.cells else 0

    @property
    def flat_gold_level(self) -> Optional[int]:
        """1-based index of the gold level in the rows-then-columns ordering."""
        t = self.target
        if t.location is Location.ROW_HEADER:
            return t.level
        if t.location is Location.COLUMN_HEADER:
            return self.u + t.level
        return None


class ValidationError(ValueError):
    def __init__(self, table_id: str, violations: List[str]):
        self.table_id = table_id
        self.violations = violations
        super().__init__(f"table {table_id!r} is invalid: " + "; ".join(violations))


def validate(table: TableInstance) -> List[str]:
    """Return a list of invariant violations; empty when the table is well formed."""
    problems: List[str] = []
    u, v = table.u, table.v

    if u + v < 1:
        problems.append("headers: table needs at least one row or column header level")
    if not table.caption or not any(tok.strip() for tok in table.caption):
        problems.append("caption: must be non-empty")

    n_r = len(table.row_headers[0]) if u else None
    for k, level in enumerate(table.row_headers, 1):
        if len(level) != n_r:
            problems.append(f"row_headers[{k}]: rectangularity, has {len(level)} entries, expected {n_r}")
    n_c = len(table.column_headers[0]) if v else None
    for l, level in enumerate(table.column_headers, 1):
        if len(level) != n_c:
            problems.append(f"column_headers[{l}]: rectangularity, has {len(level)} entries, expected {n_c}")
    for axis, levels in (("row_headers", table.row_headers), ("column_headers", table.column_headers)):
        for k, level in enumerate(levels, 1):
            if not level:
                problems.append(f"{axis}[{k}]: level is empty")
            for i, name in enumerate(level):
                if not str(name).strip():
                    problems.append(f"{axis}[{k}][{i}]: header name is blank")

    t = table.target
    if not t.tokens:
        problems.append("target.tokens: must be non-empty")
    if t.location is Location.OUT_OF_HEADER:
        if t.level is not None:
            problems.append("target.level: must be null for out-of-header targets")
        if len(set(t.tokens)) > 1:
            problems.append("target.tokens: uniformity, out-of-header tokens must all be identical")
    else:
        levels = table.row_headers if t.location is Location.ROW_HEADER else table.column_headers
        axis = "row" if t.location is Location.ROW_HEADER else "column"
        if t.level is None or not 1 <= t.level <= len(levels):
            problems.append(f"target.level: {t.level} out of range for {len(levels)} {axis} header levels")
        elif tuple(t.tokens) != tuple(levels[t.level - 1]):
            problems.append(f"target.tokens: must equal the {axis} header names at level {t.level}")
    return problems


def check(table: TableInstance) -> TableInstance:
    problems = validate(table)
    if problems:
        raise ValidationError(table.id, problems)
    return table


def flatten_levels(table: TableInstance) -> List[Tuple[Location, int, Tuple[str, ...]]]:
    """Header levels in canonical order: row levels 1..u, then column levels 1..v."""
    out = [(Location.ROW_HEADER, k, names) for k, names in enumerate(table.row_headers, 1)]
    out += [(Location.COLUMN_HEADER, l, names) for l, names in enumerate(table.column_headers, 1)]
    return out


def unflatten_level(table: TableInstance, index: int) -> Tuple[Location, int]:
    """Inverse of the flat ordering: 1-based flat index -> (axis, level)."""
    if not 1 <= index <= table.u + table.v:
        raise IndexError(index)
    if index <= table.u:
        return Location.ROW_HEADER, index
    return Location.COLUMN_HEADER, index - table.u


def output_class(target: MetricTarget, caption: Tuple[str, ...], copy_classes: bool = True) -> str:
    """Map a (gold) target onto LRow / LCol / CCapt / Gen.

    Out-of-header targets are CCapt when the token is present in the caption,
    unless the model has no copy mechanism, in which case everything is Gen.
    """
    if target.location is Location.ROW_HEADER:
        return "LRow"
    if target.location is Location.COLUMN_HEADER:
        return "LCol"
    if not copy_classes:
        return "Gen"
    tok = target.tokens[0].strip().lower()
    return "CCapt" if tok in {c.strip().lower() for c in caption} else "Gen"
