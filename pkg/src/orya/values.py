"""Property values: the five kinds used by machines, units and constraints.

A property value is one of: text (str), integer (int), boolean (bool),
:class:`Version` (dotted integers) or :class:`Size` (a canonical byte count).
Kinds never coerce into each other; comparisons across kinds are reported as
type mismatches by the evaluator.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from typing import Union

NAME_RE = re.compile(r"^[a-zA-Z_][a-zA-Z0-9_.]*$")
VERSION_RE = re.compile(r"^\d+(\.\d+)+$")
SIZE_RE = re.compile(r"^(\d+)(B|KB|MB|GB)$")

# Decimal multipliers; B is the exact-count unit used when nothing larger divides evenly.
SIZE_UNITS = {"B": 1, "KB": 10**3, "MB": 10**6, "GB": 10**9}


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class Version:
    """Dotted-integer version. Missing trailing components compare as 0."""

    parts: tuple[int, ...]

    def __post_init__(self):
        if not self.parts or any(p < 0 for p in self.parts):
            raise ValueError(f"invalid version parts: {self.parts!r}")

    @classmethod
    def parse(cls, text: str) -> "Version":
        if not re.match(r"^\d+(\.\d+)*$", text):
            raise ValueError(f"invalid version: {text!r}")
        return cls(tuple(int(p) for p in text.split(".")))

    def _padded(self, width: int) -> tuple[int, ...]:
        return self.parts + (0,) * (width - len(self.parts))

    def __eq__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        width = max(len(self.parts), len(other.parts))
        return self._padded(width) == other._padded(width)

    def __lt__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        width = max(len(self.parts), len(other.parts))
        return self._padded(width) < other._padded(width)

    def __hash__(self):
        parts = self.parts
        while len(parts) > 1 and parts[-1] == 0:
            parts = parts[:-1]
        return hash(parts)

    def __str__(self):
        return ".".join(str(p) for p in self.parts)


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class Size:
    """A byte count, canonicalized to an integer number of bytes."""

    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("size must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Size":
        m = SIZE_RE.match(text)
        if not m:
            raise ValueError(f"invalid size: {text!r}")
        return cls(int(m.group(1)) * SIZE_UNITS[m.group(2)])

    def __eq__(self, other):
        if not isinstance(other, Size):
            return NotImplemented
        return self.count == other.count

    def __lt__(self, other):
        if not isinstance(other, Size):
            return NotImplemented
        return self.count < other.count

    def __hash__(self):
        return hash(("size", self.count))

    def __str__(self):
        for unit in ("GB", "MB", "KB"):
            mult = SIZE_UNITS[unit]
            if self.count and self.count % mult == 0:
                return f"{self.count // mult}{unit}"
        return f"{self.count}B"


PropertyValue = Union[str, int, bool, Version, Size]

KINDS = ("text", "integer", "boolean", "version", "bytes")


def kind_of(value: PropertyValue) -> str:
    # bool first: bool is a subclass of int.
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, str):
        return "text"
    if isinstance(value, Version):
        return "version"
    if isinstance(value, Size):
        return "bytes"
    raise TypeError(f"not a property value: {value!r}")


def valid_name(name: str) -> bool:
    return bool(NAME_RE.match(name))


def value_to_json(value: PropertyValue):
    """Encode a property value for the store documents."""
    kind = kind_of(value)
    if kind in ("boolean", "integer"):
        return value
    if kind == "version":
        return str(value)
    if kind == "bytes":
        return str(value)
    return value  # text


def value_from_json(raw) -> PropertyValue:
    """Decode a store-document scalar back into a property value.

    Strings with a size suffix decode as bytes, dotted digit strings as
    versions, everything else as text. Bare JSON integers decode as the
    integer kind; byte counts must carry a unit suffix (``"0B"`` at minimum).
    """
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        if SIZE_RE.match(raw):
            return Size.parse(raw)
        if VERSION_RE.match(raw):
            return Version.parse(raw)
        return raw
    raise ValueError(f"not a property scalar: {raw!r}")


def size_from_json(raw) -> Size:
    """Decode a field that is declared bytes: bare integer or suffixed string."""
    if isinstance(raw, bool):
        raise ValueError(f"not a size: {raw!r}")
    if isinstance(raw, int):
        return Size(raw)
    if isinstance(raw, str):
        return Size.parse(raw)
    raise ValueError(f"not a size: {raw!r}")


def parse_property_map(obj, where: str = "properties") -> dict[str, PropertyValue]:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected object")
    props: dict[str, PropertyValue] = {}
    for name, raw in obj.items():
        if not valid_name(name):
            raise ValueError(f"{where}: invalid property name {name!r}")
        props[name] = value_from_json(raw)
    return props


def property_map_to_json(props: dict[str, PropertyValue]) -> dict:
    return {name: value_to_json(props[name]) for name in sorted(props)}
