"""Typed, range-checked node parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import ParameterError

KINDS = ("continuous", "discrete", "flag", "text")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class ParameterSpec:
    """Declaration of one node parameter.

    ``continuous`` values lie in ``[minimum, maximum]`` (optionally restricted
    to integers), ``discrete`` values come from ``allowed``, ``flag`` is a
    boolean and ``text`` any string. ``validator`` may add a further check; it
    returns an error message or None.
    """

    name: str
    kind: str
    default: Any
    minimum: float = -math.inf
    maximum: float = math.inf
    allowed: tuple = ()
    integer: bool = False
    validator: Callable[[Any], str | None] | None = field(default=None, compare=False)
    doc: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind '{self.kind}'")
        self.coerce(self.default)

    def coerce(self, value):
        """Return ``value`` converted to the parameter's type, or raise ParameterError."""
        name = self.name
        if self.kind == "flag":
            if isinstance(value, str):
                v = value.strip().lower()
                if v in _TRUE:
                    out = True
                elif v in _FALSE:
                    out = False
                else:
                    raise ParameterError(f"'{name}' expects a flag (true/false), got '{value}'")
            elif isinstance(value, (bool, int)) and value in (0, 1):
                out = bool(value)
            else:
                raise ParameterError(f"'{name}' expects a flag, got {value!r}")
        elif self.kind == "continuous":
            try:
                v = float(value)
            except (TypeError, ValueError):
                raise ParameterError(f"'{name}' expects a number, got {value!r}") from None
            if isinstance(value, bool) or not math.isfinite(v):
                raise ParameterError(f"'{name}' expects a finite number, got {value!r}")
            if self.integer:
                if v != int(v):
                    raise ParameterError(f"'{name}' expects an integer, got {value!r}")
                v = int(v)
            if not self.minimum <= v <= self.maximum:
                raise ParameterError(f"'{name}' = {value!r} outside [{self.minimum:g}, {self.maximum:g}]")
            out = v
        elif self.kind == "discrete":
            matches = [a for a in self.allowed if a == value or str(a) == str(value).strip()]
            if not matches:
                raise ParameterError(f"'{name}' must be one of {list(self.allowed)}, got {value!r}")
            out = matches[0]
        else:
            if not isinstance(value, str):
                raise ParameterError(f"'{name}' expects text, got {value!r}")
            out = value
        if self.validator is not None:
            msg = self.validator(out)
            if msg:
                raise ParameterError(f"'{name}' = {value!r}: {msg}")
        return out

    def describe(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "default": self.default}
        if self.kind == "continuous":
            d.update(minimum=self.minimum, maximum=self.maximum, integer=self.integer)
        elif self.kind == "discrete":
            d["allowed"] = list(self.allowed)
        return d


def continuous(name, default, minimum=-math.inf, maximum=math.inf, *, integer=False, validator=None, doc=""):
    return ParameterSpec(name, "continuous", default, minimum, maximum, integer=integer, validator=validator, doc=doc)


def discrete(name, default, allowed, doc=""):
    return ParameterSpec(name, "discrete", default, allowed=tuple(allowed), doc=doc)


def flag(name, default=False, doc=""):
    return ParameterSpec(name, "flag", default, doc=doc)


def text(name, default="", validator=None, doc=""):
    return ParameterSpec(name, "text", default, validator=validator, doc=doc)


def odd(v) -> str | None:
    return None if int(v) % 2 == 1 else "must be odd"
