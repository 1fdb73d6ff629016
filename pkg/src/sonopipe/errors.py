"""Exception hierarchy.

Configuration problems (bad parameters, malformed pipeline XML) derive from
:class:`ConfigError`; everything that goes wrong while data is flowing derives
from the other branches. The CLI maps the first group to exit code 2 and the
rest to exit code 3.
"""

from __future__ import annotations


class SonoError(Exception):
    """Base class for all package errors."""


class ConfigError(SonoError):
    """Invalid configuration supplied by the user."""


class ParameterError(ConfigError, ValueError):
    """A parameter value lies outside its declared domain."""


class PipelineConfigError(ConfigError):
    """Pipeline construction failed; carries the offending node and XML line."""

    def __init__(self, message: str, node_id: str | None = None, line: int | None = None):
        self.node_id = node_id
        self.line = line
        where = []
        if node_id is not None:
            where.append(f"node '{node_id}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class StructuralError(SonoError, ValueError):
    """Frame, layout or table dimensions do not fit together."""


class LayoutMismatchError(StructuralError):
    """Data was produced with a different scanline layout than the one supplied."""


class FormatError(SonoError):
    """A file could not be decoded."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        self.path = path
        self.offset = offset
        parts = []
        if path is not None:
            parts.append(str(path))
        if offset is not None:
            parts.append(f"byte {offset}")
        prefix = f"{': '.join(parts)}: " if parts else ""
        super().__init__(prefix + message)


class ResourceError(SonoError):
    """An operation would exceed its configured memory budget."""

    def __init__(self, message: str, required_bytes: int, budget_bytes: int):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(f"{message}: requires {required_bytes} bytes, budget is {budget_bytes} bytes")


class PipelineRuntimeError(SonoError):
    """A node failed while the graph was running."""

    def __init__(self, node_id: str, timestamp: int | None, cause: BaseException):
        self.node_id = node_id
        self.timestamp = timestamp
        self.cause = cause
        super().__init__(f"node '{node_id}' failed on frame with timestamp {timestamp}: {cause!r}")


class InsufficientSamplesError(SonoError, ValueError):
    def __init__(self, what: str, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"{what}: need at least {required} timed frames, got {available}")
