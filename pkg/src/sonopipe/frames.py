"""Frame containers passed between processing stages.

Frames are immutable: their arrays are flagged read-only on construction so a
single payload can be shared by every consumer of a graph edge. Stages never
modify an input frame; they allocate a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from .errors import StructuralError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _freeze_meta(meta) -> Mapping[str, Any]:
    if isinstance(meta, MappingProxyType):
        return meta
    return MappingProxyType(dict(meta))


@dataclass(frozen=True, eq=False)
class RawChannelFrame:
    """Digitized per-channel echoes for every transmit event of one frame.

    ``samples`` has shape ``(events, channels, time_samples)`` and dtype int16.
    """

    samples: np.ndarray
    sample_frequency: float
    layout_ref: str
    timestamp: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        s = self.samples
        if not isinstance(s, np.ndarray) or s.ndim != 3:
            raise StructuralError("raw channel samples must be a 3-D array (events, channels, samples)")
        if s.dtype != np.int16:
            raise StructuralError(f"raw channel samples must be int16, got {s.dtype}")
        if self.sample_frequency <= 0:
            raise StructuralError("sample_frequency must be positive")
        _freeze(s)
        object.__setattr__(self, "meta", _freeze_meta(self.meta))

    @property
    def event_count(self) -> int:
        return self.samples.shape[0]

    @property
    def channel_count(self) -> int:
        return self.samples.shape[1]

    @property
    def samples_per_event(self) -> int:
        return self.samples.shape[2]


@dataclass(frozen=True, eq=False)
class RfFrame:
    """Beamformed RF data, shape ``line_shape + (depth_samples,)`` in float32."""

    samples: np.ndarray
    sample_frequency: float
    layout_ref: str
    timestamp: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim not in (2, 3):
            raise StructuralError("RF samples must be 2-D (lines, depth) or 3-D (lines_x, lines_y, depth)")
        _freeze(self.samples)
        object.__setattr__(self, "meta", _freeze_meta(self.meta))

    @property
    def line_shape(self) -> tuple[int, ...]:
        return self.samples.shape[:-1]

    @property
    def samples_per_line(self) -> int:
        return self.samples.shape[-1]


@dataclass(frozen=True, eq=False)
class EnvelopeFrame:
    """Detected amplitudes (or, after log compression, display intensities).

    Same axis layout as :class:`RfFrame`. ``sample_frequency`` reflects any
    decimation applied during detection.
    """

    samples: np.ndarray
    sample_frequency: float
    layout_ref: str
    timestamp: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim not in (2, 3):
            raise StructuralError("envelope samples must be 2-D or 3-D")
        _freeze(self.samples)
        object.__setattr__(self, "meta", _freeze_meta(self.meta))

    @property
    def line_shape(self) -> tuple[int, ...]:
        return self.samples.shape[:-1]

    @property
    def samples_per_line(self) -> int:
        return self.samples.shape[-1]


@dataclass(frozen=True, eq=False)
class BModeImage:
    """Scan-converted image on a regular isotropic grid.

    ``intensities`` is indexed ``[z, x]`` (2-D) or ``[z, y, x]`` (3-D), so the
    fastest-varying axis is lateral x, as in MetaImage files. ``origin`` is the
    physical position in millimetres of the first pixel, listed in physical
    axis order ``(x, z)`` or ``(x, y, z)``.
    """

    intensities: np.ndarray
    spacing: float
    origin: tuple[float, ...]
    mask: np.ndarray | None = None
    timestamp: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.intensities.ndim not in (2, 3):
            raise StructuralError("B-mode intensities must be 2-D or 3-D")
        if not self.spacing > 0:
            raise StructuralError("B-mode spacing must be positive")
        if len(self.origin) != self.intensities.ndim:
            raise StructuralError("origin must have one entry per image axis")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(self.intensities.shape, dtype=bool))
        elif self.mask.shape != self.intensities.shape:
            raise StructuralError("mask shape must match intensities")
        _freeze(self.intensities)
        _freeze(self.mask)
        object.__setattr__(self, "meta", _freeze_meta(self.meta))

    @property
    def ndim(self) -> int:
        return self.intensities.ndim

    def axis_coordinates(self, axis: str) -> np.ndarray:
        """Physical coordinates (mm) of the pixel centres along ``'x'``, ``'y'`` or ``'z'``."""
        names = ("x", "z") if self.ndim == 2 else ("x", "y", "z")
        k = names.index(axis)
        n = self.intensities.shape[self.ndim - 1 - k]
        return self.origin[k] + np.arange(n) * self.spacing


def with_meta(meta: Mapping[str, Any], node_id: str, value) -> dict:
    out = dict(meta)
    out[node_id] = value
    return out
