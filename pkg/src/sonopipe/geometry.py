"""Transducer arrays and scanline layouts.

Units: positions and depths in millimetres, times in seconds, frequencies in
hertz, speed of sound in metres per second.

Lateral positions are computed as ``A * n / (2 * (L - 1))`` with an integer
numerator ``n``. That keeps mirrored lines bitwise antisymmetric and makes the
lines of a coarse layout an exact subset of a refined one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import ParameterError

logger = logging.getLogger(__name__)

DEFAULT_SPEED_OF_SOUND = 1540.0
DEFAULT_SAMPLE_FREQUENCY = 40e6


class ArrayKind(str, Enum):
    LINEAR = "linear"
    PHASED = "phased"
    MATRIX = "matrix-phased"


@dataclass(frozen=True)
class TransducerGeometry:
    """A regular grid of elements centred on the array origin, in the z = 0 plane.

    Elements are indexed x-fastest: flat index ``j * element_count_x + i``.
    """

    element_count_x: int
    pitch_x: float
    center_frequency: float
    array_kind: ArrayKind = ArrayKind.LINEAR
    element_count_y: int = 1
    pitch_y: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "array_kind", ArrayKind(self.array_kind))
        if self.pitch_y is None:
            object.__setattr__(self, "pitch_y", self.pitch_x)
        if self.element_count_x < 1 or self.element_count_y < 1:
            raise ParameterError("element counts must be positive")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ParameterError("element pitch must be positive")
        if not self.center_frequency > 0:
            raise ParameterError("center_frequency must be positive")
        if self.array_kind != ArrayKind.MATRIX and self.element_count_y != 1:
            raise ParameterError(f"{self.array_kind.value} arrays have a single element row")

    @property
    def element_count(self) -> int:
        return self.element_count_x * self.element_count_y

    @property
    def aperture_x(self) -> float:
        """Distance between the outermost element centres along x."""
        return (self.element_count_x - 1) * self.pitch_x

    @cached_property
    def element_positions(self) -> np.ndarray:
        nx, ny = self.element_count_x, self.element_count_y
        x = (2 * np.arange(nx) - (nx - 1)) * self.pitch_x / 2
        y = (2 * np.arange(ny) - (ny - 1)) * self.pitch_y / 2
        pos = np.zeros((ny, nx, 3))
        pos[..., 0] = x[None, :]
        pos[..., 1] = y[:, None]
        pos = pos.reshape(-1, 3)
        pos.flags.writeable = False
        return pos

    def describe(self) -> dict:
        return {
            "array_kind": self.array_kind.value,
            "element_count_x": self.element_count_x,
            "element_count_y": self.element_count_y,
            "pitch_x": float(self.pitch_x),
            "pitch_y": float(self.pitch_y),
            "center_frequency": float(self.center_frequency),
        }


@dataclass(frozen=True, eq=False)
class Scanline:
    """One receive (or transmit) line.

    ``elements`` lists the geometry indices of the active aperture used by the
    transmit event this line belongs to; ``transmit_delays`` and
    ``transmit_apodization`` are given per entry of ``elements``.
    """

    origin: np.ndarray
    direction: np.ndarray
    transmit_focus_depth: float
    max_depth: float
    transmit_delays: np.ndarray
    transmit_apodization: np.ndarray
    elements: np.ndarray
    event: int = 0

    def __post_init__(self):
        for name in ("origin", "direction", "transmit_delays", "transmit_apodization", "elements"):
            getattr(self, name).flags.writeable = False

    def point_at(self, depth) -> np.ndarray:
        depth = np.asarray(depth, dtype=float)
        return self.origin + depth[..., None] * self.direction


@dataclass(frozen=True, eq=False)
class ScanlineLayout:
    """All receive scanlines of a frame and the transmit events that feed them.

    ``scanlines`` is flat; ``line_shape`` gives its logical shape, ``(lines,)``
    for 2-D layouts and ``(lines_x, lines_y)`` for volumes (flat index
    ``sx * lines_y + sy``).
    """

    geometry: TransducerGeometry
    scanlines: tuple[Scanline, ...]
    transmits: tuple[Scanline, ...]
    line_shape: tuple[int, ...]
    receive_lines_per_transmit: int
    convention: str
    samples_per_line: int
    sample_frequency: float
    speed_of_sound: float
    config: Mapping[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> ArrayKind:
        return self.geometry.array_kind

    @property
    def transmit_count(self) -> int:
        return len(self.transmits)

    @property
    def line_count(self) -> int:
        return len(self.scanlines)

    @property
    def is_3d(self) -> bool:
        return len(self.line_shape) == 2

    @property
    def depth(self) -> float:
        return self.scanlines[0].max_depth

    @property
    def channel_count(self) -> int:
        return len(self.transmits[0].elements)

    @property
    def sample_spacing(self) -> float:
        """Depth increment (mm) between consecutive RF samples."""
        return depth_sample_spacing(self.sample_frequency, self.speed_of_sound)

    @cached_property
    def line_to_event(self) -> np.ndarray:
        arr = np.array([s.event for s in self.scanlines], dtype=np.intp)
        arr.flags.writeable = False
        return arr

    @cached_property
    def lateral_positions(self) -> np.ndarray:
        """Lateral x of every scanline origin (meaningful for linear layouts)."""
        return np.array([s.origin[0] for s in self.scanlines])

    @property
    def line_pitch(self) -> float:
        x = self.lateral_positions
        return float((x[-1] - x[0]) / (len(x) - 1))

    @cached_property
    def steering_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis steering angle grids in radians for phased layouts."""
        return _fan_angles(self.line_shape[0], math.radians(self.config.get("fov_x", 0.0))), _fan_angles(
            self.line_shape[1] if self.is_3d else 1, math.radians(self.config.get("fov_y", 0.0))
        )

    def describe(self) -> dict:
        return {"geometry": self.geometry.describe(), "layout": dict(sorted(self.config.items()))}

    @cached_property
    def layout_hash(self) -> str:
        """SHA-256 of the canonical JSON description of the layout."""
        text = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_debug_json(self) -> str:
        """Element positions, per-event delays and line geometry, for plotting."""
        doc = {
            **self.describe(),
            "layout_hash": self.layout_hash,
            "element_positions_mm": self.geometry.element_positions.tolist(),
            "transmits": [
                {
                    "origin_mm": t.origin.tolist(),
                    "direction": t.direction.tolist(),
                    "elements": t.elements.tolist(),
                    "delays_s": t.transmit_delays.tolist(),
                    "apodization": t.transmit_apodization.tolist(),
                }
                for t in self.transmits
            ],
            "scanlines": [
                {"origin_mm": s.origin.tolist(), "direction": s.direction.tolist(), "event": s.event}
                for s in self.scanlines
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def depth_sample_spacing(sample_frequency: float, speed_of_sound: float) -> float:
    return speed_of_sound * 1e3 / (2.0 * sample_frequency)


def _fan_angles(n: int, fov_rad: float) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return fov_rad * (2 * np.arange(n) - (n - 1)) / (2 * (n - 1))


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(n)
    if kind != "hann":
        raise ParameterError(f"unknown apodization window '{kind}'")
    # Hann without the zero end points, so every active element fires.
    w = np.sin(np.pi * np.arange(1, n + 1) / (n + 1)) ** 2
    return (w + w[::-1]) / 2


def transmit_delays(geom: TransducerGeometry, scanline: Scanline, c: float = DEFAULT_SPEED_OF_SOUND) -> np.ndarray:
    """Per-element firing delays (s) focusing the active aperture on the line's focal point.

    The element farthest from the focus fires first (delay 0), so all wavelets
    reach the focus together.
    """
    if not scanline.transmit_focus_depth > 0:
        raise ParameterError("transmit focus depth must be positive")
    focus = scanline.origin + scanline.transmit_focus_depth * scanline.direction
    pos = geom.element_positions[scanline.elements]
    d = np.sqrt(((pos - focus) ** 2).sum(axis=1))
    return (d.max() - d) * 1e-3 / c


def _receive_samples(depth, samples_per_line, sample_freq, c) -> int:
    # sample k sits at depth k * dz, so the last one must reach ``depth``
    needed = math.ceil(depth / depth_sample_spacing(sample_freq, c) - 1e-9) + 1
    if samples_per_line is None:
        return max(needed, 2)
    if samples_per_line < needed:
        raise ParameterError(
            f"samples_per_line={samples_per_line} covers less than the {depth} mm imaging depth "
            f"(need {needed} at {sample_freq:g} Hz)"
        )
    return int(samples_per_line)


def _build_event(geom, origin, direction, focus_depth, depth, elements, apod_kind, c, event):
    line = Scanline(
        origin=origin,
        direction=direction,
        transmit_focus_depth=focus_depth,
        max_depth=depth,
        transmit_delays=np.zeros(len(elements)),
        transmit_apodization=_window(apod_kind, len(elements)),
        elements=elements,
        event=event,
    )
    delays = transmit_delays(geom, line, c)
    return Scanline(origin, direction, focus_depth, depth, delays, line.transmit_apodization, elements, event)


def _walking_aperture_start(center_num: int, line_den: int, nx: int, active: int) -> int:
    """First element of the ``active``-wide aperture nearest a line position.

    The line sits at element coordinate ``(nx-1) * (center_num + line_den) / (2 * line_den)``.
    Ties round toward the array centre, which keeps mirrored events mirrored.
    """
    centre = Fraction((nx - 1) * (center_num + line_den), 2 * line_den)
    v = centre - Fraction(active - 1, 2)
    mid = Fraction(nx - active, 2)
    lo = math.floor(v)
    frac = v - lo
    if frac == Fraction(1, 2):
        r = lo if v > mid else lo + 1
    else:
        r = lo if frac < Fraction(1, 2) else lo + 1
    return int(min(max(r, 0), nx - active))


def make_linear_layout(
    geom: TransducerGeometry,
    line_count: int,
    multiline: int = 1,
    depth: float = 45.0,
    focus_depth: float = 20.0,
    samples_per_line: int | None = None,
    sample_freq: float = DEFAULT_SAMPLE_FREQUENCY,
    c: float = DEFAULT_SPEED_OF_SOUND,
    *,
    convention: str = "interleaved",
    active_aperture: int | None = None,
    apodization: str = "hann",
) -> ScanlineLayout:
    """Parallel scanlines spread evenly across a linear array.

    ``line_count`` is the number of transmit events. With ``multiline`` M the
    interleaved convention reconstructs ``line_count * M - (M - 1)`` receive
    lines, transmit lines coinciding with every M-th receive line; the block
    convention reconstructs ``line_count * M`` lines, M per transmit.

    ``active_aperture`` limits each event to that many contiguous elements
    centred (as far as the array allows) on its transmit line.
    """
    if geom.array_kind != ArrayKind.LINEAR:
        raise ParameterError("make_linear_layout needs a linear array")
    if line_count < 2:
        raise ParameterError(f"line_count must be at least 2, got {line_count}")
    if multiline < 1:
        raise ParameterError(f"multiline must be at least 1, got {multiline}")
    if not depth > 0:
        raise ParameterError("depth must be positive")
    if convention not in ("interleaved", "block"):
        raise ParameterError(f"unknown multi-line convention '{convention}'")
    if not 1000 <= c <= 2000:
        raise ParameterError(f"speed of sound {c} m/s outside [1000, 2000]")
    nx = geom.element_count_x
    active = nx if active_aperture is None else int(active_aperture)
    if not 1 <= active <= nx:
        raise ParameterError(f"active_aperture must be in [1, {nx}], got {active_aperture}")
    _window(apodization, 1)
    samples = _receive_samples(depth, samples_per_line, sample_freq, c)

    T, M = line_count, multiline
    L = T * M - (M - 1) if convention == "interleaved" else T * M
    den = L - 1
    A = geom.aperture_x

    def lateral(num: int) -> float:
        # num / (2 * den) in units of the aperture, num an integer in [-den, den].
        return A * num / (2 * den)

    z_axis = np.array([0.0, 0.0, 1.0])
    z_axis.flags.writeable = False
    transmits = []
    for j in range(T):
        num = 2 * j * M - den if convention == "interleaved" else 2 * j * M + M - 1 - den
        start = _walking_aperture_start(num, den, nx, active)
        origin = np.array([lateral(num) if den else 0.0, 0.0, 0.0])
        elements = np.arange(start, start + active)
        transmits.append(_build_event(geom, origin, z_axis, focus_depth, depth, elements, apodization, c, j))

    scanlines = []
    for i in range(L):
        j = i // M
        tx = transmits[j]
        origin = np.array([lateral(2 * i - den), 0.0, 0.0])
        scanlines.append(
            Scanline(origin, z_axis, focus_depth, depth, tx.transmit_delays, tx.transmit_apodization, tx.elements, j)
        )

    config = {
        "kind": "linear",
        "lines": T,
        "multiline": M,
        "convention": convention,
        "depth": float(depth),
        "focus_depth": float(focus_depth),
        "samples_per_line": samples,
        "sample_frequency": float(sample_freq),
        "speed_of_sound": float(c),
        "active_aperture": active,
        "apodization": apodization,
    }
    return ScanlineLayout(
        geometry=geom,
        scanlines=tuple(scanlines),
        transmits=tuple(transmits),
        line_shape=(L,),
        receive_lines_per_transmit=M,
        convention=convention,
        samples_per_line=samples,
        sample_frequency=float(sample_freq),
        speed_of_sound=float(c),
        config=config,
    )


def steering_direction(theta_x, theta_y=0.0) -> np.ndarray:
    """Unit vector steered by ``theta_x`` about the y axis, then ``theta_y`` about the x axis."""
    tx = np.asarray(theta_x, dtype=float)
    ty = np.asarray(theta_y, dtype=float)
    d = np.stack([np.sin(tx) * np.ones_like(ty), np.cos(tx) * np.sin(ty), np.cos(tx) * np.cos(ty)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def make_phased_layout(
    geom: TransducerGeometry,
    lines_x: int,
    lines_y: int = 1,
    fov_x: float = 60.0,
    fov_y: float = 0.0,
    depth: float = 70.0,
    focus_depth: float | None = None,
    samples_per_line: int | None = None,
    sample_freq: float = DEFAULT_SAMPLE_FREQUENCY,
    c: float = DEFAULT_SPEED_OF_SOUND,
    *,
    apodization: str = "hann",
) -> ScanlineLayout:
    """A fan of lines from the array centre, angles uniform over each field of view (degrees).

    Every line is its own transmit event using the whole array. ``focus_depth``
    defaults to half the imaging depth.
    """
    if geom.array_kind == ArrayKind.LINEAR:
        raise ParameterError("make_phased_layout needs a phased or matrix-phased array")
    if lines_x < 1 or lines_y < 1:
        raise ParameterError("line counts must be positive")
    for name, fov in (("fov_x", fov_x), ("fov_y", fov_y)):
        if not 0 <= fov < 180:
            raise ParameterError(f"{name} must lie in [0, 180) degrees, got {fov}")
    if geom.array_kind == ArrayKind.PHASED and (lines_y != 1 or fov_y != 0):
        raise ParameterError("2-D phased layouts need lines_y = 1 and fov_y = 0")
    if not depth > 0:
        raise ParameterError("depth must be positive")
    if not 1000 <= c <= 2000:
        raise ParameterError(f"speed of sound {c} m/s outside [1000, 2000]")
    if focus_depth is None:
        focus_depth = depth / 2
    samples = _receive_samples(depth, samples_per_line, sample_freq, c)

    ax = _fan_angles(lines_x, math.radians(fov_x))
    ay = _fan_angles(lines_y, math.radians(fov_y))
    elements = np.arange(geom.element_count)
    origin = np.zeros(3)
    origin.flags.writeable = False
    lines = []
    for sx in range(lines_x):
        for sy in range(lines_y):
            d = steering_direction(ax[sx], ay[sy])
            lines.append(_build_event(geom, origin, d, focus_depth, depth, elements, apodization, c, len(lines)))

    is_3d = geom.array_kind == ArrayKind.MATRIX
    config = {
        "kind": geom.array_kind.value,
        "lines_x": lines_x,
        "lines_y": lines_y,
        "fov_x": float(fov_x),
        "fov_y": float(fov_y),
        "multiline": 1,
        "convention": "interleaved",
        "depth": float(depth),
        "focus_depth": float(focus_depth),
        "samples_per_line": samples,
        "sample_frequency": float(sample_freq),
        "speed_of_sound": float(c),
        "apodization": apodization,
    }
    return ScanlineLayout(
        geometry=geom,
        scanlines=tuple(lines),
        transmits=tuple(lines),
        line_shape=(lines_x, lines_y) if is_3d else (lines_x,),
        receive_lines_per_transmit=1,
        convention="interleaved",
        samples_per_line=samples,
        sample_frequency=float(sample_freq),
        speed_of_sound=float(c),
        config=config,
    )


_GEOMETRY_KEYS = {
    "elements_x": int,
    "elements_y": int,
    "pitch_x": float,
    "pitch_y": float,
    "center_frequency": float,
}
_LINEAR_KEYS = {
    "lines": int,
    "multiline": int,
    "convention": str,
    "depth": float,
    "focus_depth": float,
    "samples_per_line": int,
    "sample_frequency": float,
    "speed_of_sound": float,
    "active_aperture": int,
    "apodization": str,
}
_PHASED_KEYS = {
    "lines_x": int,
    "lines_y": int,
    "fov_x": float,
    "fov_y": float,
    "multiline": int,
    "convention": str,
    "depth": float,
    "focus_depth": float,
    "samples_per_line": int,
    "sample_frequency": float,
    "speed_of_sound": float,
    "apodization": str,
}


def layout_keys(kind: str) -> set[str]:
    """Attribute names accepted when describing a layout of ``kind`` as a flat mapping."""
    keys = _LINEAR_KEYS if kind == "linear" else _PHASED_KEYS
    return {"kind", *_GEOMETRY_KEYS, *keys}


def layout_from_config(cfg: Mapping[str, Any]) -> ScanlineLayout:
    """Build a layout from a flat mapping such as the attributes of a ``<layout>`` element.

    Values may be strings. Recognised keys: ``kind``, ``elements_x``,
    ``elements_y``, ``pitch_x``, ``pitch_y``, ``center_frequency`` and the
    keyword names of :func:`make_linear_layout` / :func:`make_phased_layout`
    (``lines``, ``lines_x``, ``fov_x``, ``depth``, ...).
    """
    kind = str(cfg.get("kind", "linear"))
    try:
        ArrayKind(kind)
    except ValueError:
        raise ParameterError(f"unknown array kind '{kind}'") from None
    unknown = set(cfg) - layout_keys(kind)
    if unknown:
        raise ParameterError(f"unknown layout attribute(s): {', '.join(sorted(unknown))}")
    spec = {**_GEOMETRY_KEYS, **(_LINEAR_KEYS if kind == "linear" else _PHASED_KEYS)}
    vals = {}
    for k, v in cfg.items():
        if k == "kind":
            continue
        try:
            conv = spec[k]
            vals[k] = conv(float(v)) if conv is int and isinstance(v, str) and "." in v else conv(v)
        except (TypeError, ValueError):
            raise ParameterError(f"layout attribute '{k}' has invalid value {v!r}") from None
    for req in ("elements_x", "pitch_x", "center_frequency"):
        if req not in vals:
            raise ParameterError(f"layout is missing required attribute '{req}'")
    geom = TransducerGeometry(
        element_count_x=vals.pop("elements_x"),
        pitch_x=vals.pop("pitch_x"),
        center_frequency=vals.pop("center_frequency"),
        array_kind=ArrayKind(kind),
        element_count_y=vals.pop("elements_y", 1),
        pitch_y=vals.pop("pitch_y", None),
    )
    common = dict(
        samples_per_line=vals.pop("samples_per_line", None),
        sample_freq=vals.pop("sample_frequency", DEFAULT_SAMPLE_FREQUENCY),
        c=vals.pop("speed_of_sound", DEFAULT_SPEED_OF_SOUND),
    )
    if kind == "linear":
        if "lines" not in vals:
            raise ParameterError("linear layout is missing required attribute 'lines'")
        return make_linear_layout(
            geom,
            vals.pop("lines"),
            vals.pop("multiline", 1),
            vals.pop("depth", 45.0),
            vals.pop("focus_depth", 20.0),
            **common,
            **vals,
        )
    if vals.pop("multiline", 1) != 1:
        raise ParameterError("phased layouts support multiline = 1 only")
    vals.pop("convention", None)
    if "lines_x" not in vals:
        raise ParameterError("phased layout is missing required attribute 'lines_x'")
    return make_phased_layout(
        geom,
        vals.pop("lines_x"),
        vals.pop("lines_y", 1),
        vals.pop("fov_x", 60.0),
        vals.pop("fov_y", 0.0),
        vals.pop("depth", 70.0),
        vals.pop("focus_depth", None),
        **common,
        **vals,
    )


def layout_to_config(layout: ScanlineLayout) -> dict:
    """Inverse of :func:`layout_from_config`."""
    g = layout.geometry
    cfg = {
        "kind": g.array_kind.value,
        "elements_x": g.element_count_x,
        "pitch_x": g.pitch_x,
        "center_frequency": g.center_frequency,
    }
    if g.array_kind == ArrayKind.MATRIX:
        cfg["elements_y"] = g.element_count_y
        cfg["pitch_y"] = g.pitch_y
    for k, v in layout.config.items():
        if k != "kind":
            cfg[k] = v
    return cfg
