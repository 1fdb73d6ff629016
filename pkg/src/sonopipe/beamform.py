"""Delay-and-sum receive beamforming with dynamic receive focusing.

For output sample ``k`` of scanline ``s`` the focal point is
``p = origin + z_k * direction`` with ``z_k = k * c / (2 fs)``. Element ``e``
contributes its channel signal at time ``(z_k + |p - pos_e|) / c``; contributions
are weighted by a receive window spanning ``z_k / f_number`` around the line and
the sum is divided by the number of elements with non-zero weight.

Time zero of every channel record is the instant the transmit wave leaves the
origin of the event's transmit line.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import LayoutMismatchError, ParameterError, StructuralError
from .frames import RawChannelFrame, RfFrame
from .geometry import ScanlineLayout

logger = logging.getLogger(__name__)

WINDOWS = ("rectangular", "hann", "hamming")
INTERPOLATIONS = ("nearest", "linear")


@dataclass(frozen=True)
class BeamformParams:
    """Receive beamforming settings.

    ``fixed_aperture`` replaces the depth-dependent aperture with the whole
    active aperture of the event, windowed across its elements.
    """

    receive_window: str = "hann"
    f_number: float = 1.0
    interpolation: str = "linear"
    speed_of_sound: float = 1540.0
    fixed_aperture: bool = False

    def __post_init__(self):
        if self.receive_window not in WINDOWS:
            raise ParameterError(f"receive_window must be one of {WINDOWS}, got '{self.receive_window}'")
        if self.interpolation not in INTERPOLATIONS:
            raise ParameterError(f"interpolation must be one of {INTERPOLATIONS}, got '{self.interpolation}'")
        if not self.f_number > 0:
            raise ParameterError(f"f_number must be positive, got {self.f_number}")
        if not 1000 <= self.speed_of_sound <= 2000:
            raise ParameterError(f"speed_of_sound must lie in [1000, 2000] m/s, got {self.speed_of_sound}")


def multiline_assign(layout: ScanlineLayout, scanline_index: int) -> int:
    """Transmit event whose channel data reconstructs receive line ``scanline_index``."""
    if not 0 <= scanline_index < layout.line_count:
        raise IndexError(f"scanline index {scanline_index} outside [0, {layout.line_count})")
    return int(layout.line_to_event[scanline_index])


def window_weights(window: str, offset: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Receive apodization for lateral ``offset`` within an aperture of full ``width``.

    Zero outside ``|offset| <= width / 2`` and wherever ``width`` is not positive.
    """
    offset = np.abs(offset)
    half = width / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = (offset <= half) & (width > 0)
        if window == "rectangular":
            w = np.ones(np.broadcast(offset, width).shape)
        else:
            a = 0.5 if window == "hann" else 0.54
            w = a + (1 - a) * np.cos(2 * np.pi * offset / width)
    return np.where(inside, w, 0.0)


def fixed_weights(window: str, n: int) -> np.ndarray:
    """Window across ``n`` active elements, without zero end points."""
    if window == "rectangular":
        return np.ones(n)
    a = 0.5 if window == "hann" else 0.54
    w = a - (1 - a) * np.cos(2 * np.pi * np.arange(1, n + 1) / (n + 1))
    return (w + w[::-1]) / 2


_WINDOW_CODE = {"rectangular": 0, "hann": 1, "hamming": 2}


@numba.njit(cache=True, nogil=True)
def _das_lines(
    data, elem_pos, event_elems, origins, directions, events, line_start, line_stop,
    c_mm, fs, f_number, window, fixed_w, use_fixed, nearest, out,
):
    n_samples = data.shape[2]
    n_ch = event_elems.shape[1]
    n_depth = out.shape[1]
    alpha = 0.5 if window == 1 else 0.54
    samples_per_mm = fs / c_mm
    offsets = np.empty(n_ch)
    for s in range(line_start, line_stop):
        ev = events[s]
        ox, oy, oz = origins[s, 0], origins[s, 1], origins[s, 2]
        ux, uy, uz = directions[s, 0], directions[s, 1], directions[s, 2]
        for c in range(n_ch):
            e = event_elems[ev, c]
            offsets[c] = math.hypot(elem_pos[e, 0] - ox, elem_pos[e, 1] - oy)
        for k in range(n_depth):
            z = k * c_mm / (2.0 * fs)
            px = ox + z * ux
            py = oy + z * uy
            pz = oz + z * uz
            width = z / f_number
            half = width / 2
            acc = np.float32(0.0)
            count = 0
            for c in range(n_ch):
                if use_fixed:
                    wf = np.float32(fixed_w[c])
                else:
                    off = offsets[c]
                    if width <= 0.0 or off > half:
                        continue
                    # aperture membership is decided in float64 so the element count
                    # (the normalisation) does not flip on rounding at the edge
                    w = 1.0 if window == 0 else alpha + (1.0 - alpha) * math.cos(2.0 * math.pi * off / width)
                    if w == 0.0:
                        continue
                    wf = np.float32(w)
                if wf == 0:
                    continue
                count += 1
                e = event_elems[ev, c]
                dist = np.sqrt((px - elem_pos[e, 0]) ** 2 + (py - elem_pos[e, 1]) ** 2 + (pz - elem_pos[e, 2]) ** 2)
                tau = (z + dist) * samples_per_mm
                if nearest:
                    j = int(np.floor(tau + 0.5))
                    if j < 0 or j >= n_samples:
                        continue
                    val = data[ev, c, j]
                else:
                    fl = np.floor(tau)
                    i0 = int(fl)
                    if i0 < -1 or i0 >= n_samples:
                        continue
                    f = np.float32(tau - fl)
                    a = data[ev, c, i0] if i0 >= 0 else np.float32(0.0)
                    b = data[ev, c, i0 + 1] if i0 + 1 < n_samples else np.float32(0.0)
                    val = a + f * (b - a)
                acc += wf * val
            out[s, k] = acc / np.float32(count) if count > 0 else np.float32(0.0)


def beamform_frame(
    raw: RawChannelFrame,
    layout: ScanlineLayout,
    params: BeamformParams | None = None,
    *,
    threads: int = 1,
) -> RfFrame:
    """Delay-and-sum every scanline of ``layout`` from one frame of channel data.

    The output has one depth sample per input time sample and the layout's
    ``line_shape``; time indices outside the record contribute zero. With
    ``threads > 1`` lines are split across worker threads; each output cell is
    still reduced in element order, so the result does not depend on the
    thread count.
    """
    params = params or BeamformParams()
    if raw.layout_ref != layout.layout_hash:
        raise LayoutMismatchError(
            f"frame was acquired with layout {raw.layout_ref[:12]}, beamforming with {layout.layout_hash[:12]}"
        )
    if raw.event_count != layout.transmit_count:
        raise StructuralError(
            f"frame has {raw.event_count} transmit events, layout needs {layout.transmit_count}"
        )
    if raw.channel_count != layout.channel_count:
        raise StructuralError(f"frame has {raw.channel_count} channels, layout aperture is {layout.channel_count}")
    events = np.ascontiguousarray(layout.line_to_event, dtype=np.int64)
    if events.size and (events.min() < 0 or events.max() >= raw.event_count):
        raise StructuralError("layout refers to a transmit event missing from the frame")

    n_s = raw.samples_per_event
    fs = raw.sample_frequency
    c_mm = params.speed_of_sound * 1e3
    data = raw.samples.astype(np.float32)
    event_elems = np.ascontiguousarray(np.stack([t.elements for t in layout.transmits]), dtype=np.int64)
    origins = np.ascontiguousarray([s.origin for s in layout.scanlines], dtype=np.float64)
    directions = np.ascontiguousarray([s.direction for s in layout.scanlines], dtype=np.float64)
    fixed_w = fixed_weights(params.receive_window, raw.channel_count)
    out = np.zeros((layout.line_count, n_s), dtype=np.float32)

    def run(lo, hi):
        _das_lines(
            data, np.ascontiguousarray(layout.geometry.element_positions), event_elems, origins, directions,
            events, lo, hi, c_mm, fs, float(params.f_number),
            _WINDOW_CODE[params.receive_window], fixed_w, bool(params.fixed_aperture),
            params.interpolation == "nearest", out,
        )

    n_lines = layout.line_count
    if threads <= 1 or n_lines < 2:
        run(0, n_lines)
    else:
        bounds = np.linspace(0, n_lines, min(threads, n_lines) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run(*b), zip(bounds[:-1], bounds[1:])))

    return RfFrame(
        samples=out.reshape(layout.line_shape + (n_s,)),
        sample_frequency=fs,
        layout_ref=raw.layout_ref,
        timestamp=raw.timestamp,
        meta=raw.meta,
    )
