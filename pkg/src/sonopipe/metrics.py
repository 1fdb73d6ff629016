"""Point-spread-function measurement and benchmark statistics."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .beamform import BeamformParams, beamform_frame
from .envelope import hilbert_envelope
from .errors import InsufficientSamplesError, ParameterError
from .frames import BModeImage, EnvelopeFrame
from .geometry import ArrayKind, ScanlineLayout, depth_sample_spacing
from .synth import PulseModel, ScattererField, synthesize, wire_phantom

logger = logging.getLogger(__name__)

PSF_COLUMNS = (
    "depth_mm",
    "lateral_fwhm_mm",
    "axial_fwhm_mm",
    "flagged",
    "peak_lateral_mm",
    "peak_depth_mm",
    "display_dr_db",
    "measurement_domain",
)
MIN_BENCH_FRAMES = 30
BENCH_NODES = (
    ("beamformer", "beamformer"),
    ("envelope", "envelope"),
    ("log_comp", "log-compressor"),
    ("scan_conv", "scan-converter"),
)


def fwhm_index(profile: np.ndarray, peak: int) -> float:
    """Full width at half maximum of ``profile`` around ``peak``, in samples.

    Walks outward from the peak to the first sample at or below half the peak
    value on each side and interpolates the crossing linearly. Returns NaN if
    either side never drops to half maximum.
    """
    a = np.asarray(profile, dtype=np.float64)
    top = a[peak]
    if not top > 0:
        return math.nan
    half = top / 2

    def crossing(step):
        j = peak
        while 0 <= j + step < len(a):
            j += step
            if a[j] <= half:
                prev = a[j - step]
                return (j - step) + step * (prev - half) / (prev - a[j])
        return math.nan

    right, left = crossing(1), crossing(-1)
    return right - left


@dataclass(frozen=True)
class PsfEntry:
    depth_mm: float
    lateral_fwhm_mm: float
    axial_fwhm_mm: float
    peak_lateral_mm: float
    peak_depth_mm: float
    lateral_fwhm_px: float = math.nan
    axial_fwhm_px: float = math.nan
    display_dr_db: float = 50.0
    measurement_domain: str = "amplitude"

    @property
    def flagged(self) -> bool:
        return not (np.isfinite(self.lateral_fwhm_mm) and np.isfinite(self.axial_fwhm_mm))

    def row(self) -> dict:
        return {
            "depth_mm": f"{self.depth_mm:g}",
            "lateral_fwhm_mm": f"{self.lateral_fwhm_mm:.6f}",
            "axial_fwhm_mm": f"{self.axial_fwhm_mm:.6f}",
            "flagged": str(int(self.flagged)),
            "peak_lateral_mm": f"{self.peak_lateral_mm:.6f}",
            "peak_depth_mm": f"{self.peak_depth_mm:.6f}",
            "display_dr_db": f"{self.display_dr_db:g}",
            "measurement_domain": self.measurement_domain,
        }


@dataclass(frozen=True)
class PsfReport:
    entries: tuple[PsfEntry, ...]

    def __len__(self):
        return len(self.entries)

    @property
    def valid(self) -> tuple[PsfEntry, ...]:
        """Entries usable in aggregates (flagged ones excluded)."""
        return tuple(e for e in self.entries if not e.flagged)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries], dtype=float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=PSF_COLUMNS, lineterminator="\n")
        w.writeheader()
        for e in self.entries:
            w.writerow(e.row())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _image_axes(image, layout: ScanlineLayout | None):
    """Amplitudes as ``[lateral, depth]`` plus origin and spacing per axis."""
    if isinstance(image, BModeImage):
        if image.ndim != 2:
            # lateral x profile through the central elevation plane
            data = image.intensities[:, image.intensities.shape[1] // 2, :]
            ox, oz = image.origin[0], image.origin[2]
        else:
            data = image.intensities
            ox, oz = image.origin
        return np.asarray(data, np.float64).T, (ox, image.spacing), (oz, image.spacing)
    if isinstance(image, EnvelopeFrame):
        if layout is None or layout.kind != ArrayKind.LINEAR or image.samples.ndim != 2:
            raise ParameterError("measuring a PSF on scanline data needs the linear layout that produced it")
        dz = depth_sample_spacing(image.sample_frequency, layout.speed_of_sound)
        return np.asarray(image.samples, np.float64), (layout.lateral_positions[0], layout.line_pitch), (0.0, dz)
    raise ParameterError(f"cannot measure a PSF on {type(image).__name__}")


def measure_psf(
    image: EnvelopeFrame | BModeImage,
    expected_depth: float,
    *,
    layout: ScanlineLayout | None = None,
    search_mm: float = 2.0,
    display_dr_db: float = 50.0,
) -> PsfEntry:
    """Lateral and axial FWHM of the brightest point within ``search_mm`` of ``expected_depth``.

    ``image`` holds amplitudes before log compression. Scanline data needs the
    (linear) ``layout`` to convert line and sample indices to millimetres. An
    entry whose profile never falls to half maximum on one side is returned
    with NaN widths and reports ``flagged``.
    """
    data, (x0, dx), (z0, dz) = _image_axes(image, layout)
    depths = z0 + np.arange(data.shape[1]) * dz
    rows = np.flatnonzero(np.abs(depths - expected_depth) <= search_mm)
    if len(rows) == 0:
        return PsfEntry(expected_depth, math.nan, math.nan, math.nan, math.nan, display_dr_db=display_dr_db)
    window = data[:, rows[0] : rows[-1] + 1]
    li, ki = np.unravel_index(int(np.argmax(window)), window.shape)
    ki += rows[0]
    lat_px = fwhm_index(data[:, ki], li)
    ax_px = fwhm_index(data[li, :], ki)
    return PsfEntry(
        depth_mm=float(expected_depth),
        lateral_fwhm_mm=lat_px * dx,
        axial_fwhm_mm=ax_px * dz,
        peak_lateral_mm=x0 + li * dx,
        peak_depth_mm=z0 + ki * dz,
        lateral_fwhm_px=lat_px,
        axial_fwhm_px=ax_px,
        display_dr_db=display_dr_db,
    )


@dataclass(frozen=True)
class PsfSetup:
    """Acquisition and reconstruction chain used by :func:`fwhm_sweep`.

    ``wire_per_frame`` images each depth in its own frame, which keeps the
    sidelobes of neighbouring wires out of the measurement.
    """

    layout: ScanlineLayout
    beamform: BeamformParams = field(default_factory=BeamformParams)
    pulse: PulseModel | None = None
    lateral: float = 0.0
    wire_per_frame: bool = True
    display_dr_db: float = 50.0


def fwhm_sweep(depths: Iterable[float], setup: PsfSetup) -> PsfReport:
    """Synthesize wire targets, beamform, detect with the Hilbert envelope, measure."""
    depths = [float(d) for d in depths]
    layout = setup.layout
    if any(not 0 < d < layout.depth for d in depths):
        raise ParameterError(f"wire depths must lie inside (0, {layout.depth}) mm")

    def envelope_of(field: ScattererField):
        raw = synthesize(field, layout, pulse=setup.pulse)
        return hilbert_envelope(beamform_frame(raw, layout, setup.beamform))

    def measure(env, d):
        return measure_psf(env, d, layout=layout, display_dr_db=setup.display_dr_db)

    if setup.wire_per_frame:
        entries = [measure(envelope_of(wire_phantom([d], setup.lateral)), d) for d in depths]
    else:
        env = envelope_of(wire_phantom(depths, setup.lateral)) if depths else None
        entries = [measure(env, d) for d in depths]
    for e in entries:
        if e.flagged:
            logger.warning("PSF at %g mm flagged: half-maximum crossing missing", e.depth_mm)
    return PsfReport(tuple(entries))


@dataclass(frozen=True)
class BenchRow:
    config: str
    frames: int
    node_ms: Mapping[str, tuple[float, float]]
    total_ms: tuple[float, float]
    node_sum_mean_ms: float
    wall_clock_s: float


def bench_columns() -> tuple[str, ...]:
    cols = ["config", "frames"]
    for name, _ in BENCH_NODES:
        cols += [f"{name}_mean_ms", f"{name}_std_ms"]
    cols += ["total_mean_ms", "total_std_ms", "node_sum_mean_ms", "wall_clock_s"]
    return tuple(cols)


def _mean_std_ms(samples: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(samples, dtype=np.float64) * 1e3
    return float(a.mean()), float(a.std(ddof=1))


def bench_stats(reports: Mapping[str, object], warmup: int = 0, min_frames: int = MIN_BENCH_FRAMES) -> list[BenchRow]:
    """Mean and sample standard deviation (ms) per node kind and configuration.

    ``reports`` maps a configuration label such as ``"(64 / 1)"`` to a run
    report. The first ``warmup`` frames of every node are discarded. Node kinds
    missing from a pipeline are reported as NaN. ``total`` is the end-to-end
    latency from source emission to sink arrival.

    Raises
    ------
    InsufficientSamplesError
        If any node has fewer than ``min_frames`` timed frames after warm-up.
    """
    rows = []
    for label, rep in reports.items():
        node_ms = {}
        counts = []
        for name, kind in BENCH_NODES:
            timings = [s for s in rep.nodes.values() if s.kind == kind]
            if not timings:
                node_ms[name] = (math.nan, math.nan)
                continue
            samples = np.sum([np.asarray(s.durations[warmup:]) for s in timings], axis=0)
            if len(samples) < min_frames:
                raise InsufficientSamplesError(f"{label} {kind} timings", min_frames, len(samples))
            counts.append(len(samples))
            node_ms[name] = _mean_std_ms(samples)
        latencies = rep.latencies[warmup:]
        if len(latencies) < min_frames:
            raise InsufficientSamplesError(f"{label} end-to-end latencies", min_frames, len(latencies))
        rows.append(
            BenchRow(
                config=label,
                frames=min(counts) if counts else len(latencies),
                node_ms=node_ms,
                total_ms=_mean_std_ms(latencies),
                node_sum_mean_ms=float(np.nansum([m for m, _ in node_ms.values()])),
                wall_clock_s=float(rep.wall_clock),
            )
        )
    return rows


def bench_csv(rows: Sequence[BenchRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(bench_columns())
    for r in rows:
        vals = [r.config, r.frames]
        for name, _ in BENCH_NODES:
            vals += [f"{v:.4f}" for v in r.node_ms[name]]
        vals += [f"{r.total_ms[0]:.4f}", f"{r.total_ms[1]:.4f}", f"{r.node_sum_mean_ms:.4f}", f"{r.wall_clock_s:.4f}"]
        w.writerow(vals)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
