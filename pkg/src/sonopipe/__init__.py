"""Software-defined ultrasound processing from raw channel data to B-mode images."""

from .beamform import BeamformParams, beamform_frame, multiline_assign
from .compress import CompressionParams, log_compress
from .envelope import Band, BandpassBank, compound, hilbert_envelope, iq_demodulate
from .frames import BModeImage, EnvelopeFrame, RawChannelFrame, RfFrame
from .geometry import (
    ArrayKind,
    Scanline,
    ScanlineLayout,
    TransducerGeometry,
    make_linear_layout,
    make_phased_layout,
    transmit_delays,
)
from .metrics import PsfReport, PsfSetup, bench_stats, fwhm_sweep, measure_psf
from .scanconvert import ConversionTable, build_table, convert
from .synth import PulseModel, ScattererField, synthesize, wire_phantom

__version__ = "0.1.0"

__all__ = [
    "BeamformParams",
    "beamform_frame",
    "multiline_assign",
    "CompressionParams",
    "log_compress",
    "Band",
    "BandpassBank",
    "compound",
    "hilbert_envelope",
    "iq_demodulate",
    "BModeImage",
    "EnvelopeFrame",
    "RawChannelFrame",
    "RfFrame",
    "ArrayKind",
    "Scanline",
    "ScanlineLayout",
    "TransducerGeometry",
    "make_linear_layout",
    "make_phased_layout",
    "transmit_delays",
    "PsfReport",
    "PsfSetup",
    "bench_stats",
    "fwhm_sweep",
    "measure_psf",
    "ConversionTable",
    "build_table",
    "convert",
    "PulseModel",
    "ScattererField",
    "synthesize",
    "wire_phantom",
]
