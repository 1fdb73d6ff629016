"""Envelope detection.

:func:`iq_demodulate` is the real-time path: mix down by the band centre,
low-pass with a Hamming-windowed sinc, decimate, take twice the magnitude.
:func:`hilbert_envelope` computes the analytic-signal magnitude with the DFT
and serves as the reference. :func:`compound` averages several IQ bands.

All functions work along the last (depth) axis and accept 2-D or 3-D frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ParameterError
from .frames import EnvelopeFrame, RfFrame

DEFAULT_FILTER_LENGTH = 65
DEFAULT_FRACTIONAL_BANDWIDTH = 0.6


@dataclass(frozen=True)
class Band:
    center: float
    bandwidth: float
    weight: float = 1.0


def _check_band(center: float, bandwidth: float, fs: float):
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
    lo, hi = center - bandwidth / 2, center + bandwidth / 2
    if not (lo > 0 and hi < fs / 2):
        raise ParameterError(
            f"band {center:g} Hz +- {bandwidth / 2:g} Hz must lie strictly inside (0, {fs / 2:g}) Hz"
        )


def _check_taps(filter_length: int):
    if int(filter_length) != filter_length or filter_length < 1 or filter_length % 2 == 0:
        raise ParameterError(f"filter_length must be a positive odd integer, got {filter_length}")


def _check_decimation(decimation: int):
    if int(decimation) != decimation or decimation < 1:
        raise ParameterError(f"decimation must be an integer >= 1, got {decimation}")


@dataclass(frozen=True)
class BandpassBank:
    """Sub-bands for frequency compounding; weights must sum to one."""

    bands: tuple[Band, ...]
    filter_length: int = DEFAULT_FILTER_LENGTH
    decimation: int = 1

    def __post_init__(self):
        bands = tuple(b if isinstance(b, Band) else Band(*b) for b in self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ParameterError("a bandpass bank needs at least one band")
        if any(b.weight < 0 for b in bands):
            raise ParameterError("band weights must be nonnegative")
        total = sum(b.weight for b in bands)
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"band weights must sum to 1, got {total!r}")
        _check_taps(self.filter_length)
        _check_decimation(self.decimation)

    def validate(self, fs: float):
        for b in self.bands:
            _check_band(b.center, b.bandwidth, fs)


def default_bank(center_frequency: float, fractional_bandwidth: float = DEFAULT_FRACTIONAL_BANDWIDTH, **kw) -> BandpassBank:
    return BandpassBank((Band(center_frequency, fractional_bandwidth * center_frequency, 1.0),), **kw)


def lowpass_taps(cutoff: float, fs: float, filter_length: int) -> np.ndarray:
    """Hamming-windowed sinc with unit DC gain."""
    return signal.firwin(filter_length, cutoff, window="hamming", fs=fs)


def iq_envelope_array(
    x: np.ndarray,
    fs: float,
    center: float,
    bandwidth: float,
    filter_length: int = DEFAULT_FILTER_LENGTH,
    decimation: int = 1,
) -> np.ndarray:
    """IQ envelope of ``x`` along its last axis; output has ``n // decimation`` samples.

    Symmetric taps applied in 'same' mode give zero phase, so output sample
    ``m`` lines up with input sample ``m * decimation``. The first and last
    ``filter_length // 2`` samples see zero padding.
    """
    _check_band(center, bandwidth, fs)
    _check_taps(filter_length)
    _check_decimation(decimation)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    phase = np.exp(-2j * np.pi * center / fs * np.arange(n))
    base = x * phase
    h = lowpass_taps(bandwidth / 2, fs, filter_length)
    h = h.reshape((1,) * (x.ndim - 1) + (-1,))
    lp = signal.oaconvolve(base, h, mode="same", axes=-1)
    keep = (n // decimation) * decimation
    lp = lp[..., :keep:decimation]
    return (2.0 * np.abs(lp)).astype(np.float32)


def hilbert_envelope_array(x: np.ndarray) -> np.ndarray:
    """Magnitude of the DFT analytic signal along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ParameterError("hilbert envelope needs at least 2 samples per line")
    spec = np.fft.fft(x, axis=-1)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    analytic = np.fft.ifft(spec * h, axis=-1)
    return np.abs(analytic).astype(np.float32)


def _frame(rf: RfFrame, samples: np.ndarray, fs: float) -> EnvelopeFrame:
    return EnvelopeFrame(samples, fs, rf.layout_ref, rf.timestamp, rf.meta)


def iq_demodulate(
    rf: RfFrame,
    band: tuple[float, float],
    filter_length: int = DEFAULT_FILTER_LENGTH,
    decimation: int = 1,
) -> EnvelopeFrame:
    center, bandwidth = band[0], band[1]
    env = iq_envelope_array(rf.samples, rf.sample_frequency, center, bandwidth, filter_length, decimation)
    return _frame(rf, env, rf.sample_frequency / decimation)


def hilbert_envelope(rf: RfFrame) -> EnvelopeFrame:
    return _frame(rf, hilbert_envelope_array(rf.samples), rf.sample_frequency)


def compound(rf: RfFrame, bank: BandpassBank) -> EnvelopeFrame:
    """Weighted sum of the IQ envelopes of every band in ``bank``."""
    bank.validate(rf.sample_frequency)
    acc = None
    for b in bank.bands:
        env = iq_envelope_array(rf.samples, rf.sample_frequency, b.center, b.bandwidth, bank.filter_length, bank.decimation)
        term = env if b.weight == 1.0 else (np.float32(b.weight) * env)
        acc = term if acc is None else acc + term
    return _frame(rf, acc.astype(np.float32, copy=False), rf.sample_frequency / bank.decimation)
