"""Log compression of envelope amplitudes to display intensities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .frames import EnvelopeFrame

REFERENCES = ("frame-max", "fixed")
OUTPUT_DEPTHS = ("unit-float", "8-bit")


@dataclass(frozen=True)
class CompressionParams:
    """Dynamic range, reference level and output quantization.

    With ``reference='frame-max'`` every frame is normalised to its own peak;
    ``reference='fixed'`` uses ``reference_value`` for temporally stable video.
    """

    dynamic_range_db: float = 50.0
    reference: str = "frame-max"
    reference_value: float | None = None
    output_depth: str = "unit-float"

    def __post_init__(self):
        if not self.dynamic_range_db > 0 or not np.isfinite(self.dynamic_range_db):
            raise ParameterError(f"dynamic_range_db must be positive, got {self.dynamic_range_db}")
        if self.reference not in REFERENCES:
            raise ParameterError(f"reference must be one of {REFERENCES}, got '{self.reference}'")
        if self.reference == "fixed":
            if self.reference_value is None or not self.reference_value > 0:
                raise ParameterError("a fixed reference needs a positive reference_value")
        if self.output_depth not in OUTPUT_DEPTHS:
            raise ParameterError(f"output_depth must be one of {OUTPUT_DEPTHS}, got '{self.output_depth}'")


def compress_array(x: np.ndarray, dynamic_range_db: float, ref: float, output_depth: str = "unit-float") -> np.ndarray:
    """``clip((20 log10(x / ref) + DR) / DR, 0, 1)`` with ``x == 0`` mapped to 0.

    The level in dB is rounded to float32 before the linear ramp. That keeps the
    map monotone and makes both end points exact: ``x == ref`` gives 1 and
    ``x == ref * 10**(-DR / 20)`` gives 0 even though the float64 logarithm
    of the latter is only correct to an ulp.
    """
    x = np.asarray(x)
    if ref <= 0:
        return np.zeros(x.shape, dtype=np.float32 if output_depth == "unit-float" else np.uint8)
    dr = np.float32(dynamic_range_db)
    with np.errstate(divide="ignore", invalid="ignore"):
        level = (20.0 * np.log10(x.astype(np.float64) / float(ref))).astype(np.float32)
    y = (level + dr) / dr
    np.clip(y, np.float32(0), np.float32(1), out=y)
    # log10(0) = -inf already clips to 0; this also catches negative noise
    y[~(x > 0)] = 0
    if output_depth == "8-bit":
        return np.floor(y * np.float32(255) + np.float32(0.5)).astype(np.uint8)
    return y


def reference_level(x: np.ndarray, params: CompressionParams) -> float:
    if params.reference == "fixed":
        return float(params.reference_value)
    return float(x.max()) if x.size else 0.0


def log_compress(env: EnvelopeFrame, params: CompressionParams | None = None) -> EnvelopeFrame:
    """Map envelope amplitudes to display intensities in ``[0, 1]`` (or ``0..255``).

    A frame-max reference on an all-zero frame yields an all-zero output.
    """
    params = params or CompressionParams()
    ref = reference_level(env.samples, params)
    out = compress_array(env.samples, params.dynamic_range_db, ref, params.output_depth)
    return EnvelopeFrame(out, env.sample_frequency, env.layout_ref, env.timestamp, env.meta)
