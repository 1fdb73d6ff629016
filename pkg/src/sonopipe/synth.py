"""Point-scatterer channel-data synthesis.

The transmit leg uses a ray approximation: an echo from scatterer ``s`` in
event ``j`` arrives at element ``e`` after ``(|s - o_j| + |s - pos_e|) / c``,
where ``o_j`` is the origin of the event's transmit line. Amplitude falls off
as ``1 / (d_tx * d_rx)`` (normalised to 1 at 10 mm per leg) and scales with
the mean transmit apodization of the event. This is deliberately not a wave
simulation; it is exact enough to check delays, focusing and PSF shape.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, StructuralError
from .frames import RawChannelFrame
from .geometry import ScanlineLayout, TransducerGeometry

REFERENCE_DISTANCE_MM = 10.0
INT16_FULL_SCALE = 32767


@dataclass(frozen=True)
class PulseModel:
    """Gaussian-enveloped cosine echo waveform.

    ``fractional_bandwidth`` is the -6 dB bandwidth over the centre frequency.
    ``cycles`` is the truncation window in carrier periods; by default the
    pulse is evaluated over +-4 envelope standard deviations.
    """

    center_frequency: float
    fractional_bandwidth: float = 0.6
    cycles: float | None = None

    def __post_init__(self):
        if not self.center_frequency > 0:
            raise ParameterError("pulse center_frequency must be positive")
        if not 0 < self.fractional_bandwidth < 1:
            raise ParameterError(f"fractional_bandwidth must lie in (0, 1), got {self.fractional_bandwidth}")
        if self.cycles is not None and not self.cycles > 0:
            raise ParameterError("cycles must be positive")

    @property
    def sigma(self) -> float:
        """Standard deviation (s) of the Gaussian envelope."""
        bw = self.fractional_bandwidth * self.center_frequency
        return math.sqrt(2 * math.log(2)) / (math.pi * bw)

    @property
    def envelope_fwhm(self) -> float:
        """Full width at half maximum (s) of the pulse envelope."""
        return 2 * math.sqrt(2 * math.log(2)) * self.sigma

    @property
    def half_extent(self) -> float:
        if self.cycles is None:
            return 4 * self.sigma
        return self.cycles / (2 * self.center_frequency)

    def waveform(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        g = np.exp(-0.5 * (t / self.sigma) ** 2) * np.cos(2 * np.pi * self.center_frequency * t)
        return np.where(np.abs(t) <= self.half_extent, g, 0.0)


@dataclass(frozen=True, eq=False)
class ScattererField:
    """Point reflectors: positions (mm), shape ``(n, 3)``, and reflectivities."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    reflectivities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    background_noise_db: float | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        refl = np.asarray(self.reflectivities, dtype=float).reshape(-1)
        if len(pos) != len(refl):
            raise ParameterError("need one reflectivity per scatterer")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(refl))):
            raise ParameterError("scatterer positions and reflectivities must be finite")
        if np.any(refl < 0):
            raise ParameterError("reflectivities must be nonnegative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "reflectivities", refl)

    def __len__(self):
        return len(self.reflectivities)

    def __or__(self, other: "ScattererField") -> "ScattererField":
        return ScattererField(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.reflectivities, other.reflectivities]),
            self.background_noise_db,
        )

    def mirrored(self) -> "ScattererField":
        """Reflect every scatterer across the x = 0 plane."""
        pos = self.positions.copy()
        pos[:, 0] = -pos[:, 0]
        return ScattererField(pos, self.reflectivities, self.background_noise_db)

    @classmethod
    def from_json(cls, text: str) -> "ScattererField":
        """Parse ``[[x, y, z, r], ...]`` or ``[{"x":..,"y":..,"z":..,"reflectivity":..}, ...]``.

        A top-level object ``{"scatterers": [...], "background_noise_db": v}``
        is accepted too.
        """
        doc = json.loads(text)
        noise = None
        if isinstance(doc, dict):
            noise = doc.get("background_noise_db")
            doc = doc.get("scatterers", [])
        rows = []
        for item in doc:
            if isinstance(item, dict):
                rows.append([item["x"], item.get("y", 0.0), item["z"], item.get("reflectivity", 1.0)])
            else:
                if len(item) != 4:
                    raise ParameterError(f"scatterer entries need 4 values (x, y, z, reflectivity), got {item}")
                rows.append(list(item))
        arr = np.asarray(rows, dtype=float).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], noise)

    def to_json(self) -> str:
        rows = np.column_stack([self.positions, self.reflectivities]).tolist()
        return json.dumps({"scatterers": rows, "background_noise_db": self.background_noise_db})


def wire_phantom(depths, lateral: float = 0.0, reflectivity: float = 1.0) -> ScattererField:
    """One unit reflector per depth (mm) on the central axis."""
    depths = np.asarray(list(depths), dtype=float)
    if np.any(depths <= 0):
        raise ParameterError("wire depths must be positive")
    pos = np.zeros((len(depths), 3))
    pos[:, 0] = lateral
    pos[:, 2] = depths
    return ScattererField(pos, np.full(len(depths), reflectivity))


def synthesize_channels(
    field: ScattererField,
    layout: ScanlineLayout,
    pulse: PulseModel | None = None,
    *,
    attenuation_db_cm_mhz: float | None = None,
) -> np.ndarray:
    """Noise-free channel signals before quantization, shape ``(events, channels, samples)``.

    Linear in the scatterer field: the channels of ``A | B`` equal the sum of
    the channels of ``A`` and ``B``.
    """
    geom = layout.geometry
    pulse = pulse or PulseModel(geom.center_frequency)
    fs = layout.sample_frequency
    c_mm = layout.speed_of_sound * 1e3
    n_s = layout.samples_per_line
    n_ev, n_ch = layout.transmit_count, layout.channel_count
    out = np.zeros((n_ev, n_ch, n_s))
    if len(field) == 0:
        return out

    half = int(math.ceil(pulse.half_extent * fs)) + 1
    taps = np.arange(-half, half + 1)
    origins = np.stack([t.origin for t in layout.transmits])
    elem_idx = np.stack([t.elements for t in layout.transmits])
    elem_pos = geom.element_positions[elem_idx]
    tx_gain = np.array([t.transmit_apodization.mean() for t in layout.transmits])
    ev_idx = np.arange(n_ev)[:, None, None]
    ch_idx = np.arange(n_ch)[None, :, None]

    for s_pos, refl in zip(field.positions, field.reflectivities):
        if refl == 0:
            continue
        d_tx = np.sqrt(((s_pos[None, :] - origins) ** 2).sum(axis=1))
        d_rx = np.sqrt(((s_pos[None, None, :] - elem_pos) ** 2).sum(axis=2))
        arrival = (d_tx[:, None] + d_rx) / c_mm
        amp = refl * tx_gain[:, None] * REFERENCE_DISTANCE_MM**2 / (np.maximum(d_tx, 1e-6)[:, None] * np.maximum(d_rx, 1e-6))
        if attenuation_db_cm_mhz:
            path_cm = (d_tx[:, None] + d_rx) / 10.0
            amp = amp * 10 ** (-attenuation_db_cm_mhz * path_cm * pulse.center_frequency / 1e6 / 20)
        centre = np.floor(arrival * fs).astype(np.int64)
        n = centre[..., None] + taps
        t = n / fs - arrival[..., None]
        vals = amp[..., None] * pulse.waveform(t)
        inside = (n >= 0) & (n < n_s)
        if not inside.any():
            continue
        ev = np.broadcast_to(ev_idx, n.shape)[inside]
        ch = np.broadcast_to(ch_idx, n.shape)[inside]
        out[ev, ch, n[inside]] += vals[inside]
    return out


def synthesize(
    field: ScattererField,
    layout: ScanlineLayout,
    geom: TransducerGeometry | None = None,
    pulse: PulseModel | None = None,
    *,
    headroom_db: float = 12.0,
    full_scale: float | None = None,
    seed: int | None = None,
    attenuation_db_cm_mhz: float | None = None,
    timestamp: int = 0,
) -> RawChannelFrame:
    """Forward-model one frame of 16-bit channel data for ``field``.

    The quantizer maps ``full_scale`` (signal units) to 32767; by default it is
    set ``headroom_db`` above the strongest echo. Noise, if the field asks for
    it, is white Gaussian with standard deviation ``10**(noise_db / 20)``
    relative to the echo of a unit reflector at 10 mm.
    """
    if geom is not None and geom != layout.geometry:
        raise StructuralError("geometry does not match the layout's transducer")
    x = synthesize_channels(field, layout, pulse, attenuation_db_cm_mhz=attenuation_db_cm_mhz)
    if field.background_noise_db is not None:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, 10 ** (field.background_noise_db / 20), size=x.shape)
    if full_scale is None:
        peak = float(np.abs(x).max()) if x.size else 0.0
        full_scale = peak * 10 ** (headroom_db / 20) if peak > 0 else 1.0
    q = np.clip(np.rint(x * (INT16_FULL_SCALE / full_scale)), -INT16_FULL_SCALE - 1, INT16_FULL_SCALE)
    return RawChannelFrame(
        samples=q.astype(np.int16),
        sample_frequency=layout.sample_frequency,
        layout_ref=layout.layout_hash,
        timestamp=timestamp,
        meta={"full_scale": full_scale},
    )
