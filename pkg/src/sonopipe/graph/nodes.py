"""Processing node kinds.

A node declares its parameters, the frame type it consumes and the frame type
it produces. The runtime calls :meth:`Node.process` once per input frame, on
the node's own worker thread, with the parameter values committed at that
frame boundary. Source nodes implement :meth:`Node.frames` instead.

Every output frame carries ``meta[node_id]``: the parameter values the node
used for it.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from pathlib import Path
from types import MappingProxyType
from typing import Any, ClassVar, Iterator, Mapping

import numpy as np

from .. import beamform, compress, envelope, scanconvert, synth
from ..errors import ParameterError, PipelineConfigError, StructuralError
from ..frames import BModeImage, EnvelopeFrame, RawChannelFrame, RfFrame, with_meta
from ..geometry import ScanlineLayout
from ..io import mhd, rawfile
from .params import ParameterSpec, continuous, discrete, flag, odd, text

logger = logging.getLogger(__name__)

NODE_KINDS: dict[str, type["Node"]] = {}


def register_node_kind(cls: type["Node"]) -> type["Node"]:
    """Register a node class under ``cls.kind`` (usable as a decorator)."""
    if not getattr(cls, "kind", None):
        raise ValueError("node classes need a 'kind'")
    NODE_KINDS[cls.kind] = cls
    return cls


class NodeContext:
    """What a node may ask of its graph: named layouts and layouts by hash."""

    def __init__(self, layouts: Mapping[str, ScanlineLayout] | None = None, base_dir=None):
        self.named_layouts = dict(layouts or {})
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self._by_hash = {lay.layout_hash: lay for lay in self.named_layouts.values()}
        self._lock = threading.Lock()

    def register_layout(self, layout: ScanlineLayout) -> str:
        with self._lock:
            self._by_hash[layout.layout_hash] = layout
        return layout.layout_hash

    def layout(self, ref: str) -> ScanlineLayout:
        with self._lock:
            try:
                return self._by_hash[ref]
            except KeyError:
                raise StructuralError(f"frame refers to unknown layout {ref[:12]}") from None

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


class Node:
    """Base class for all nodes."""

    kind: ClassVar[str] = ""
    input_type: ClassVar[type | tuple | None] = None
    output_type: ClassVar[type | None] = None
    fan_in: ClassVar[bool] = False
    parameters: ClassVar[tuple[ParameterSpec, ...]] = ()
    child_elements: ClassVar[tuple[str, ...]] = ()

    def __init__(self, node_id: str, values: Mapping[str, Any] | None = None, context: NodeContext | None = None,
                 *, layout_id: str | None = None, children: list | None = None):
        self.node_id = node_id
        self.context = context or NodeContext()
        self.layout_id = layout_id
        self.children = list(children or [])
        self.specs = {s.name: s for s in self.parameters}
        vals = {s.name: s.default for s in self.parameters}
        for name, v in (values or {}).items():
            vals[name] = self.spec(name).coerce(v)
        self.values = MappingProxyType(vals)
        self.configure()

    def spec(self, name: str) -> ParameterSpec:
        try:
            return self.specs[name]
        except KeyError:
            raise ParameterError(f"{self.kind} node has no parameter '{name}'") from None

    @property
    def accepts(self) -> tuple:
        t = self.input_type
        return () if t is None else (t if isinstance(t, tuple) else (t,))

    @property
    def produces(self) -> type | None:
        return self.output_type

    @property
    def is_source(self) -> bool:
        return self.input_type is None

    def configure(self):
        """Validate the configuration as a whole; called once at construction."""

    def reset(self):
        """Called before every run."""

    def on_parameters_changed(self, changed: set[str]):
        """React to committed parameter changes (drop derived caches)."""

    def process(self, frame):
        raise NotImplementedError

    def frames(self) -> Iterator:
        raise NotImplementedError

    def finish(self):
        """Called once after the last input frame of a run."""

    def snapshot(self) -> dict:
        return dict(self.values)

    def _layout(self) -> ScanlineLayout:
        if self.layout_id is None:
            raise PipelineConfigError(f"{self.kind} node needs a layout attribute", self.node_id)
        try:
            return self.context.named_layouts[self.layout_id]
        except KeyError:
            raise PipelineConfigError(f"unknown layout '{self.layout_id}'", self.node_id) from None


def _depth_list(s: str) -> str | None:
    if not s.strip():
        return None
    try:
        vals = [float(v) for v in s.split(",")]
    except ValueError:
        return "expected comma-separated depths in mm"
    return None if all(v > 0 for v in vals) else "depths must be positive"


@register_node_kind
class SyntheticInput(Node):
    """Point-scatterer channel data from the synthesizer.

    Scatterers come from ``<scatterer x= y= z= reflectivity=/>`` children, the
    ``scatterers`` JSON file, or the ``wires`` depth list, in that order.
    With ``cache`` on, the frame is synthesized once and its payload shared by
    every emitted frame.
    """

    kind = "synthetic-input"
    output_type = RawChannelFrame
    child_elements = ("scatterer",)
    parameters = (
        continuous("frames", 10, 0, 10**9, integer=True),
        continuous("frame_interval_ms", 20.0, 0.0, 1e6),
        text("wires", "20", validator=_depth_list),
        text("scatterers", ""),
        continuous("noise_db", -200.0, -200.0, 100.0),
        flag("noise", False),
        continuous("seed", 0, 0, 2**32 - 1, integer=True),
        flag("cache", True),
        continuous("headroom_db", 12.0, 0.0, 90.0),
    )

    def configure(self):
        self.layout = self._layout()
        self.field = self._field()

    def _field(self) -> synth.ScattererField:
        noise = self.values["noise_db"] if self.values["noise"] else None
        if self.children:
            rows = [[c["x"], c.get("y", 0.0), c["z"], c.get("reflectivity", 1.0)] for c in self.children]
            arr = np.asarray(rows, dtype=float)
            return synth.ScattererField(arr[:, :3], arr[:, 3], noise)
        if self.values["scatterers"]:
            path = self.context.resolve(self.values["scatterers"])
            f = synth.ScattererField.from_json(path.read_text(encoding="utf-8"))
            return synth.ScattererField(f.positions, f.reflectivities, noise if noise is not None else f.background_noise_db)
        depths = [float(v) for v in self.values["wires"].split(",")] if self.values["wires"].strip() else []
        f = synth.wire_phantom(depths)
        return synth.ScattererField(f.positions, f.reflectivities, noise)

    def on_parameters_changed(self, changed):
        self.field = self._field()

    def frames(self):
        v = self.values
        cached = None
        period = int(round(v["frame_interval_ms"] * 1e6))
        for i in range(v["frames"]):
            if cached is None or not v["cache"]:
                frame = synth.synthesize(self.field, self.layout, headroom_db=v["headroom_db"], seed=v["seed"] + i)
                cached = frame
            else:
                frame = RawChannelFrame(cached.samples, cached.sample_frequency, cached.layout_ref, 0, cached.meta)
            yield RawChannelFrame(
                frame.samples, frame.sample_frequency, frame.layout_ref, i * period,
                with_meta(frame.meta, self.node_id, self.snapshot()),
            )


@register_node_kind
class FileInput(Node):
    """Replays a raw channel-data file or a series of MetaImages.

    ``path`` is a ``.raw`` file or a glob of ``.mhd`` files (sorted by name).
    Raw replay checks the recorded layout digest against the node's layout
    before the first frame is emitted.
    """

    kind = "file-input"
    parameters = (
        text("path", ""),
        discrete("format", "raw", ("raw", "mhd")),
        continuous("frames", 0, 0, 10**9, integer=True, doc="0 replays the whole file"),
    )

    @property
    def produces(self):
        return RawChannelFrame if self.values["format"] == "raw" else BModeImage

    def configure(self):
        if not self.values["path"]:
            raise PipelineConfigError("file-input needs a path parameter", self.node_id)
        self.layout = self._layout() if self.values["format"] == "raw" else None

    def frames(self):
        limit = self.values["frames"] or math.inf
        if self.values["format"] == "raw":
            source = rawfile.iter_raw(self.context.resolve(self.values["path"]), self.layout.layout_hash)
        else:
            pattern = self.values["path"]
            base = self.context.base_dir
            paths = sorted(Path(pattern).parent.glob(Path(pattern).name)) if Path(pattern).is_absolute() else sorted(base.glob(pattern))
            source = (mhd.read_mhd(p) for p in paths)
        for i, frame in enumerate(source):
            if i >= limit:
                break
            yield frame


@register_node_kind
class Beamformer(Node):
    kind = "beamformer"
    input_type = RawChannelFrame
    output_type = RfFrame
    parameters = (
        discrete("receive_window", "hann", beamform.WINDOWS),
        continuous("f_number", 1.0, 0.1, 20.0),
        discrete("interpolation", "linear", beamform.INTERPOLATIONS),
        continuous("speed_of_sound", 1540.0, 1000.0, 2000.0),
        flag("fixed_aperture", False),
        continuous("threads", 1, 1, 64, integer=True),
    )

    def configure(self):
        self._params = None

    def on_parameters_changed(self, changed):
        self._params = None

    def process(self, frame: RawChannelFrame) -> RfFrame:
        if self._params is None:
            v = self.values
            self._params = beamform.BeamformParams(
                v["receive_window"], v["f_number"], v["interpolation"], v["speed_of_sound"], v["fixed_aperture"]
            )
        layout = self.context.layout(frame.layout_ref)
        rf = beamform.beamform_frame(frame, layout, self._params, threads=self.values["threads"])
        return RfFrame(rf.samples, rf.sample_frequency, rf.layout_ref, rf.timestamp,
                       with_meta(rf.meta, self.node_id, self.snapshot()))


@register_node_kind
class Envelope(Node):
    """IQ envelope detection, optionally compounded over ``<band>`` children.

    Without bands a single band is used at ``center_frequency`` (0: the
    transducer centre frequency) with ``bandwidth`` (0: 60 % of the centre).
    ``method = hilbert`` switches to the DFT reference detector.
    """

    kind = "envelope"
    input_type = RfFrame
    output_type = EnvelopeFrame
    child_elements = ("band",)
    parameters = (
        discrete("method", "iq", ("iq", "hilbert")),
        continuous("center_frequency", 0.0, 0.0, 1e9),
        continuous("bandwidth", 0.0, 0.0, 1e9),
        continuous("filter_length", envelope.DEFAULT_FILTER_LENGTH, 1, 4095, integer=True, validator=odd),
        continuous("decimation", 1, 1, 256, integer=True),
    )

    def configure(self):
        self._banks = {}
        if self.children:
            self._bank_for(None)

    def on_parameters_changed(self, changed):
        self._banks = {}

    def _bank_for(self, layout: ScanlineLayout | None) -> envelope.BandpassBank:
        key = None if self.children else layout.layout_hash
        bank = self._banks.get(key)
        if bank is None:
            v = self.values
            kw = dict(filter_length=v["filter_length"], decimation=v["decimation"])
            if self.children:
                try:
                    bands = [envelope.Band(float(c["center"]), float(c["bandwidth"]), float(c.get("weight", 1.0)))
                             for c in self.children]
                    bank = envelope.BandpassBank(tuple(bands), **kw)
                except (KeyError, ValueError) as exc:
                    raise PipelineConfigError(f"invalid band definition: {exc}", self.node_id) from exc
            else:
                f0 = v["center_frequency"] or layout.geometry.center_frequency
                bw = v["bandwidth"] or envelope.DEFAULT_FRACTIONAL_BANDWIDTH * f0
                bank = envelope.BandpassBank((envelope.Band(f0, bw, 1.0),), **kw)
            self._banks[key] = bank
        return bank

    def process(self, frame: RfFrame) -> EnvelopeFrame:
        if self.values["method"] == "hilbert":
            env = envelope.hilbert_envelope(frame)
        else:
            env = envelope.compound(frame, self._bank_for(self.context.layout(frame.layout_ref)))
        return EnvelopeFrame(env.samples, env.sample_frequency, env.layout_ref, env.timestamp,
                             with_meta(env.meta, self.node_id, self.snapshot()))


@register_node_kind
class LogCompressor(Node):
    kind = "log-compressor"
    input_type = EnvelopeFrame
    output_type = EnvelopeFrame
    parameters = (
        continuous("dynamic_range_db", 50.0, 1.0, 200.0),
        discrete("reference", "frame-max", compress.REFERENCES),
        continuous("reference_value", 1.0, 1e-30, 1e30),
        discrete("output_depth", "unit-float", compress.OUTPUT_DEPTHS),
    )

    def configure(self):
        self._params = None

    def on_parameters_changed(self, changed):
        self._params = None

    def process(self, frame: EnvelopeFrame) -> EnvelopeFrame:
        if self._params is None:
            v = self.values
            self._params = compress.CompressionParams(
                v["dynamic_range_db"], v["reference"], v["reference_value"], v["output_depth"]
            )
        out = compress.log_compress(frame, self._params)
        return EnvelopeFrame(out.samples, out.sample_frequency, out.layout_ref, out.timestamp,
                             with_meta(out.meta, self.node_id, self.snapshot()))


@register_node_kind
class ScanConverter(Node):
    """Scan conversion with a cached table per layout and source sampling.

    ``spacing = 0`` picks 0.0225 mm for 2-D and 0.175 mm for 3-D layouts.
    """

    kind = "scan-converter"
    input_type = EnvelopeFrame
    output_type = BModeImage
    parameters = (
        continuous("spacing", 0.0, 0.0, 100.0),
        continuous("memory_budget_mb", scanconvert.DEFAULT_MEMORY_BUDGET / 2**20, 1.0, 2.0**40),
    )

    def configure(self):
        self._tables = {}
        self.table_builds = 0

    def on_parameters_changed(self, changed):
        self._tables = {}

    def table_for(self, frame: EnvelopeFrame) -> scanconvert.ConversionTable:
        key = (frame.layout_ref, frame.samples_per_line, frame.sample_frequency)
        table = self._tables.get(key)
        if table is None:
            layout = self.context.layout(frame.layout_ref)
            table = scanconvert.build_table(
                layout,
                self.values["spacing"] or None,
                samples_per_line=frame.samples_per_line,
                sample_frequency=frame.sample_frequency,
                memory_budget=int(self.values["memory_budget_mb"] * 2**20),
            )
            self._tables[key] = table
            self.table_builds += 1
        return table

    def process(self, frame: EnvelopeFrame) -> BModeImage:
        img = scanconvert.convert(frame, self.table_for(frame))
        return BModeImage(img.intensities, img.spacing, img.origin, img.mask, img.timestamp,
                          with_meta(img.meta, self.node_id, self.snapshot()))


@register_node_kind
class FileOutput(Node):
    """Writes B-mode images as numbered MetaImages or raw frames into one file.

    ``path`` is a file stem for images (``<path>_00000.mhd``, ...) and the
    file name for raw channel data.
    """

    kind = "file-output"
    input_type = (RawChannelFrame, BModeImage)
    parameters = (text("path", ""),)

    def configure(self):
        if not self.values["path"]:
            raise PipelineConfigError("file-output needs a path parameter", self.node_id)
        self._writer = None
        self.count = 0
        self.written: list[Path] = []

    def reset(self):
        self._writer = None
        self.count = 0
        self.written = []

    def process(self, frame):
        target = self.context.resolve(self.values["path"])
        if isinstance(frame, BModeImage):
            stem = target.with_suffix("") if target.suffix.lower() == ".mhd" else target
            p = mhd.write_mhd(frame, stem.with_name(f"{stem.name}_{self.count:05d}.mhd"))
            self.written.append(p)
        else:
            if self._writer is None:
                self._writer = rawfile.RawFrameWriter(target)
                self.written.append(target)
            self._writer.write(frame)
        self.count += 1

    def finish(self):
        if self._writer is not None:
            self._writer.close()
            self._writer = None


@register_node_kind
class StatsSink(Node):
    """Counts frames and records timestamps; accepts any frame type and several inputs.

    With ``keep`` on, the received frame objects themselves are retained.
    """

    kind = "stats-sink"
    input_type = (RawChannelFrame, RfFrame, EnvelopeFrame, BModeImage)
    fan_in = True
    parameters = (flag("keep", False),)

    def configure(self):
        self.reset()

    def reset(self):
        self.count = 0
        self.timestamps: list[int] = []
        self.frames: list = []
        self.payload_ids: set[int] = set()

    def process(self, frame):
        self.count += 1
        self.timestamps.append(frame.timestamp)
        payload = frame.intensities if isinstance(frame, BModeImage) else frame.samples
        self.payload_ids.add(id(payload))
        if self.values["keep"]:
            self.frames.append(frame)


def describe_kinds() -> str:
    """Human-readable summary of every registered node kind and its parameters."""
    lines = []
    for kind, cls in sorted(NODE_KINDS.items()):
        lines.append(kind)
        for s in cls.parameters:
            lines.append("  " + json.dumps(s.describe()))
    return "\n".join(lines)
