"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..beamform import BeamformParams
from ..errors import ConfigError, SonoError
from ..geometry import ArrayKind, ScanlineLayout
from ..graph import load_layout, load_pipeline_file
from ..graph.runtime import PipelineGraph
from ..metrics import PsfSetup, bench_csv, bench_stats, fwhm_sweep
from ..synth import ScattererField, synthesize
from .rawfile import write_raw

logger = logging.getLogger("sonopipe")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _depths(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated depths, got '{text}'") from None
    if not vals:
        raise argparse.ArgumentTypeError("at least one depth is required")
    return vals


def config_label(layout: ScanlineLayout) -> str:
    """Configuration label: ``(transmits / multiline)`` or the phased line grid."""
    if layout.kind == ArrayKind.LINEAR:
        return f"({layout.transmit_count} / {layout.receive_lines_per_transmit})"
    return "3D phased " + "x".join(str(n) for n in layout.line_shape) if layout.is_3d else f"2D phased {layout.line_count}"


def _sources(graph: PipelineGraph):
    return [n for n in graph.nodes.values() if n.is_source]


def _source_layout(graph: PipelineGraph) -> ScanlineLayout:
    for n in _sources(graph):
        if n.layout_id is not None:
            return graph.context.named_layouts[n.layout_id]
    raise ConfigError("pipeline has no source node with a layout")


def _ensure_frames(graph: PipelineGraph, count: int):
    for n in _sources(graph):
        if "frames" in n.specs and n.values["frames"] and n.values["frames"] < count:
            graph.set_parameter(n.node_id, "frames", count)


def cmd_run(args) -> int:
    graph = load_pipeline_file(args.pipeline, strict=not args.lenient)
    report = graph.run(frame_budget=args.frames)
    for sink, n in report.sink_frames.items():
        print(f"{sink}: {n} frames")
    print(report.table_row())
    print(f"wall clock {report.wall_clock:.3f} s")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        text = Path(args.layout).read_bytes()
        scat = Path(args.scatterers).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    layout = load_layout(text)
    try:
        field = ScattererField.from_json(scat)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scatterer file {args.scatterers}: {exc}") from None
    if args.noise_db is not None:
        field = ScattererField(field.positions, field.reflectivities, args.noise_db)
    period = int(round(args.frame_interval_ms * 1e6))
    frames = []
    for i in range(args.frames):
        f = synthesize(field, layout, seed=None if args.seed is None else args.seed + i, timestamp=i * period)
        frames.append(f)
    write_raw(args.out, frames)
    print(f"wrote {len(frames)} frame(s) {frames[0].samples.shape} to {args.out}")
    return EXIT_OK


def cmd_psf(args) -> int:
    graph = load_pipeline_file(args.pipeline, strict=not args.lenient)
    layout = _source_layout(graph)
    if layout.kind != ArrayKind.LINEAR:
        raise ConfigError("psf sweeps need a linear layout")
    bf = next((n for n in graph.nodes.values() if n.kind == "beamformer"), None)
    params = BeamformParams()
    if bf is not None:
        v = bf.values
        params = BeamformParams(v["receive_window"], v["f_number"], v["interpolation"], v["speed_of_sound"], v["fixed_aperture"])
    report = fwhm_sweep(args.depths, PsfSetup(layout, params, wire_per_frame=not args.single_frame))
    report.to_csv(args.report)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    reports = {}
    for path in args.pipeline:
        graph = load_pipeline_file(path, strict=not args.lenient)
        label = config_label(_source_layout(graph))
        if label in reports:
            label = f"{label} [{Path(path).stem}]"
        total = args.frames + args.warmup
        _ensure_frames(graph, total)
        logger.info("benchmarking %s (%s), %d frames", path, label, total)
        reports[label] = graph.run(frame_budget=total)
    rows = bench_stats(reports, warmup=args.warmup, min_frames=args.min_frames)
    text = bench_csv(rows, args.report)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sonopipe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a pipeline")
    r.add_argument("--pipeline", required=True)
    r.add_argument("--frames", type=int, default=None, help="stop after N source frames")
    r.add_argument("--lenient", action="store_true", help="warn about unknown XML attributes instead of failing")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="generate raw channel data for a scatterer field")
    s.add_argument("--scatterers", required=True, help="JSON list of [x, y, z, reflectivity]")
    s.add_argument("--layout", required=True, help="XML file containing a <layout> element")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--frame-interval-ms", type=float, default=20.0)
    s.add_argument("--noise-db", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("psf", help="wire-target PSF / FWHM sweep")
    f.add_argument("--pipeline", required=True)
    f.add_argument("--depths", type=_depths, default=_depths("5,10,15,20,25"))
    f.add_argument("--report", required=True)
    f.add_argument("--single-frame", action="store_true", help="image all wires in one frame")
    f.add_argument("--lenient", action="store_true")
    f.set_defaults(func=cmd_psf)

    b = sub.add_parser("bench", help="per-node timing report")
    b.add_argument("--pipeline", required=True, action="append", help="repeat for several configurations")
    b.add_argument("--frames", type=int, default=30, help="timed frames after warm-up")
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--min-frames", type=int, default=30)
    b.add_argument("--report", required=True)
    b.add_argument("--lenient", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SonoError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
