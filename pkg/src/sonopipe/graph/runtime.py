"""Threaded execution of a pipeline graph.

Each node runs on its own worker thread. Edges are bounded FIFO queues that
carry the frame object itself, so fan-out hands the same immutable payload to
every consumer. A full queue blocks its producer (back-pressure) unless the
graph is in ``drop-oldest`` mode, where the oldest queued frame is discarded.

Parameter changes go through one control lock per graph. They are staged on
the target node and committed by the node's worker between two frames, so a
frame is always processed with a single consistent parameter set.
"""

from __future__ import annotations

import enum
import graphlib
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from ..errors import ParameterError, PipelineConfigError, PipelineRuntimeError, SonoError
from .nodes import Node, NodeContext

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_DEPTH = 4
QUEUE_POLICIES = ("block", "drop-oldest")
_POLL = 0.05


class State(enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    STOPPED = "stopped"


class _End:
    """End-of-stream marker, one per incoming edge."""


_END = _End()


@dataclass(frozen=True)
class _Packet:
    frame: Any
    t_emit: float


@dataclass(frozen=True)
class Ack:
    """Outcome of a parameter request. ``changed`` is False for no-op requests."""

    node_id: str
    values: Mapping[str, Any]
    changed: bool


@dataclass
class NodeStats:
    node_id: str
    kind: str
    durations: list[float] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return len(self.durations)

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.durations) * 1e3) if self.durations else float("nan")

    @property
    def std_ms(self) -> float:
        return float(np.std(self.durations, ddof=1) * 1e3) if len(self.durations) > 1 else float("nan")


@dataclass
class RunReport:
    """Per-node processing times (seconds, excluding queue waits) and latencies.

    ``latencies`` are source-to-sink times of the first declared sink;
    ``latencies_by_sink`` has all sinks. ``wall_clock`` is the whole run and
    ``node_sum_ms`` the sum of mean node times, which exceeds the per-frame
    wall time when nodes overlap.
    """

    nodes: dict[str, NodeStats]
    latencies: list[float]
    latencies_by_sink: dict[str, list[float]]
    sink_frames: dict[str, int]
    wall_clock: float
    dropped: int = 0

    @property
    def node_sum_ms(self) -> float:
        return float(sum(s.mean_ms for s in self.nodes.values() if s.frames))

    def frames_processed(self, node_id: str) -> int:
        return self.nodes[node_id].frames

    def table_row(self) -> str:
        """``id: mean ± std`` for every node, then the end-to-end total."""
        parts = [f"{s.node_id}: {s.mean_ms:.2f} ± {s.std_ms:.2f}" for s in self.nodes.values() if s.frames]
        if self.latencies:
            lat = np.asarray(self.latencies) * 1e3
            std = lat.std(ddof=1) if len(lat) > 1 else float("nan")
            parts.append(f"total: {lat.mean():.2f} ± {std:.2f}")
        return " | ".join(parts)


class _Edge:
    def __init__(self, src: str, dst: str):
        self.src = src
        self.dst = dst
        self.count = 0


class PipelineGraph:
    """Directed acyclic graph of nodes; see :func:`load_pipeline` for the XML form."""

    def __init__(self, context: NodeContext | None = None, *, queue_depth: int = DEFAULT_QUEUE_DEPTH,
                 queue_policy: str = "block"):
        if queue_depth < 1:
            raise ParameterError("queue_depth must be at least 1")
        if queue_policy not in QUEUE_POLICIES:
            raise ParameterError(f"queue_policy must be one of {QUEUE_POLICIES}")
        self.context = context or NodeContext()
        self.queue_depth = queue_depth
        self.queue_policy = queue_policy
        self.nodes: dict[str, Node] = {}
        self.edges: list[_Edge] = []
        self.lines: dict[str, int] = {}
        self.state = State.IDLE
        self._control = threading.Lock()
        self._pending: dict[str, dict[str, Any]] = {}
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._error: BaseException | None = None
        self._report: RunReport | None = None

    # ------------------------------------------------------------------ shape
    def add_node(self, node: Node, line: int | None = None) -> Node:
        self._require_idle()
        if node.node_id in self.nodes:
            raise PipelineConfigError("duplicate node id", node.node_id, line)
        self.nodes[node.node_id] = node
        if line is not None:
            self.lines[node.node_id] = line
        return node

    def remove_node(self, node_id: str):
        self._require_idle()
        self._node(node_id)
        del self.nodes[node_id]
        self.edges = [e for e in self.edges if node_id not in (e.src, e.dst)]

    def connect(self, src: str, dst: str, line: int | None = None):
        self._require_idle()
        for nid in (src, dst):
            if nid not in self.nodes:
                raise PipelineConfigError(f"edge refers to unknown node '{nid}'", nid, line)
        if any(e.src == src and e.dst == dst for e in self.edges):
            raise PipelineConfigError(f"duplicate edge {src} -> {dst}", dst, line)
        a, b = self.nodes[src], self.nodes[dst]
        if b.is_source:
            raise PipelineConfigError(f"{b.kind} node takes no input", dst, line)
        if a.produces is None:
            raise PipelineConfigError(f"{a.kind} node has no output", src, line)
        if not any(issubclass(a.produces, t) for t in b.accepts):
            names = ", ".join(t.__name__ for t in b.accepts)
            raise PipelineConfigError(
                f"type mismatch: {src} produces {a.produces.__name__}, {dst} accepts {names}", dst, line
            )
        self.edges.append(_Edge(src, dst))

    def successors(self, node_id: str) -> list[str]:
        return [e.dst for e in self.edges if e.src == node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return [e.src for e in self.edges if e.dst == node_id]

    @property
    def sinks(self) -> list[str]:
        return [n for n in self.nodes if not self.successors(n)]

    def validate(self):
        """Check acyclicity, fan-in and connectivity; raises PipelineConfigError."""
        ts = graphlib.TopologicalSorter({n: self.predecessors(n) for n in self.nodes})
        try:
            order = list(ts.static_order())
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            raise PipelineConfigError(f"cycle: {' -> '.join(cycle)}", cycle[0], self.lines.get(cycle[0])) from None
        for nid, node in self.nodes.items():
            preds = self.predecessors(nid)
            if node.is_source:
                continue
            if not preds:
                raise PipelineConfigError(f"{node.kind} node has no input edge", nid, self.lines.get(nid))
            if len(preds) > 1 and not node.fan_in:
                raise PipelineConfigError(
                    f"{node.kind} node has {len(preds)} inputs but does not accept fan-in", nid, self.lines.get(nid)
                )
        if not any(n.is_source for n in self.nodes.values()):
            raise PipelineConfigError("pipeline has no source node")
        return order

    def _node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise ParameterError(f"unknown node '{node_id}'") from None

    def _require_idle(self):
        if self.state == State.RUNNING:
            raise SonoError("cannot change the graph shape while it is running")

    # ------------------------------------------------------------- parameters
    def current_parameters(self, node_id: str) -> Mapping[str, Any]:
        """Committed values plus anything staged for the next frame boundary."""
        node = self._node(node_id)
        with self._control:
            return MappingProxyType({**node.values, **self._pending.get(node_id, {})})

    def set_parameter(self, node_id: str, name: str, value) -> Ack:
        return self.set_parameters(node_id, {name: value})

    def set_parameters(self, node_id: str, values: Mapping[str, Any]) -> Ack:
        """Validate and stage several values that take effect together.

        Invalid values raise ParameterError and leave all values unchanged.
        Values equal to the current ones are acknowledged without effect.
        Safe to call from any thread while the graph runs.
        """
        node = self._node(node_id)
        coerced = {name: node.spec(name).coerce(v) for name, v in values.items()}
        with self._control:
            current = {**node.values, **self._pending.get(node_id, {})}
            changed = {k: v for k, v in coerced.items() if current[k] != v}
            if not changed:
                return Ack(node_id, MappingProxyType(current), False)
            if self.state == State.RUNNING:
                self._pending.setdefault(node_id, {}).update(changed)
            else:
                self._commit(node, changed)
            current.update(changed)
        return Ack(node_id, MappingProxyType(current), True)

    def _commit(self, node: Node, changed: dict):
        node.values = MappingProxyType({**node.values, **changed})
        node.on_parameters_changed(set(changed))

    def _apply_pending(self, node: Node):
        if node.node_id not in self._pending:
            return
        with self._control:
            changed = self._pending.pop(node.node_id, None)
            if changed:
                self._commit(node, changed)

    # -------------------------------------------------------------- execution
    def start(self, frame_budget: int | None = None):
        """Launch all workers and return immediately; see :meth:`wait`."""
        if self.state == State.RUNNING:
            raise SonoError("graph is already running")
        order = self.validate()
        self._stop.clear()
        self._error = None
        self._report = None
        self._queues = {n: queue.Queue(self.queue_depth) for n in self.nodes}
        self._stats = {n: NodeStats(n, self.nodes[n].kind) for n in self.nodes}
        self._latency = {n: [] for n in self.sinks}
        self._dropped = 0
        self._drop_lock = threading.Lock()
        for e in self.edges:
            e.count = 0
        for n in self.nodes.values():
            n.reset()
        self.state = State.RUNNING
        self._t0 = time.perf_counter()
        self._threads = []
        for nid in order:
            node = self.nodes[nid]
            target = self._run_source if node.is_source else self._run_worker
            t = threading.Thread(target=target, args=(node, frame_budget), name=f"node-{nid}", daemon=True)
            self._threads.append(t)
        for t in self._threads:
            t.start()

    def wait(self, timeout: float | None = None) -> RunReport:
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._threads:
            t.join(None if deadline is None else max(0.0, deadline - time.monotonic()))
            if t.is_alive():
                self.stop()
                t.join()
        wall = time.perf_counter() - self._t0
        self.state = State.STOPPED
        # anything staged after the last frame still becomes the current value
        for node in self.nodes.values():
            self._apply_pending(node)
        if self._error is not None:
            raise self._error
        first = self.sinks[0] if self.sinks else None
        self._report = RunReport(
            nodes=self._stats,
            latencies=list(self._latency.get(first, [])),
            latencies_by_sink={k: list(v) for k, v in self._latency.items()},
            sink_frames={k: self._stats[k].frames for k in self.sinks},
            wall_clock=wall,
            dropped=self._dropped,
        )
        return self._report

    def run(self, frame_budget: int | None = None, timeout: float | None = None) -> RunReport:
        """Process until the sources are exhausted or ``frame_budget`` frames were emitted."""
        self.start(frame_budget)
        return self.wait(timeout)

    def stop(self):
        """Ask every worker to finish; safe from any thread."""
        self._stop.set()

    def _fail(self, node: Node, frame, exc: BaseException):
        if self._error is None:
            ts = getattr(frame, "timestamp", None)
            err = exc if isinstance(exc, PipelineRuntimeError) else PipelineRuntimeError(node.node_id, ts, exc)
            self._error = err
            logger.error("%s", err)
        self._stop.set()

    def _put(self, dst: str, item) -> bool:
        q = self._queues[dst]
        while not self._stop.is_set():
            if self.queue_policy == "drop-oldest" and item is not _END:
                try:
                    q.put_nowait(item)
                    return True
                except queue.Full:
                    try:
                        old = q.get_nowait()
                        if old is _END:
                            # never drop a stream terminator
                            q.put_nowait(old)
                            continue
                        with self._drop_lock:
                            self._dropped += 1
                    except (queue.Empty, queue.Full):
                        pass
                    continue
            try:
                q.put(item, timeout=_POLL)
                return True
            except queue.Full:
                continue
        return False

    def _emit(self, node: Node, packet):
        for e in self.edges:
            if e.src == node.node_id:
                if packet is not _END:
                    e.count += 1
                self._put(e.dst, packet)

    def _run_source(self, node: Node, frame_budget):
        frame = None
        try:
            it = iter(node.frames())
            emitted = 0
            while not self._stop.is_set():
                if frame_budget is not None and emitted >= frame_budget:
                    break
                self._apply_pending(node)
                t = time.perf_counter()
                try:
                    frame = next(it)
                except StopIteration:
                    break
                self._stats[node.node_id].durations.append(time.perf_counter() - t)
                self._emit(node, _Packet(frame, time.perf_counter()))
                emitted += 1
            node.finish()
        except BaseException as exc:  # noqa: BLE001 - reported through wait()
            self._fail(node, frame, exc)
        finally:
            self._emit(node, _END)

    def _run_worker(self, node: Node, _budget):
        q = self._queues[node.node_id]
        expected_ends = len(self.predecessors(node.node_id))
        ends = 0
        is_sink = node.node_id in self._latency
        frame = None
        try:
            while ends < expected_ends:
                try:
                    item = q.get(timeout=_POLL)
                except queue.Empty:
                    if self._stop.is_set():
                        break
                    continue
                if item is _END:
                    ends += 1
                    continue
                if self._stop.is_set():
                    continue
                frame = item.frame
                self._apply_pending(node)
                t = time.perf_counter()
                out = node.process(frame)
                t_done = time.perf_counter()
                self._stats[node.node_id].durations.append(t_done - t)
                if is_sink:
                    self._latency[node.node_id].append(t_done - item.t_emit)
                elif out is not None:
                    self._emit(node, _Packet(out, item.t_emit))
            node.finish()
        except BaseException as exc:  # noqa: BLE001
            self._fail(node, frame, exc)
        finally:
            self._emit(node, _END)

    def edge_counts(self) -> dict[tuple[str, str], int]:
        return {(e.src, e.dst): e.count for e in self.edges}
