"""Pipeline construction from XML.

Schema::

    <pipeline queue_depth="4" queue_policy="block">
      <layout id="probe" kind="linear" elements_x="128" pitch_x="0.3"
              center_frequency="5e6" lines="128" depth="45"/>
      <node id="input" kind="synthetic-input" layout="probe">
        <param name="frames" value="10"/>
      </node>
      <node id="bf" kind="beamformer">
        <param name="f_number" value="1.0"/>
      </node>
      <edge from="input" to="bf"/>
    </pipeline>

``<node>`` elements may hold kind-specific children (``<band center=
bandwidth= weight=/>`` for envelope nodes, ``<scatterer x= y= z=
reflectivity=/>`` for synthetic inputs). Unknown attributes are errors in
strict mode and logged warnings otherwise. Every error names the node and
the line it was declared on.
"""

from __future__ import annotations

import logging
import xml.parsers.expat
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, PipelineConfigError
from ..geometry import ScanlineLayout, layout_from_config, layout_keys
from .nodes import NODE_KINDS, NodeContext
from .runtime import PipelineGraph

logger = logging.getLogger(__name__)

_ATTRS = {
    "pipeline": {"queue_depth", "queue_policy"},
    "node": {"id", "kind", "layout"},
    "param": {"name", "value"},
    "edge": {"from", "to"},
    "band": {"center", "bandwidth", "weight"},
    "scatterer": {"x", "y", "z", "reflectivity"},
}
_REQUIRED = {
    "node": ("id", "kind"),
    "param": ("name", "value"),
    "edge": ("from", "to"),
    "layout": ("id",),
    "band": ("center", "bandwidth"),
    "scatterer": ("x", "z"),
}


@dataclass
class _Element:
    tag: str
    attrs: dict
    line: int
    children: list = field(default_factory=list)


def _parse(text: str | bytes) -> _Element:
    root: list[_Element] = []
    stack: list[_Element] = []
    p = xml.parsers.expat.ParserCreate()

    def start(tag, attrs):
        el = _Element(tag, dict(attrs), p.CurrentLineNumber)
        if stack:
            stack[-1].children.append(el)
        else:
            root.append(el)
        stack.append(el)

    def end(tag):
        stack.pop()

    p.StartElementHandler = start
    p.EndElementHandler = end
    try:
        p.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise PipelineConfigError(f"malformed XML: {xml.parsers.expat.errors.messages[exc.code]}", None, exc.lineno) from None
    return root[0]


class _Checker:
    def __init__(self, strict: bool):
        self.strict = strict

    def attrs(self, el: _Element, allowed: set[str], node_id=None):
        for req in _REQUIRED.get(el.tag, ()):
            if req not in el.attrs:
                raise PipelineConfigError(f"<{el.tag}> is missing attribute '{req}'", node_id, el.line)
        unknown = sorted(set(el.attrs) - allowed)
        if unknown:
            msg = f"unknown attribute(s) on <{el.tag}>: {', '.join(unknown)}"
            if self.strict:
                raise PipelineConfigError(msg, node_id, el.line)
            logger.warning("line %d: %s (ignored)", el.line, msg)
            for k in unknown:
                del el.attrs[k]


def _layout(el: _Element, check: _Checker) -> ScanlineLayout:
    lid = el.attrs.get("id")
    kind = el.attrs.get("kind", "linear")
    if kind not in ("linear", "phased", "matrix-phased"):
        raise PipelineConfigError(f"unknown layout kind '{kind}'", lid, el.line)
    check.attrs(el, {"id"} | layout_keys(kind), lid)
    cfg = {k: v for k, v in el.attrs.items() if k != "id"}
    try:
        return layout_from_config(cfg)
    except ConfigError as exc:
        raise PipelineConfigError(str(exc), lid, el.line) from None


def load_layout(xml_text: str | bytes, layout_id: str | None = None, *, strict: bool = True) -> ScanlineLayout:
    """First ``<layout>`` element (or the one with ``layout_id``) of any XML document."""
    root = _parse(xml_text)
    check = _Checker(strict)
    todo = [root]
    while todo:
        el = todo.pop(0)
        if el.tag == "layout" and (layout_id is None or el.attrs.get("id") == layout_id):
            return _layout(el, check)
        todo.extend(el.children)
    raise PipelineConfigError("no <layout> element found" if layout_id is None else f"no layout '{layout_id}'")


def load_pipeline(xml_text: str | bytes, *, strict: bool = True, base_dir=None) -> PipelineGraph:
    """Build and validate a :class:`PipelineGraph` from XML (not started).

    Raises
    ------
    PipelineConfigError
        Unknown node kind, parameter or attribute, out-of-range value, cycle,
        or incompatible edge, each with node id and line.
    """
    root = _parse(xml_text)
    if root.tag != "pipeline":
        raise PipelineConfigError(f"root element must be <pipeline>, got <{root.tag}>", None, root.line)
    check = _Checker(strict)
    check.attrs(root, _ATTRS["pipeline"])

    layouts: dict[str, ScanlineLayout] = {}
    for el in root.children:
        if el.tag == "layout":
            lid = el.attrs.get("id")
            if lid in layouts:
                raise PipelineConfigError("duplicate layout id", lid, el.line)
            layouts[lid] = _layout(el, check)

    try:
        graph = PipelineGraph(
            NodeContext(layouts, base_dir),
            queue_depth=int(root.attrs.get("queue_depth", 4)),
            queue_policy=root.attrs.get("queue_policy", "block"),
        )
    except (ConfigError, ValueError) as exc:
        raise PipelineConfigError(str(exc), None, root.line) from None

    edges = []
    for el in root.children:
        if el.tag == "layout":
            continue
        if el.tag == "edge":
            check.attrs(el, _ATTRS["edge"])
            edges.append(el)
        elif el.tag == "node":
            graph.add_node(_node(el, check, graph.context), el.line)
        else:
            raise PipelineConfigError(f"unknown element <{el.tag}>", None, el.line)
    for el in edges:
        graph.connect(el.attrs["from"], el.attrs["to"], el.line)
    graph.validate()
    return graph


def _node(el: _Element, check: _Checker, context: NodeContext):
    check.attrs(el, _ATTRS["node"])
    nid, kind = el.attrs["id"], el.attrs["kind"]
    cls = NODE_KINDS.get(kind)
    if cls is None:
        raise PipelineConfigError(f"unknown node kind '{kind}' (known: {', '.join(sorted(NODE_KINDS))})", nid, el.line)
    values = {}
    children = []
    for child in el.children:
        if child.tag == "param":
            check.attrs(child, _ATTRS["param"], nid)
            name = child.attrs["name"]
            if name not in {s.name for s in cls.parameters}:
                raise PipelineConfigError(f"{kind} node has no parameter '{name}'", nid, child.line)
            if name in values:
                raise PipelineConfigError(f"parameter '{name}' given twice", nid, child.line)
            values[name] = child.attrs["value"]
        elif child.tag in cls.child_elements:
            check.attrs(child, _ATTRS[child.tag], nid)
            try:
                children.append({k: float(v) for k, v in child.attrs.items()})
            except ValueError:
                raise PipelineConfigError(f"<{child.tag}> attributes must be numbers", nid, child.line) from None
        else:
            raise PipelineConfigError(f"unexpected <{child.tag}> inside a {kind} node", nid, child.line)
    if "layout" in el.attrs and el.attrs["layout"] not in context.named_layouts:
        raise PipelineConfigError(f"unknown layout '{el.attrs['layout']}'", nid, el.line)
    try:
        return cls(nid, values, context, layout_id=el.attrs.get("layout"), children=children)
    except PipelineConfigError as exc:
        if exc.line is None:
            raise PipelineConfigError(str(exc).split("] ", 1)[-1], nid, el.line) from None
        raise
    except ConfigError as exc:
        raise PipelineConfigError(str(exc), nid, el.line) from None


def load_pipeline_file(path, *, strict: bool = True) -> PipelineGraph:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise PipelineConfigError(f"cannot read pipeline {path}: {exc.strerror}") from None
    return load_pipeline(text, strict=strict, base_dir=path.parent)
