"""Dataflow graph: nodes, parameters, threaded runtime and XML loading."""

from .nodes import NODE_KINDS, Node, NodeContext, register_node_kind
from .params import ParameterSpec, continuous, discrete, flag, text
from .runtime import Ack, NodeStats, PipelineGraph, RunReport, State
from .xmlconfig import load_layout, load_pipeline, load_pipeline_file

__all__ = [
    "NODE_KINDS",
    "Node",
    "NodeContext",
    "register_node_kind",
    "ParameterSpec",
    "continuous",
    "discrete",
    "flag",
    "text",
    "Ack",
    "NodeStats",
    "PipelineGraph",
    "RunReport",
    "State",
    "load_layout",
    "load_pipeline",
    "load_pipeline_file",
]
