"""Compute-graph IR: typed operation nodes over named leaf tensors.

Node ids are dense integers in insertion order, so "all inputs precede
the node" is the topology invariant every scheduler relies on. Leaves
(weights, token ids, cache views) get negative ids and are bound to
concrete buffers only at execution time, which lets one graph serve
any prompt length or cache depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from .errors import GraphError
from .tensor import DType


class OpKind(str, Enum):
    MulMat = "mul_mat"
    EltAdd = "add"
    EltMul = "mul"
    Silu = "silu"
    RmsNorm = "rms_norm"
    Rope = "rope"
    SoftmaxCausal = "soft_max"
    Scale = "scale"
    EmbedLookup = "get_rows"


class Backend(str, Enum):
    Main = "main"
    Accel = "accel"


@dataclass
class LeafSpec:
    """Declared graph input: a named tensor bound at run time."""

    id: int  # negative, unique
    name: str
    dtype: DType | None = None


@dataclass
class Node:
    id: int
    op: OpKind
    inputs: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict)
    tag: str = ""
    layer: int = -1  # -1 for pre/post-layer nodes
    is_weight_matmul: bool = False
    backend: Backend = Backend.Main


def leaf_id(index: int) -> int:
    """Leaf ids are negative: leaf #0 -> -1, leaf #1 -> -2, ..."""
    return -(index + 1)


class Graph:
    """Append-only DAG. Construction is single-threaded; execution treats
    the graph as immutable shared state."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaves: list[LeafSpec] = []
        self._leaf_by_name: dict[str, LeafSpec] = {}
        self.outputs: list[int] = []

    # -- construction -------------------------------------------------------

    def add_leaf(self, name: str, dtype: DType | None = None) -> int:
        if name in self._leaf_by_name:
            raise GraphError(f"duplicate leaf name {name!r}")
        spec = LeafSpec(leaf_id(len(self.leaves)), name, dtype)
        self.leaves.append(spec)
        self._leaf_by_name[name] = spec
        return spec.id

    def leaf(self, name: str) -> LeafSpec:
        return self._leaf_by_name[name]

    def add_node(
        self,
        op: OpKind,
        inputs: tuple[int, ...] | list[int],
        attrs: dict[str, Any] | None = None,
        tag: str = "",
        layer: int = -1,
        is_weight_matmul: bool = False,
    ) -> int:
        nid = len(self.nodes)
        for ref in inputs:
            if ref >= nid:
                raise GraphError(f"unknown input {ref}")
            if ref < 0 and -ref - 1 >= len(self.leaves):
                raise GraphError(f"unknown input {ref}")
        node = Node(nid, op, tuple(int(i) for i in inputs), attrs or {}, tag, layer, is_weight_matmul)
        self.nodes.append(node)
        return nid

    def mark_output(self, nid: int) -> None:
        if not 0 <= nid < len(self.nodes):
            raise GraphError(f"unknown output node {nid}")
        self.outputs.append(nid)

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def node_inputs(self, node: Node) -> list[int]:
        """Node-id inputs only (leaf refs filtered out)."""
        return [i for i in node.inputs if i >= 0]


@dataclass
class Violation:
    node: int
    input: int

    def __str__(self) -> str:
        return f"edge {self.input} -> {self.node} breaks topological order"


def validate_topological(graph: Graph) -> Violation | None:
    """None when every node's inputs precede it (leaves always do);
    otherwise the first offending edge."""
    for node in graph.nodes:
        for ref in node.inputs:
            if ref >= node.id:
                return Violation(node.id, ref)
            if ref < 0 and -ref - 1 >= len(graph.leaves):
                return Violation(node.id, ref)
    return None


@dataclass
class WavefrontSchedule:
    """Partition of node ids into dependency levels. Level k holds nodes
    whose deepest node input sits at level k-1; nodes fed only by leaves
    are level 0."""

    levels: list[list[int]]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_of(self, nid: int) -> int:
        for k, ids in enumerate(self.levels):
            if nid in ids:
                return k
        raise KeyError(nid)


def compute_wavefronts(graph: Graph) -> WavefrontSchedule:
    """level(n) = 1 + max(level of node inputs), leaves below level 0.
    Deterministic: levels list node ids in ascending order."""
    bad = validate_topological(graph)
    if bad is not None:
        raise GraphError(str(bad))
    level = [0] * len(graph.nodes)
    depth = 0
    for node in graph.nodes:
        lv = 0
        for ref in node.inputs:
            if ref >= 0:
                lv = max(lv, level[ref] + 1)
        level[node.id] = lv
        depth = max(depth, lv)
    levels: list[list[int]] = [[] for _ in range(depth + 1)] if graph.nodes else []
    for node in graph.nodes:
        levels[level[node.id]].append(node.id)
    return WavefrontSchedule(levels)


def dump_graph(graph: Graph) -> str:
    """Debug dump, one line per node:
    id<TAB>opkind<TAB>tag<TAB>inputs=[...]<TAB>level=k"""
    sched = compute_wavefronts(graph)
    level = {nid: k for k, ids in enumerate(sched.levels) for nid in ids}
    lines = []
    for node in graph.nodes:
        ins = ",".join(str(i) for i in node.inputs)
        lines.append(
            f"{node.id}\t{node.op.name}\t{node.tag}\tinputs=[{ins}]\tlevel={level[node.id]}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


# -- serialization (structural round-trip) -----------------------------------


def graph_to_dict(graph: Graph) -> dict[str, Any]:
    return {
        "leaves": [
            {"id": lf.id, "name": lf.name, "dtype": lf.dtype.value if lf.dtype else None}
            for lf in graph.leaves
        ],
        "nodes": [
            {
                "id": n.id,
                "op": n.op.value,
                "inputs": list(n.inputs),
                "attrs": dict(n.attrs),
                "tag": n.tag,
                "layer": n.layer,
                "is_weight_matmul": n.is_weight_matmul,
                "backend": n.backend.value,
            }
            for n in graph.nodes
        ],
        "outputs": list(graph.outputs),
    }


def graph_from_dict(data: dict[str, Any]) -> Graph:
    g = Graph()
    for lf in data["leaves"]:
        g.add_leaf(lf["name"], DType(lf["dtype"]) if lf["dtype"] else None)
    for nd in data["nodes"]:
        nid = g.add_node(
            OpKind(nd["op"]),
            tuple(nd["inputs"]),
            dict(nd["attrs"]),
            nd["tag"],
            nd["layer"],
            nd["is_weight_matmul"],
        )
        g.nodes[nid].backend = Backend(nd["backend"])
    for out in data["outputs"]:
        g.mark_output(out)
    return g
