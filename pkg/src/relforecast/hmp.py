"""Heterogeneous spatial graphs and the heterogeneous message-passing layer.

A layer computes, for every edge ``i -> j`` of class ``c``, the message
``W_c [x_i ; e_ij] + b_c``; takes the elementwise max over *all* incoming
messages of ``j`` regardless of class; concatenates that with a linear
projection of ``x_j``; fuses with another linear layer; and finally updates
``x_j`` with a GRU cell. Nodes without incoming edges receive a zero message.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm


@dataclass
class EdgeSet:
    src_class: str
    dst_class: str
    src: np.ndarray
    dst: np.ndarray
    attr: dm.Tensor
    attr_index: np.ndarray | None = None
    """Optional row of ``attr`` per edge, so repeated edges can share attribute rows."""

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        if self.src.shape != self.dst.shape:
            raise ValueError("src/dst index arrays differ in length")
        if self.attr_index is None:
            if self.attr.shape[0] != len(self.src):
                raise ValueError("one edge attribute row per edge required")
        else:
            self.attr_index = np.asarray(self.attr_index, dtype=np.int64).reshape(-1)
            if self.attr_index.shape != self.src.shape:
                raise ValueError("one attribute index per edge required")
            if len(self.attr_index) and (self.attr_index.min() < 0 or self.attr_index.max() >= self.attr.shape[0]):
                raise ValueError("attribute index out of range")

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class HeteroGraph:
    """Typed spatial graph: per-class node poses and features, typed edges."""

    features: dict[str, dm.Tensor]
    edges: dict[str, EdgeSet]
    centroids: dict[str, np.ndarray] = field(default_factory=dict)
    headings: dict[str, np.ndarray] = field(default_factory=dict)

    def num_nodes(self, cls: str) -> int:
        return self.features[cls].shape[0]

    def validate(self) -> None:
        widths = {es.attr.shape[1] for es in self.edges.values() if len(es)}
        if len(widths) > 1:
            raise ValueError(f"edge attribute widths differ: {sorted(widths)}")
        for name, es in self.edges.items():
            for cls, idx in ((es.src_class, es.src), (es.dst_class, es.dst)):
                if cls not in self.features:
                    raise ValueError(f"edge class {name}: unknown node class {cls!r}")
                if len(idx) and (idx.min() < 0 or idx.max() >= self.num_nodes(cls)):
                    raise ValueError(f"edge class {name}: index out of range for {cls!r}")

    def with_features(self, features: dict[str, dm.Tensor]) -> "HeteroGraph":
        return HeteroGraph(features, self.edges, self.centroids, self.headings)


class HMPLayer:
    def __init__(self, store: dm.ParamStore, name: str, node_widths: dict[str, int],
                 edge_classes: dict[str, tuple[str, str]], attr_width: int, hidden: int):
        self.node_widths = dict(node_widths)
        self.edge_classes = dict(edge_classes)
        self.attr_width = attr_width
        self.hidden = hidden
        self.msg_node = {}
        self.msg_attr = {}
        for ec in sorted(edge_classes):
            src_cls, _ = edge_classes[ec]
            self.msg_node[ec] = dm.Linear(store, f"{name}.msg.{ec}.x", node_widths[src_cls], hidden)
            self.msg_attr[ec] = dm.Linear(store, f"{name}.msg.{ec}.e", attr_width, hidden, bias=False)
        self.self_proj = {}
        self.fuse = {}
        self.gru = {}
        for cls in sorted(node_widths):
            w = node_widths[cls]
            self.self_proj[cls] = dm.Linear(store, f"{name}.self.{cls}", w, hidden)
            self.fuse[cls] = dm.Linear(store, f"{name}.fuse.{cls}", 2 * hidden, hidden)
            self.gru[cls] = dm.GRUCell(store, f"{name}.gru.{cls}", hidden, w)

    def __call__(self, g: HeteroGraph) -> dict[str, dm.Tensor]:
        return hmp_layer(g, self)


def hmp_layer(g: HeteroGraph, layer: HMPLayer) -> dict[str, dm.Tensor]:
    """One message-passing round updating every node class simultaneously."""
    for cls, x in g.features.items():
        if cls in layer.node_widths and x.shape[1] != layer.node_widths[cls]:
            raise ValueError(f"node class {cls!r}: width {x.shape[1]} != layer width {layer.node_widths[cls]}")
    # project source features once per class and edge class, then gather per edge:
    # W [x_i ; e] = (x W_x)[i] + e W_e
    incoming: dict[str, list[tuple[dm.Tensor, np.ndarray]]] = {c: [] for c in g.features}
    for ec in sorted(g.edges):
        es = g.edges[ec]
        if ec not in layer.edge_classes:
            raise ValueError(f"layer has no weights for edge class {ec!r}")
        if (es.src_class, es.dst_class) != layer.edge_classes[ec]:
            raise ValueError(f"edge class {ec!r} endpoint classes do not match the layer")
        if len(es) == 0:
            continue
        if es.attr.shape[1] != layer.attr_width:
            raise ValueError(f"edge class {ec!r}: attribute width {es.attr.shape[1]} != {layer.attr_width}")
        node_part = layer.msg_node[ec](g.features[es.src_class])
        attr_part = layer.msg_attr[ec](es.attr)
        if es.attr_index is not None:
            # the projection is linear per row, so project shared rows once and gather
            attr_part = dm.gather_rows(attr_part, es.attr_index)
        msg = dm.add(dm.gather_rows(node_part, es.src), attr_part)
        incoming[es.dst_class].append((msg, es.dst))

    out = {}
    for cls in sorted(g.features):
        x = g.features[cls]
        n = x.shape[0]
        if cls not in layer.node_widths:
            out[cls] = x
            continue
        if incoming[cls]:
            msgs = dm.concat([m for m, _ in incoming[cls]], axis=0) if len(incoming[cls]) > 1 else incoming[cls][0][0]
            dst = np.concatenate([d for _, d in incoming[cls]])
            agg = dm.segment_max(msgs, dst, n)
        else:
            agg = dm.Tensor(np.zeros((n, layer.hidden), dtype=x.dtype))
        fused = dm.relu(layer.fuse[cls](dm.concat([agg, layer.self_proj[cls](x)], axis=1)))
        out[cls] = layer.gru[cls](x, fused)
    return out


def hmp_stack(g: HeteroGraph, layers: list[HMPLayer]) -> dict[str, dm.Tensor]:
    feats = g.features
    for layer in layers:
        feats = hmp_layer(g.with_features(feats), layer)
    return feats
