"""Star-graph interaction modeling with multi-head graph attention."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numcore import Linear, Module, ShapeError, Tensor, uniform_init
from .numcore import tensor as T

ATTENTION_SLOPE = 0.2
OUTPUT_SLOPE = 0.1


class GraphError(ValueError):
    """Edge list inconsistent with the node set."""


@dataclass(frozen=True)
class StarGraph:
    node_count: int
    edges: tuple  # (src, dst) pairs, neighbor -> target
    self_loops: bool = True

    def adjacency(self) -> np.ndarray:
        """Boolean (dst, src) matrix; row i lists the nodes node i attends to."""
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for src, dst in self.edges:
            if not (0 <= src < self.node_count and 0 <= dst < self.node_count):
                raise GraphError(f"edge ({src} -> {dst}) references a node outside 0..{self.node_count - 1}")
            adj[dst, src] = True
        if self.self_loops:
            adj[np.arange(self.node_count), np.arange(self.node_count)] = True
        return adj

    def without_edge(self, src: int) -> "StarGraph":
        return StarGraph(self.node_count, tuple(e for e in self.edges if e[0] != src), self.self_loops)

    def serialize(self) -> str:
        return json.dumps({"node_count": self.node_count, "edges": [list(e) for e in self.edges], "self_loops": self.self_loops})


def build_star_graph(num_neighbors: int, self_loops: bool = True) -> StarGraph:
    if num_neighbors < 0:
        raise ValueError("num_neighbors must be >= 0")
    return StarGraph(num_neighbors + 1, tuple((j, 0) for j in range(1, num_neighbors + 1)), self_loops)


class GATLayer(Module):
    """Multi-head graph attention (shared linear map, LeakyReLU pair scoring).

    With ``concat`` the heads are concatenated (out_dim = heads * head_dim),
    otherwise each head has width out_dim and they are averaged.
    """

    def __init__(self, in_dim, out_dim, heads, rng, concat=True, activation_slope=OUTPUT_SLOPE,
                 attention_slope=ATTENTION_SLOPE):
        super().__init__()
        if concat and out_dim % heads:
            raise ShapeError(f"out_dim {out_dim} is not divisible by {heads} heads")
        self.in_dim, self.out_dim, self.heads, self.concat = in_dim, out_dim, heads, concat
        self.head_dim = out_dim // heads if concat else out_dim
        self.activation_slope = activation_slope
        self.attention_slope = attention_slope
        width = heads * self.head_dim
        self.W = self.add_param("W", uniform_init(rng, (width, in_dim), in_dim))
        self.a_dst = self.add_param("a_dst", uniform_init(rng, (heads, self.head_dim, 1), self.head_dim))
        self.a_src = self.add_param("a_src", uniform_init(rng, (heads, self.head_dim, 1), self.head_dim))
        self.bias = self.add_param("bias", np.zeros(out_dim))

    def __call__(self, node_feats, graph, return_attention=False):
        return gat_layer(node_feats, graph, self, return_attention=return_attention)


def gat_layer(node_feats: Tensor, graph: StarGraph, params: GATLayer, return_attention=False):
    """One attention layer over (V, d_in) or (B, V, d_in) node features."""
    squeeze = node_feats.ndim == 2
    x = node_feats.reshape((1,) + node_feats.shape) if squeeze else node_feats
    B, V, din = x.shape
    if V != graph.node_count:
        raise ShapeError(f"{V} node feature rows but the graph has {graph.node_count} nodes")
    if din != params.in_dim:
        raise ShapeError(f"node features have width {din}, layer expects {params.in_dim}")
    adj = graph.adjacency()
    H, dh = params.heads, params.head_dim

    wh = T.linear(x, params.W).reshape((B, V, H, dh)).transpose((0, 2, 1, 3))  # (B, H, V, dh)
    s_dst = T.matmul(wh, params.a_dst)  # (B, H, V, 1)
    s_src = T.matmul(wh, params.a_src).transpose((0, 1, 3, 2))  # (B, H, 1, V)
    scores = T.leaky_relu(s_dst + s_src, params.attention_slope)  # (B, H, dst, src)
    alpha = T.masked_softmax(scores, adj, axis=-1)
    agg = T.matmul(alpha, wh)  # (B, H, V, dh)
    if params.concat:
        out = agg.transpose((0, 2, 1, 3)).reshape((B, V, H * dh))
    else:
        out = agg.mean(axis=1)
    out = out + params.bias
    if params.activation_slope is not None:
        out = T.leaky_relu(out, params.activation_slope)
    if squeeze:
        out = out.reshape(out.shape[1:])
    if return_attention:
        return out, alpha
    return out


class InteractionModule(Module):
    """Two GAT layers then a LeakyReLU projection, read out at the target node."""

    def __init__(self, in_dim, rng, heads=4, gat_dim=64, out_dim=64, concat2=True, slope=OUTPUT_SLOPE):
        super().__init__()
        self.gat1 = self.add_child("gat1", GATLayer(in_dim, gat_dim, heads, rng, concat=True, activation_slope=slope))
        self.gat2 = self.add_child("gat2", GATLayer(gat_dim, gat_dim, heads, rng, concat=concat2, activation_slope=None))
        self.proj = self.add_child("proj", Linear(gat_dim, out_dim, rng))
        self.slope = slope
        self.out_dim = out_dim

    def __call__(self, hidden, graph):
        return interaction_vector(hidden, graph, self)


def interaction_vector(hidden_states: Tensor, graph: StarGraph, params: InteractionModule) -> Tensor:
    """g_T for (V, d) or (B, V, d) encoder states; returns (d_g,) or (B, d_g)."""
    z = params.gat1(hidden_states, graph)
    z = params.gat2(z, graph)
    target = z[0] if z.ndim == 2 else z[:, 0]
    return T.leaky_relu(params.proj(target), params.slope)
