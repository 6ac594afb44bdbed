import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtrack.graph import (
    GATLayer,
    GraphError,
    InteractionModule,
    StarGraph,
    build_star_graph,
    gat_layer,
    interaction_vector,
)
from xtrack.numcore import SeededRng, ShapeError, Tensor


def leaky(x, s):
    return x if x > 0 else s * x


def test_empty_neighborhood_has_only_self_loop():
    g = build_star_graph(0)
    assert g.node_count == 1 and g.edges == ()
    assert g.adjacency().tolist() == [[True]]


def test_standard_star_graph():
    g = build_star_graph(8)
    adj = g.adjacency()
    assert g.node_count == 9
    assert sorted(g.edges) == [(j, 0) for j in range(1, 9)]
    assert adj.sum() == 8 + 9
    # every edge ends at the target or is a self loop
    dst, src = np.nonzero(adj)
    assert np.all((dst == 0) | (dst == src))


def test_serialization_is_stable():
    assert build_star_graph(8).serialize() == build_star_graph(8).serialize()


def test_edge_outside_node_set():
    with pytest.raises(GraphError):
        StarGraph(3, ((5, 0),)).adjacency()


def test_singleton_softmax_passes_own_features():
    layer = GATLayer(3, 4, 2, SeededRng(0), concat=True, activation_slope=0.1)
    layer.bias.data[...] = np.random.default_rng(0).normal(size=4)
    x = np.random.default_rng(1).normal(size=(1, 3))
    out, alpha = gat_layer(Tensor(x), build_star_graph(0), layer, return_attention=True)
    assert np.all(alpha.data == 1.0)
    z = layer.W.data @ x[0] + layer.bias.data
    np.testing.assert_allclose(out.data[0], np.where(z > 0, z, 0.1 * z), rtol=0, atol=1e-15)


def test_identical_neighbors_share_attention():
    layer = GATLayer(3, 4, 2, SeededRng(2))
    x = np.random.default_rng(2).normal(size=(3, 3))
    x[2] = x[1]
    _, alpha = gat_layer(Tensor(x), build_star_graph(2, self_loops=False), layer, return_attention=True)
    np.testing.assert_allclose(alpha.data[..., 0, 1:], 0.5, rtol=0, atol=1e-15)
    _, alpha = gat_layer(Tensor(x), build_star_graph(2), layer, return_attention=True)
    np.testing.assert_allclose(alpha.data[..., 0, 1], alpha.data[..., 0, 2], rtol=0, atol=1e-15)


@pytest.mark.parametrize("concat", [True, False])
def test_gat_matches_scalar_arithmetic(concat):
    rng = np.random.default_rng(21)
    heads, d = 2, 2
    layer = GATLayer(d, 2 * d if concat else d, heads, SeededRng(21), concat=concat)
    layer.bias.data[...] = rng.normal(size=layer.bias.shape)
    graph = build_star_graph(2)
    x = rng.normal(size=(3, d))
    out = gat_layer(Tensor(x), graph, layer).data

    W = layer.W.data
    hd = layer.head_dim
    expected = np.zeros_like(out)
    for i in range(3):
        srcs = [j for j in range(3) if (j, i) in graph.edges or j == i]
        per_head = []
        for h in range(heads):
            Wh = [[sum(W[h * hd + r, c] * x[j, c] for c in range(d)) for r in range(hd)] for j in range(3)]
            s_dst = sum(Wh[i][r] * layer.a_dst.data[h, r, 0] for r in range(hd))
            scores = [leaky(s_dst + sum(Wh[j][r] * layer.a_src.data[h, r, 0] for r in range(hd)), 0.2) for j in srcs]
            top = max(scores)
            w = [np.exp(s - top) for s in scores]
            tot = sum(w)
            per_head.append([sum(w[k] / tot * Wh[j][r] for k, j in enumerate(srcs)) for r in range(hd)])
        row = [v for ph in per_head for v in ph] if concat else [sum(ph[r] for ph in per_head) / heads for r in range(hd)]
        expected[i] = [leaky(v + b, 0.1) for v, b in zip(row, layer.bias.data)]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]))
def test_attention_is_a_distribution(seed, heads):
    rng = np.random.default_rng(seed)
    layer = GATLayer(5, 8, heads, SeededRng(seed))
    graph = build_star_graph(8)
    _, alpha = gat_layer(Tensor(rng.normal(scale=3.0, size=(2, 9, 5))), graph, layer, return_attention=True)
    a = alpha.data
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert np.all(a[..., ~graph.adjacency()] == 0)


def test_concat_requires_divisible_heads():
    with pytest.raises(ShapeError):
        GATLayer(4, 6, 4, SeededRng(0), concat=True)


def test_node_count_mismatch():
    layer = GATLayer(3, 4, 2, SeededRng(0))
    with pytest.raises(ShapeError):
        gat_layer(Tensor(np.zeros((4, 3))), build_star_graph(2), layer)


def test_standard_widths():
    mod = InteractionModule(64, SeededRng(0), heads=4, gat_dim=64, out_dim=64)
    assert mod.gat1.head_dim == 16 and mod.gat1.W.shape == (64, 64)
    g = interaction_vector(Tensor(np.zeros((3, 9, 64))), build_star_graph(8), mod)
    assert g.shape == (3, 64)


def test_zero_states_and_biases_give_zero_interaction():
    mod = InteractionModule(6, SeededRng(0), heads=2, gat_dim=4, out_dim=5)
    g = interaction_vector(Tensor(np.zeros((9, 6))), build_star_graph(8), mod)
    assert np.all(g.data == 0.0)


@given(st.integers(0, 10_000), st.permutations(list(range(1, 9))))
def test_neighbor_order_does_not_matter(seed, perm):
    rng = np.random.default_rng(seed)
    mod = InteractionModule(6, SeededRng(seed), heads=2, gat_dim=4, out_dim=5)
    h = rng.normal(size=(9, 6))
    graph = build_star_graph(8)
    g1 = interaction_vector(Tensor(h), graph, mod).data
    g2 = interaction_vector(Tensor(h[[0] + perm]), graph, mod).data
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-14)


def test_identical_neighbor_swap_is_exact():
    mod = InteractionModule(6, SeededRng(3), heads=2, gat_dim=4, out_dim=5)
    h = np.random.default_rng(3).normal(size=(9, 6))
    h[4] = h[2]
    swapped = h[[0, 1, 4, 3, 2, 5, 6, 7, 8]]
    graph = build_star_graph(8)
    assert np.array_equal(interaction_vector(Tensor(h), graph, mod).data,
                          interaction_vector(Tensor(swapped), graph, mod).data)


def test_removed_edge_gives_zero_sensitivity():
    mod = InteractionModule(6, SeededRng(5), heads=2, gat_dim=4, out_dim=5)
    graph = build_star_graph(8).without_edge(3)
    h = Tensor(np.random.default_rng(5).normal(size=(9, 6)), requires_grad=True)
    w = np.random.default_rng(6).normal(size=5)
    (interaction_vector(h, graph, mod) * w).sum().backward()
    assert np.all(h.grad[3] == 0.0)
    assert np.any(h.grad[1] != 0.0)
    base = interaction_vector(Tensor(h.data), graph, mod).data
    for k in range(6):
        moved = h.data.copy()
        moved[3, k] += 1.0
        assert np.array_equal(interaction_vector(Tensor(moved), graph, mod).data, base)
