import numpy as np
import pytest

from report_kg import tensor as T
from report_kg.gat import (GatLayerParams, GatStack, attention_scores, encode,
                           gat_layer_forward, init_gat_stack)
from report_kg.rng import derive_rng

from oracles import central_difference, gat_layer_reference, relative_error


def toy_layer(rng, in_dim, out_dim, slope=0.2):
    return GatLayerParams(
        W=T.Tensor(rng.standard_normal((out_dim, in_dim)), requires_grad=True),
        W_att=T.Tensor(rng.standard_normal((2 * out_dim, 1)), requires_grad=True),
        leaky_slope=slope)


def path_adjacency(n):
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return adj


def random_graph(rng, n, p=0.4):
    adj = rng.random((n, n)) < p
    adj = np.triu(adj, 1)
    adj = adj | adj.T
    return adj


def test_zero_attention_vector_gives_uniform_neighbourhood_attention():
    rng = derive_rng(0, "gat-uniform")
    layer = toy_layer(rng, 3, 4)
    layer.W_att = T.Tensor(np.zeros((8, 1)), requires_grad=True)
    feats = rng.standard_normal((4, 3))
    alpha = attention_scores(layer, feats, path_adjacency(4)).data
    # node 0 neighbourhood: {0, 1} -> 0.5 each; node 1: {0, 1, 2} -> 1/3 each
    assert np.allclose(alpha[0], [0.5, 0.5, 0.0, 0.0])
    assert np.allclose(alpha[1], [1 / 3, 1 / 3, 1 / 3, 0.0])


def test_single_node_graph_attention_is_one():
    rng = derive_rng(0, "gat-single")
    layer = toy_layer(rng, 3, 2)
    alpha = attention_scores(layer, rng.standard_normal((1, 3)),
                             np.zeros((1, 1), dtype=bool))
    assert np.array_equal(alpha.data, [[1.0]])


def test_attention_matches_reference_on_path_graph():
    rng = derive_rng(1, "gat-ref")
    layer = toy_layer(rng, 3, 4)
    feats = rng.standard_normal((3, 3))
    adj = path_adjacency(3)
    ref_alpha, ref_out = gat_layer_reference(
        feats.tolist(), adj.tolist(), layer.W.data.tolist(),
        layer.W_att.data.ravel().tolist(), layer.leaky_slope)
    alpha = attention_scores(layer, feats, adj).data
    out = gat_layer_forward(layer, feats, adj).data
    assert np.allclose(alpha, ref_alpha, atol=1e-10)
    assert np.allclose(out, ref_out, atol=1e-10)


def test_forward_matches_reference_on_random_graphs():
    for trial in range(20):
        rng = derive_rng(trial, "gat-rand-ref")
        n = int(rng.integers(2, 9))
        layer = toy_layer(rng, 5, 3)
        feats = rng.standard_normal((n, 5))
        adj = random_graph(rng, n)
        ref_alpha, ref_out = gat_layer_reference(
            feats.tolist(), adj.tolist(), layer.W.data.tolist(),
            layer.W_att.data.ravel().tolist(), layer.leaky_slope)
        assert np.allclose(attention_scores(layer, feats, adj).data, ref_alpha,
                           atol=1e-10)
        assert np.allclose(gat_layer_forward(layer, feats, adj).data, ref_out,
                           atol=1e-10)


def test_attention_rows_sum_to_one():
    rng = derive_rng(2, "gat-rows")
    layer = toy_layer(rng, 4, 6)
    feats = rng.standard_normal((7, 4))
    alpha = attention_scores(layer, feats, random_graph(rng, 7)).data
    assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) < 1e-9


def test_uniform_attention_aggregates_neighbour_mean():
    # 2-node clique, zero attention vector, identity projection, positive feats
    layer = GatLayerParams(W=T.Tensor(np.eye(2)), W_att=T.Tensor(np.zeros((4, 1))))
    feats = np.array([[1.0, 2.0], [3.0, 4.0]])
    adj = np.array([[False, True], [True, False]])
    out = gat_layer_forward(layer, feats, adj).data
    assert np.allclose(out, [[2.0, 3.0], [2.0, 3.0]])  # ELU identity when positive


def test_zero_features_stay_zero():
    layer = GatLayerParams(W=T.Tensor(np.eye(3)), W_att=T.Tensor(np.zeros((6, 1))))
    out = gat_layer_forward(layer, np.zeros((4, 3)), random_graph(
        derive_rng(0, "zf"), 4))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_eval_mode_is_deterministic_and_dropout_free():
    stack = init_gat_stack(2, 5, 8, seed=3)
    rng = derive_rng(0, "eval")
    feats = rng.standard_normal((6, 5))
    adj = random_graph(rng, 6)
    a = encode(stack, feats, adj, train=False)
    b = encode(stack, feats, adj, train=False)
    assert np.array_equal(a.data, b.data)


def test_train_mode_dropout_changes_output_but_is_seeded():
    stack = init_gat_stack(1, 5, 8, seed=3, dropout=0.5)
    rng = derive_rng(0, "train")
    feats = rng.standard_normal((6, 5))
    adj = random_graph(rng, 6)
    eval_out = encode(stack, feats, adj, train=False).data
    t1 = encode(stack, feats, adj, train=True, rng=derive_rng(1, "d")).data
    t2 = encode(stack, feats, adj, train=True, rng=derive_rng(1, "d")).data
    assert np.array_equal(t1, t2)
    assert not np.array_equal(t1, eval_out)


def test_single_layer_stack_equals_layer_forward():
    stack = init_gat_stack(1, 4, 6, seed=5)
    rng = derive_rng(0, "one")
    feats = rng.standard_normal((5, 4))
    adj = random_graph(rng, 5)
    assert np.array_equal(encode(stack, feats, adj).data,
                          gat_layer_forward(stack.layers[0], feats, adj,
                                            dropout=stack.dropout).data)


def test_stack_shapes_and_finiteness():
    stack = init_gat_stack(3, 6, 16, seed=7)
    rng = derive_rng(0, "shapes")
    feats = rng.standard_normal((6, 6))
    out = encode(stack, feats, adjacency=random_graph(rng, 6)).data
    assert out.shape == (6, 16)
    assert np.all(np.isfinite(out))


def test_permutation_equivariance_is_exact():
    for trial in range(30):
        rng = derive_rng(trial, "perm")
        n = int(rng.integers(2, 10))
        stack = init_gat_stack(int(rng.integers(1, 4)), 5, 7, seed=trial)
        feats = rng.standard_normal((n, 5))
        adj = random_graph(rng, n)
        perm = rng.permutation(n)
        base = encode(stack, feats, adj).data
        permuted = encode(stack, feats[perm], adj[np.ix_(perm, perm)]).data
        assert np.array_equal(permuted, base[perm]), f"trial {trial} not exact"


def test_locality_outside_receptive_field():
    # path 0-1-2-3-4; with one layer, node 0 sees only {0, 1}
    rng = derive_rng(9, "local")
    stack = init_gat_stack(1, 4, 5, seed=2)
    feats = rng.standard_normal((5, 4))
    adj = path_adjacency(5)
    base = encode(stack, feats, adj).data
    far = feats.copy()
    far[3:] = rng.standard_normal((2, 4))
    moved = encode(stack, far, adj).data
    assert np.array_equal(moved[0], base[0])
    assert np.array_equal(moved[1], base[1])
    assert not np.array_equal(moved[3], base[3])


def test_two_layer_receptive_field_grows():
    rng = derive_rng(10, "local2")
    stack = init_gat_stack(2, 4, 5, seed=2)
    feats = rng.standard_normal((5, 4))
    adj = path_adjacency(5)
    base = encode(stack, feats, adj).data
    far = feats.copy()
    far[4] = rng.standard_normal(4)
    moved = encode(stack, far, adj).data
    assert np.array_equal(moved[0], base[0])  # node 4 is 4 hops from node 0
    assert not np.array_equal(moved[2], base[2])  # 2 hops: reachable


def test_layer_dims_first_layer_maps_input_rest_hidden():
    stack = init_gat_stack(3, 200, 512, seed=0)
    assert stack.layers[0].in_dim == 200
    assert all(l.in_dim == 512 for l in stack.layers[1:])
    assert all(l.out_dim == 512 for l in stack.layers)
    assert all(l.W_att.shape == (1024, 1) for l in stack.layers)


def test_gradients_through_layer_match_finite_differences():
    rng = derive_rng(11, "gat-grad")
    n, fin, fout = 4, 3, 3
    feats = rng.standard_normal((n, fin))
    adj = random_graph(rng, n)
    w0 = rng.standard_normal((fout, fin))
    a0 = rng.standard_normal((2 * fout, 1))

    def build(w, a):
        layer = GatLayerParams(W=w, W_att=a)
        out = gat_layer_forward(layer, feats, adj)
        return (out * out).sum()

    wt = T.Tensor(w0.copy(), requires_grad=True)
    at = T.Tensor(a0.copy(), requires_grad=True)
    build(wt, at).backward()

    def scalar(w, a):
        return float(build(T.Tensor(w), T.Tensor(a)).data)

    num_w, num_a = central_difference(scalar, [w0.copy(), a0.copy()])
    assert relative_error(wt.grad, num_w) <= 1e-4
    assert relative_error(at.grad, num_a) <= 1e-4
