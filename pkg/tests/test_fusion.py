import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mib import tensor as T
from mib.errors import ConfigurationError
from mib.fusion import (
    Fusion,
    FusionKind,
    GraphFusion,
    TensorFusion,
    fuse_add,
    fuse_concat,
    fuse_mul,
    graph_fusion,
    outer_product_features,
    tensor_fusion,
)
from mib.gradcheck import finite_difference_check


def test_concat_examples():
    assert fuse_concat([1.0], [2.0], [3.0]).data.tolist() == [1.0, 2.0, 3.0]
    assert not np.any(fuse_concat(np.zeros(2), np.zeros(3), np.zeros(1)).data)
    assert fuse_concat(np.zeros(2), np.zeros(3), np.zeros(1)).shape == (6,)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)), st.integers(0, 2**31))
def test_concat_slices_recover_inputs_exactly(dims, seed):
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=(2, d)) for d in dims]
    out = fuse_concat(*xs).data
    offsets = np.cumsum((0,) + dims)
    for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
        assert np.array_equal(out[:, lo:hi], x)


def test_concat_order_matters():
    a, b = np.array([1.0]), np.array([2.0])
    assert fuse_concat(a, b).data.tolist() != fuse_concat(b, a).data.tolist()


def test_add_and_mul_examples():
    assert fuse_add([1.0, 2.0], [3.0, 4.0], [5.0, 6.0]).data.tolist() == [9.0, 12.0]
    assert fuse_mul([2.0, 2.0], [3.0, 1.0], [1.0, 4.0]).data.tolist() == [6.0, 8.0]
    assert not np.any(fuse_mul([2.0, 3.0], [0.0, 0.0], [5.0, 1.0]).data)


def test_add_mul_unequal_dims():
    with pytest.raises(ConfigurationError):
        fuse_add([1.0], [1.0, 2.0], [1.0])
    with pytest.raises(ConfigurationError):
        fuse_mul([1.0], [1.0, 2.0], [1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_add_mul_permutation_invariant(d, seed):
    rng = np.random.default_rng(seed)
    xs = [rng.integers(-4, 5, size=d).astype(float) for _ in range(3)]
    base_add, base_mul = fuse_add(*xs).data, fuse_mul(*xs).data
    for perm in itertools.permutations(xs):
        assert np.array_equal(fuse_add(*perm).data, base_add)
        assert np.array_equal(fuse_mul(*perm).data, base_mul)


def test_outer_product_length_for_random_triples():
    rng = np.random.default_rng(0)
    for _ in range(10):
        da, dv, dl = (int(v) for v in rng.integers(1, 7, size=3))
        feats = outer_product_features(np.ones(da), np.ones(dv), np.ones(dl))
        assert feats.shape == ((da + 1) * (dv + 1) * (dl + 1),)
        assert TensorFusion((da, dv, dl), 4, "t", rng).pre_dim == (da + 1) * (dv + 1) * (dl + 1)


def test_outer_product_of_zeros_has_single_corner():
    feats = outer_product_features(np.zeros(2), np.zeros(2), np.zeros(2)).data
    assert feats.shape == (27,)
    assert np.count_nonzero(feats) == 1 and feats[-1] == 1.0


def test_unimodal_slices_survive_in_outer_product():
    rng = np.random.default_rng(1)
    xa, xv, xl = rng.normal(size=3), rng.normal(size=2), rng.normal(size=4)
    cube = outer_product_features(xa, xv, xl).data.reshape(4, 3, 5)
    assert np.array_equal(cube[:, 2, 4], np.append(xa, 1.0))
    assert np.array_equal(cube[3, :, 4], np.append(xv, 1.0))
    assert np.array_equal(cube[3, 2, :], np.append(xl, 1.0))


def test_outer_product_matches_einsum():
    rng = np.random.default_rng(2)
    xs = [rng.normal(size=(3, d)) for d in (2, 3, 2)]
    ext = [np.hstack([x, np.ones((3, 1))]) for x in xs]
    ref = np.einsum("ni,nj,nk->nijk", *ext).reshape(3, -1)
    np.testing.assert_allclose(outer_product_features(*xs).data, ref, rtol=0, atol=1e-15)


def test_tensor_fusion_projects_the_outer_product():
    rng = np.random.default_rng(3)
    tf = TensorFusion((2, 2, 3), 5, "t", rng)
    xs = [rng.normal(size=d) for d in (2, 2, 3)]
    feats = outer_product_features(*xs).data
    expected = tf.proj.weight.data @ feats + tf.proj.bias.data
    np.testing.assert_allclose(tensor_fusion(*xs, tf).data, expected, rtol=0, atol=1e-13)


def _graph_reference(g: GraphFusion, xs):
    nodes = list(xs)
    W, b = g.pair.weight.data, g.pair.bias.data
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        nodes.append(W @ (xs[i] * xs[j]) + b)
    scores = np.array([g.score.data @ v for v in nodes])
    alpha = np.exp(scores - scores.max())
    alpha /= alpha.sum()
    mixed = sum(a * v for a, v in zip(alpha, nodes))
    return g.proj.weight.data @ mixed + g.proj.bias.data, alpha


def test_graph_fusion_matches_straight_line_formula():
    rng = np.random.default_rng(4)
    g = GraphFusion(3, 3, 4, "g", rng)
    g.pair.bias.data[...] = rng.normal(size=3)
    g.proj.bias.data[...] = rng.normal(size=4)
    xs = [rng.normal(size=3) for _ in range(3)]
    expected, _ = _graph_reference(g, xs)
    np.testing.assert_allclose(graph_fusion(*xs, g).data, expected, rtol=0, atol=1e-13)


def test_graph_fusion_batch_matches_rows():
    rng = np.random.default_rng(5)
    g = GraphFusion(2, 3, 3, "g", rng)
    X = [rng.normal(size=(4, 2)) for _ in range(3)]
    batch = g(*X).data
    for n in range(4):
        expected, _ = _graph_reference(g, [x[n] for x in X])
        np.testing.assert_allclose(batch[n], expected, rtol=0, atol=1e-13)


def test_graph_fusion_equal_scores_give_uniform_weights():
    g = GraphFusion(3, 3, 2, "g", np.random.default_rng(6))
    g.score.data[...] = 0.0
    xs = [T.as_tensor(np.random.default_rng(7).normal(size=3)) for _ in range(3)]
    alpha = g.attention(g.vertices(xs)).data
    np.testing.assert_allclose(alpha, 1 / 6, rtol=0, atol=1e-15)


def test_graph_fusion_zero_inputs_zero_output():
    g = GraphFusion(3, 3, 2, "g", np.random.default_rng(8))
    assert not np.any(g(np.zeros(3), np.zeros(3), np.zeros(3)).data)


def test_graph_fusion_unequal_dims():
    with pytest.raises(ConfigurationError):
        Fusion(FusionKind.GRAPH, (2, 3, 2), 4, "g", np.random.default_rng(0))


@pytest.mark.parametrize("kind", ["tensor", "graph"])
def test_parameterized_fusions_gradients(kind):
    rng = np.random.default_rng(9)
    fusion = Fusion(kind, (2, 2, 2), 3, "f", rng)
    xs = [T.Parameter(rng.normal(size=(2, 2)), f"x{i}") for i in range(3)]
    w = rng.normal(size=(2, 3))
    params = fusion.parameters() + xs
    assert finite_difference_check(lambda: T.tsum(fusion(xs) * w), params) < 1e-4


def test_fusion_kind_parsing():
    assert FusionKind.parse("Concat") is FusionKind.CONCAT
    assert FusionKind.parse(FusionKind.POE) is FusionKind.POE
    with pytest.raises(ConfigurationError):
        FusionKind.parse("attention")


def test_fusion_output_dims():
    rng = np.random.default_rng(0)
    assert Fusion("concat", (2, 3, 4), 5, "f", rng).out_dim == 9
    assert Fusion("add", (3, 3, 3), 5, "f", rng).out_dim == 3
    assert Fusion("tensor", (2, 3, 4), 5, "f", rng).out_dim == 5
    with pytest.raises(ConfigurationError):
        Fusion("poe", (2, 2, 2), 5, "f", rng)
