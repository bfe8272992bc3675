import numpy as np
import pytest

from beliefgraph.autodiff import (
    ShapeMismatch,
    constant,
    grad_check,
    mean_all,
    mul,
    tensor,
)
from beliefgraph.layers import (
    BidirectionalAggregator,
    Dense,
    FeedForward,
    GCNLayer,
    GraphBatch,
    LayerNorm,
    MultiHeadAttention,
    PointerSoftmax,
    RGCNLayer,
    TransformerDecoderBlock,
    TransformerEncoderBlock,
    causal_mask,
    gcn_adjacency,
    rgcn_adjacency,
    sinusoidal_positions,
)

GC_TOL = 1e-3


def np_softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_dense(d, x):
    return x @ d.w.data + d.b.data


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def test_sinusoidal_positions_shape_and_range():
    table = sinusoidal_positions(7, 8)
    assert table.shape == (7, 8)
    assert np.all(np.abs(table) <= 1.0)
    assert np.allclose(table[0, 0::2], 0.0) and np.allclose(table[0, 1::2], 1.0)
    assert np.array_equal(table, sinusoidal_positions(7, 8))


def test_causal_mask():
    mask = causal_mask(3)
    assert np.all(mask[np.tril_indices(3)] == 0.0)
    assert np.all(np.isneginf(mask[np.triu_indices(3, k=1)]))


def test_attention_single_key_ignores_query():
    rng = np.random.default_rng(0)
    attn = MultiHeadAttention(rng, 8, 2)
    kv = tensor(rand(rng, 1, 8))
    out_a = attn(tensor(rand(rng, 3, 8)), kv, kv)
    out_b = attn(tensor(rand(rng, 3, 8)), kv, kv)
    # every query row attends the one key with weight 1
    assert np.allclose(out_a.data[0], out_a.data[1], atol=1e-6)
    assert np.allclose(out_a.data, out_b.data, atol=1e-6)


def test_attention_mask_collapses_to_single_key():
    rng = np.random.default_rng(1)
    attn = MultiHeadAttention(rng, 8, 2)
    q = tensor(rand(rng, 2, 8))
    k = tensor(rand(rng, 4, 8))
    v = tensor(rand(rng, 4, 8))
    mask = np.full((2, 4), -np.inf, dtype=np.float32)
    mask[:, 2] = 0.0
    masked = attn(q, k, v, mask=mask)
    only = attn(q, tensor(v.data[2:3] * 0 + k.data[2:3]), tensor(v.data[2:3]), mask=None)
    assert np.allclose(masked.data, only.data, atol=1e-5)


def test_attention_rejects_bad_head_split():
    with pytest.raises(ShapeMismatch):
        MultiHeadAttention(np.random.default_rng(0), 10, 4)


@pytest.mark.parametrize("seed", range(3))
def test_attention_grad_check(seed):
    rng = np.random.default_rng(100 + seed)
    attn = MultiHeadAttention(rng, 8, 2)
    kv = constant(rand(rng, 3, 8))
    probe = constant(rand(rng, 2, 8))
    assert grad_check(lambda x: mean_all(mul(attn(x, kv, kv), probe)), rand(rng, 2, 8)) < GC_TOL

    x_fixed = constant(rand(rng, 2, 8))

    def through_param(w):
        attn.wq[0] = w
        return mean_all(mul(attn(x_fixed, kv, kv), probe))

    assert grad_check(through_param, attn.wq[0].data.copy()) < GC_TOL


def test_encoder_block_zeroed_projections_is_identity():
    rng = np.random.default_rng(2)
    block = TransformerEncoderBlock(rng, 8, 2, 16)
    block.attn.out.w.data[:] = 0.0
    block.ff.drop.w.data[:] = 0.0
    x = rand(rng, 4, 8)
    assert np.array_equal(block(tensor(x)).data, x)


@pytest.mark.parametrize("seed", range(3))
def test_encoder_block_grad_check(seed):
    rng = np.random.default_rng(200 + seed)
    block = TransformerEncoderBlock(rng, 8, 2, 16)
    probe = constant(rand(rng, 3, 8))
    assert grad_check(lambda x: mean_all(mul(block(x), probe)), rand(rng, 3, 8)) < GC_TOL


def test_decoder_block_causality():
    rng = np.random.default_rng(3)
    block = TransformerDecoderBlock(rng, 8, 2, 16)
    memory = tensor(rand(rng, 5, 8))
    x = rand(rng, 4, 8)
    base = block(tensor(x), memory, causal_mask(4)).data.copy()
    bumped = x.copy()
    bumped[2] += 1.0
    out = block(tensor(bumped), memory, causal_mask(4)).data
    assert np.array_equal(out[:2], base[:2])
    assert not np.array_equal(out[2:], base[2:])


@pytest.mark.parametrize("seed", range(3))
def test_decoder_block_grad_check(seed):
    rng = np.random.default_rng(300 + seed)
    block = TransformerDecoderBlock(rng, 8, 2, 16)
    memory = constant(rand(rng, 3, 8))
    probe = constant(rand(rng, 2, 8))
    mask = causal_mask(2)
    assert grad_check(
        lambda x: mean_all(mul(block(x, memory, mask), probe)), rand(rng, 2, 8)
    ) < GC_TOL


def test_graph_batch_validates_indices():
    with pytest.raises(ShapeMismatch):
        GraphBatch(((1,), (2,)), ((0, 2, 0),), 3)
    with pytest.raises(ShapeMismatch):
        GraphBatch(((1,), (2,)), ((0, 1, 3),), 3)


def test_gcn_adjacency_two_nodes():
    batch = GraphBatch(((1,), (2,)), ((0, 1, 0),), 1)
    adj = gcn_adjacency(batch)
    assert np.allclose(adj, [[0.5, 0.5], [0.5, 0.5]])


def test_gcn_isolated_node_identity():
    rng = np.random.default_rng(4)
    layer = GCNLayer(rng, 4)
    layer.proj.w.data[:] = np.eye(4, dtype=np.float32)
    layer.proj.b.data[:] = 0.0
    batch = GraphBatch(((1,),), (), 1)
    h = np.abs(rand(rng, 1, 4)) + 0.1
    out = layer(tensor(h), gcn_adjacency(batch))
    assert np.allclose(out.data, h, atol=1e-6)


def test_gcn_two_node_averaging():
    rng = np.random.default_rng(5)
    layer = GCNLayer(rng, 4)
    layer.proj.w.data[:] = np.eye(4, dtype=np.float32)
    layer.proj.b.data[:] = 0.0
    batch = GraphBatch(((1,), (2,)), ((0, 1, 0),), 1)
    h = np.abs(rand(rng, 2, 4)) + 0.1
    out = layer(tensor(h), gcn_adjacency(batch))
    expected = np.stack([(h[0] + h[1]) / 2.0] * 2)
    assert np.allclose(out.data, expected, atol=1e-5)


@pytest.mark.parametrize("seed", range(3))
def test_gcn_grad_check(seed):
    rng = np.random.default_rng(400 + seed)
    layer = GCNLayer(rng, 4)
    batch = GraphBatch(((1,), (2,), (3,)), ((0, 1, 0), (1, 2, 0)), 1)
    adj = gcn_adjacency(batch)
    probe = constant(rand(rng, 3, 4))
    assert grad_check(lambda h: mean_all(mul(layer(h, adj), probe)), rand(rng, 3, 4)) < GC_TOL


def test_rgcn_adjacency_directions_and_normalization():
    batch = GraphBatch(((1,), (2,), (3,)), ((0, 2, 1), (1, 2, 1)), 2)
    mats = rgcn_adjacency(batch)
    assert len(mats) == 4
    assert not mats[0].any() and not mats[2].any()
    assert np.allclose(mats[1][2], [0.5, 0.5, 0.0])
    assert np.allclose(mats[3][0], [0.0, 0.0, 1.0])
    assert np.allclose(mats[3][1], [0.0, 0.0, 1.0])


def test_rgcn_no_neighbors_reduces_to_self_term():
    rng = np.random.default_rng(6)
    layer = RGCNLayer(rng, 4, 2, with_relation_embeddings=False)
    layer.self_proj.w.data[:] = np.eye(4, dtype=np.float32)
    layer.self_proj.b.data[:] = 0.0
    batch = GraphBatch(((1,), (2,)), (), 2)
    h = np.abs(rand(rng, 2, 4)) + 0.1
    out = layer(tensor(h), rgcn_adjacency(batch))
    assert np.allclose(out.data, h, atol=1e-6)


def test_rgcn_distinguishes_relations():
    rng = np.random.default_rng(7)
    layer = RGCNLayer(rng, 4, 2, with_relation_embeddings=False)
    h = tensor(rand(rng, 2, 4))
    out_r0 = layer(h, rgcn_adjacency(GraphBatch(((1,), (2,)), ((0, 1, 0),), 2)))
    out_r1 = layer(h, rgcn_adjacency(GraphBatch(((1,), (2,)), ((0, 1, 1),), 2)))
    assert not np.allclose(out_r0.data, out_r1.data)


def test_rgcn_matches_manual_formula():
    rng = np.random.default_rng(8)
    layer = RGCNLayer(rng, 4, 1, with_relation_embeddings=False)
    batch = GraphBatch(((1,), (2,)), ((0, 1, 0),), 1)
    h = rand(rng, 2, 4)
    out = layer(tensor(h), rgcn_adjacency(batch))
    w0, b0 = layer.self_proj.w.data, layer.self_proj.b.data
    w_fwd, w_inv = layer.rel_weights[0].data, layer.rel_weights[1].data
    expected = np.maximum(
        np.stack([
            h[0] @ w0 + b0[0] + h[1] @ w_inv,
            h[1] @ w0 + b0[0] + h[0] @ w_fwd,
        ]),
        0.0,
    )
    assert np.allclose(out.data, expected, atol=1e-5)


def test_rgcn_relation_embedding_messages():
    rng = np.random.default_rng(9)
    layer = RGCNLayer(rng, 4, 2, with_relation_embeddings=True)
    assert layer.rel_weights[0].shape == (8, 4)
    batch = GraphBatch(((1,), (2,)), ((0, 1, 0),), 2)
    h = rand(rng, 2, 4)
    embs = [tensor(rand(rng, 1, 4)) for _ in range(2)]
    out = layer(tensor(h), rgcn_adjacency(batch), embs)
    w0, b0 = layer.self_proj.w.data, layer.self_proj.b.data
    msg0 = np.concatenate([h[1], embs[0].data[0]])
    msg1 = np.concatenate([h[0], embs[0].data[0]])
    expected = np.maximum(
        np.stack([
            h[0] @ w0 + b0[0] + msg0 @ layer.rel_weights[2].data,
            h[1] @ w0 + b0[0] + msg1 @ layer.rel_weights[0].data,
        ]),
        0.0,
    )
    assert np.allclose(out.data, expected, atol=1e-5)
    with pytest.raises(ShapeMismatch):
        layer(tensor(h), rgcn_adjacency(batch))


@pytest.mark.parametrize("variant", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_rgcn_grad_check(variant, seed):
    rng = np.random.default_rng(500 + seed)
    layer = RGCNLayer(rng, 4, 2, with_relation_embeddings=variant)
    batch = GraphBatch(((1,), (2,), (3,)), ((0, 1, 0), (2, 1, 1)), 2)
    mats = rgcn_adjacency(batch)
    embs = [constant(rand(rng, 1, 4)) for _ in range(2)] if variant else None
    probe = constant(rand(rng, 3, 4))
    assert grad_check(lambda h: mean_all(mul(layer(h, mats, embs), probe)), rand(rng, 3, 4)) < GC_TOL


def test_aggregator_matches_manual_formula():
    rng = np.random.default_rng(10)
    agg = BidirectionalAggregator(rng, 4)
    h_text = rand(rng, 5, 4)
    h_graph = rand(rng, 3, 4)
    text_out, graph_out = agg(tensor(h_text), tensor(h_graph))

    s = (h_graph @ h_text.T) / 2.0
    graph_reads = np_softmax(s) @ h_text
    text_reads = np_softmax(s.T) @ h_graph
    expected_text = np_dense(agg.text_proj, np.concatenate([h_text, text_reads], axis=1))
    expected_graph = np_dense(agg.graph_proj, np.concatenate([h_graph, graph_reads], axis=1))
    assert np.allclose(text_out.data, expected_text, atol=1e-5)
    assert np.allclose(graph_out.data, expected_graph, atol=1e-5)


def test_aggregator_attention_concentrates():
    rng = np.random.default_rng(11)
    agg = BidirectionalAggregator(rng, 4)
    h_text = np.eye(4, dtype=np.float32) * 10.0
    h_graph = h_text[2:3]
    s = (h_graph @ h_text.T) / 2.0
    weights = np_softmax(s)
    assert weights[0, 2] > 0.999


def test_aggregator_single_graph_row():
    rng = np.random.default_rng(12)
    agg = BidirectionalAggregator(rng, 4)
    h_text = rand(rng, 4, 4)
    h_graph = rand(rng, 1, 4)
    _, graph_out = agg(tensor(h_text), tensor(h_graph))
    s = (h_graph @ h_text.T) / 2.0
    expected = np_dense(agg.graph_proj, np.concatenate([h_graph, np_softmax(s) @ h_text], axis=1))
    assert np.allclose(graph_out.data, expected, atol=1e-5)
    text_out, _ = agg(tensor(h_text), tensor(h_graph))
    reads = np.tile(h_graph, (4, 1))
    assert np.allclose(
        text_out.data, np_dense(agg.text_proj, np.concatenate([h_text, reads], axis=1)), atol=1e-5
    )


@pytest.mark.parametrize("seed", range(3))
def test_aggregator_grad_check(seed):
    rng = np.random.default_rng(600 + seed)
    agg = BidirectionalAggregator(rng, 4)
    h_graph = constant(rand(rng, 2, 4))
    probe = constant(rand(rng, 3, 4))

    def f(x):
        text_out, graph_out = agg(x, h_graph)
        return mean_all(mul(text_out, probe))

    assert grad_check(f, rand(rng, 3, 4)) < GC_TOL

    def g(x):
        text_out, graph_out = agg(constant(rand(np.random.default_rng(0), 3, 4)), x)
        return mean_all(graph_out)

    assert grad_check(g, rand(rng, 2, 4)) < GC_TOL


def test_pointer_distribution_sums_to_one():
    rng = np.random.default_rng(13)
    head = PointerSoftmax(rng, 8, 10)
    dec = tensor(rand(rng, 3, 8))
    memory = tensor(rand(rng, 5, 8))
    out = head(dec, memory, [6, 7, 10, 11, 6], 12)
    totals = np.exp(out.data).sum(axis=1)
    assert np.allclose(totals, 1.0, atol=1e-5)


def test_pointer_gate_open_equals_vocab_softmax():
    rng = np.random.default_rng(14)
    head = PointerSoftmax(rng, 8, 10)
    head.gate.b.data[:] = 50.0
    dec = tensor(rand(rng, 2, 8))
    memory = tensor(rand(rng, 4, 8))
    out = head(dec, memory, [5, 6, 7, 8], 10)
    expected = np_softmax(np_dense(head.vocab_proj, dec.data))
    assert np.allclose(np.exp(out.data), expected, atol=1e-5)


def test_pointer_gate_closed_copies_attended_token():
    rng = np.random.default_rng(15)
    head = PointerSoftmax(rng, 8, 10)
    head.gate.b.data[:] = -50.0
    head.copy_query.w.data[:] = np.eye(8, dtype=np.float32)
    head.copy_query.b.data[:] = 0.0
    head.copy_key.w.data[:] = np.eye(8, dtype=np.float32)
    head.copy_key.b.data[:] = 0.0
    dec = np.full((1, 8), 5.0, dtype=np.float32)
    memory = np.full((4, 8), -5.0, dtype=np.float32)
    memory[3] = 5.0
    out = head(tensor(dec), tensor(memory), [7, 8, 9, 6], 10)
    assert np.exp(out.data[0, 6]) > 0.999


def test_pointer_repeated_source_token_mass_sums():
    rng = np.random.default_rng(16)
    head = PointerSoftmax(rng, 8, 10)
    head.gate.b.data[:] = -50.0
    dec = tensor(rand(rng, 1, 8))
    memory = tensor(rand(rng, 4, 8))
    source_ids = [7, 9, 7, 7]
    out = head(dec, memory, source_ids, 10)
    scores = (
        np_dense(head.copy_query, dec.data) @ np_dense(head.copy_key, memory.data).T
    ) / np.sqrt(8.0)
    attn = np_softmax(scores)
    assert abs(np.exp(out.data[0, 7]) - attn[0, [0, 2, 3]].sum()) < 1e-5


def test_pointer_extended_ids_only_reachable_by_copy():
    rng = np.random.default_rng(17)
    head = PointerSoftmax(rng, 8, 10)
    dec = tensor(rand(rng, 2, 8))
    memory = tensor(rand(rng, 3, 8))
    out = head(dec, memory, [5, 6, 7], 13)
    assert np.all(np.exp(out.data[:, 10:]) < 1e-10)
    out2 = head(dec, memory, [5, 12, 7], 13)
    assert np.exp(out2.data[:, 12]).min() >= 0.0


def test_pointer_validates_shapes():
    rng = np.random.default_rng(18)
    head = PointerSoftmax(rng, 8, 10)
    dec = tensor(rand(rng, 1, 8))
    memory = tensor(rand(rng, 3, 8))
    with pytest.raises(ShapeMismatch):
        head(dec, memory, [1, 2], 10)
    with pytest.raises(ShapeMismatch):
        head(dec, memory, [1, 2, 3], 9)
    with pytest.raises(ShapeMismatch):
        head(dec, memory, [1, 2, 15], 12)


@pytest.mark.parametrize("seed", range(3))
def test_pointer_grad_check(seed):
    rng = np.random.default_rng(700 + seed)
    head = PointerSoftmax(rng, 8, 10)
    memory = constant(rand(rng, 4, 8))
    from beliefgraph.autodiff import nll_loss

    def f(x):
        return nll_loss(head(x, memory, [5, 11, 6, 11], 12), [11, 3])

    assert grad_check(f, rand(rng, 2, 8)) < GC_TOL


def test_params_unique_and_complete():
    rng = np.random.default_rng(19)
    modules = {
        "dense": Dense(rng, 4, 4),
        "ln": LayerNorm(4),
        "ff": FeedForward(rng, 4, 8),
        "attn": MultiHeadAttention(rng, 8, 2),
        "enc": TransformerEncoderBlock(rng, 8, 2, 16),
        "dec": TransformerDecoderBlock(rng, 8, 2, 16),
        "gcn": GCNLayer(rng, 4),
        "rgcn": RGCNLayer(rng, 4, 2, True),
        "agg": BidirectionalAggregator(rng, 4),
        "ptr": PointerSoftmax(rng, 8, 10),
    }
    for name, module in modules.items():
        params = module.params()
        assert params, name
        ids = [id(t) for t in params.values()]
        assert len(set(ids)) == len(ids), name
        assert all(t.requires_grad for t in params.values()), name
