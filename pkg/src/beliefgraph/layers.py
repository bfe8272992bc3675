"""Architecture blocks: transformer encoder/decoder, graph encoders, the
text-graph aggregator, and the pointer-softmax output head.

Every block is a plain class holding parameter Tensors; ``params()`` returns
a flat name→Tensor dict and parents join child names with dots, which is the
naming scheme checkpoints serialize. Blocks are pure functions of their
parameters, so a read-shared model can evaluate concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DTYPE,
    ShapeMismatch,
    Tensor,
    add,
    add_n,
    add_scalar,
    concat,
    constant,
    layer_norm,
    log,
    matmul,
    mul,
    relu,
    rng_normal,
    scale,
    sigmoid,
    softmax,
    tensor,
    transpose,
)


def prefixed(prefix: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}.{name}": p for name, p in params.items()}


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    """Fixed sine/cosine position table, [length, width]."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, width, 2, dtype=np.float64) * (-math.log(10000.0) / width))
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * div)
    table[:, 1::2] = np.cos(positions * div[: width // 2])
    return table.astype(DTYPE)


def causal_mask(length: int) -> np.ndarray:
    """Additive [length, length] mask: 0 on and below the diagonal, -inf above."""
    mask = np.zeros((length, length), dtype=DTYPE)
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


class Dense:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.w = tensor(rng_normal(rng, (n_in, n_out), 1.0 / math.sqrt(n_in)), requires_grad=True)
        self.b = tensor(np.zeros((1, n_out), dtype=DTYPE), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, width: int):
        self.gamma = tensor(np.ones((1, width), dtype=DTYPE), requires_grad=True)
        self.beta = tensor(np.zeros((1, width), dtype=DTYPE), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections and an output
    projection; mask is an additive [Lq, Lk] array."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int):
        if width % n_heads:
            raise ShapeMismatch(f"width {width} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        head_width = width // n_heads
        self.inv_sqrt_dh = 1.0 / math.sqrt(head_width)
        std = 1.0 / math.sqrt(width)
        self.wq, self.wk, self.wv = [], [], []
        for _ in range(n_heads):
            self.wq.append(tensor(rng_normal(rng, (width, head_width), std), requires_grad=True))
            self.wk.append(tensor(rng_normal(rng, (width, head_width), std), requires_grad=True))
            self.wv.append(tensor(rng_normal(rng, (width, head_width), std), requires_grad=True))
        self.out = Dense(rng, width, width)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
        heads = []
        for i in range(self.n_heads):
            qh = matmul(q, self.wq[i])
            kh = matmul(k, self.wk[i])
            vh = matmul(v, self.wv[i])
            scores = scale(matmul(qh, transpose(kh)), self.inv_sqrt_dh)
            heads.append(matmul(softmax(scores, mask=mask), vh))
        return self.out(concat(heads, axis=1))

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i in range(self.n_heads):
            out[f"wq{i}"] = self.wq[i]
            out[f"wk{i}"] = self.wk[i]
            out[f"wv{i}"] = self.wv[i]
        out.update(prefixed("out", self.out.params()))
        return out


class FeedForward:
    def __init__(self, rng: np.random.Generator, width: int, inner: int):
        self.lift = Dense(rng, width, inner)
        self.drop = Dense(rng, inner, width)

    def __call__(self, x: Tensor) -> Tensor:
        return self.drop(relu(self.lift(x)))

    def params(self) -> dict[str, Tensor]:
        return {**prefixed("lift", self.lift.params()), **prefixed("drop", self.drop.params())}


class TransformerEncoderBlock:
    """Pre-norm residual block: self-attention then feed-forward."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int, ff_inner: int):
        self.ln1 = LayerNorm(width)
        self.attn = MultiHeadAttention(rng, width, n_heads)
        self.ln2 = LayerNorm(width)
        self.ff = FeedForward(rng, width, ff_inner)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h, h, mask))
        x = add(x, self.ff(self.ln2(x)))
        return x

    def params(self) -> dict[str, Tensor]:
        return {
            **prefixed("ln1", self.ln1.params()),
            **prefixed("attn", self.attn.params()),
            **prefixed("ln2", self.ln2.params()),
            **prefixed("ff", self.ff.params()),
        }


class TransformerDecoderBlock:
    """Pre-norm residual block: causally masked self-attention, then
    cross-attention over an encoder memory, then feed-forward."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int, ff_inner: int):
        self.ln1 = LayerNorm(width)
        self.self_attn = MultiHeadAttention(rng, width, n_heads)
        self.ln2 = LayerNorm(width)
        self.cross_attn = MultiHeadAttention(rng, width, n_heads)
        self.ln3 = LayerNorm(width)
        self.ff = FeedForward(rng, width, ff_inner)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.self_attn(h, h, h, self_mask))
        x = add(x, self.cross_attn(self.ln2(x), memory, memory))
        x = add(x, self.ff(self.ln3(x)))
        return x

    def params(self) -> dict[str, Tensor]:
        return {
            **prefixed("ln1", self.ln1.params()),
            **prefixed("self_attn", self.self_attn.params()),
            **prefixed("ln2", self.ln2.params()),
            **prefixed("cross_attn", self.cross_attn.params()),
            **prefixed("ln3", self.ln3.params()),
            **prefixed("ff", self.ff.params()),
        }


@dataclass(frozen=True)
class GraphBatch:
    """One graph prepared for encoding.

    node_labels holds the token ids of each node's label words; edges are
    (head_index, tail_index, relation_id) with relation_id < n_relations.
    Inverse relations are materialized by the adjacency builders as ids
    n_relations..2*n_relations-1, not stored here.
    """

    node_labels: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int, int], ...]
    n_relations: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    def __post_init__(self):
        for head, tail, rel in self.edges:
            if not (0 <= head < self.n_nodes and 0 <= tail < self.n_nodes):
                raise ShapeMismatch(f"edge ({head},{tail}) outside {self.n_nodes} nodes")
            if not 0 <= rel < self.n_relations:
                raise ShapeMismatch(f"relation id {rel} outside {self.n_relations} relations")


def gcn_adjacency(batch: GraphBatch) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops, relation-blind."""
    n = batch.n_nodes
    a = np.eye(n, dtype=DTYPE)
    for head, tail, _ in batch.edges:
        a[head, tail] = 1.0
        a[tail, head] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    return (a * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]).astype(DTYPE)


def rgcn_adjacency(batch: GraphBatch) -> list[np.ndarray]:
    """Per-relation in-neighbor matrices, row-normalized by neighbor count.

    Returns 2*n_relations matrices: the edge direction first, then the
    inverse direction under relation id r + n_relations.
    """
    n = batch.n_nodes
    mats = [np.zeros((n, n), dtype=DTYPE) for _ in range(2 * batch.n_relations)]
    for head, tail, rel in batch.edges:
        mats[rel][tail, head] = 1.0
        mats[rel + batch.n_relations][head, tail] = 1.0
    for mat in mats:
        counts = mat.sum(axis=1, keepdims=True)
        np.divide(mat, counts, out=mat, where=counts > 0)
    return mats


class GCNLayer:
    """h' = relu(A_norm h W + b) with A_norm the symmetric normalized
    adjacency (self-loops included)."""

    def __init__(self, rng: np.random.Generator, width: int):
        self.proj = Dense(rng, width, width)

    def __call__(self, h: Tensor, adj_norm: np.ndarray) -> Tensor:
        if adj_norm.shape != (h.shape[0], h.shape[0]):
            raise ShapeMismatch(f"adjacency {adj_norm.shape} vs {h.shape[0]} nodes")
        return relu(self.proj(matmul(constant(adj_norm), h)))

    def params(self) -> dict[str, Tensor]:
        return prefixed("proj", self.proj.params())


class RGCNLayer:
    """h'_i = relu(W0 h_i + b0 + sum_r sum_{j in N_r(i)} (1/c_ir) W_r m_j).

    Messages m_j are the neighbor state h_j; with relation embeddings they
    become concat(h_j, e_r), and each W_r maps 2*width -> width. Inverse
    directions get their own W_r but share e_r with the forward relation.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        width: int,
        n_relations: int,
        with_relation_embeddings: bool,
    ):
        self.n_relations = n_relations
        self.with_relation_embeddings = with_relation_embeddings
        self.self_proj = Dense(rng, width, width)
        in_width = 2 * width if with_relation_embeddings else width
        std = 1.0 / math.sqrt(in_width)
        self.rel_weights = [
            tensor(rng_normal(rng, (in_width, width), std), requires_grad=True)
            for _ in range(2 * n_relations)
        ]

    def __call__(
        self,
        h: Tensor,
        rel_adjacency: list[np.ndarray],
        rel_embeddings: list[Tensor] | None = None,
    ) -> Tensor:
        n = h.shape[0]
        if len(rel_adjacency) != 2 * self.n_relations:
            raise ShapeMismatch(
                f"{len(rel_adjacency)} adjacency matrices for {2 * self.n_relations} relations"
            )
        if self.with_relation_embeddings and rel_embeddings is None:
            raise ShapeMismatch("relation embeddings required but not given")
        terms = [self.self_proj(h)]
        ones_col = constant(np.ones((n, 1), dtype=DTYPE))
        for rel_id, adj in enumerate(rel_adjacency):
            if not adj.any():
                continue
            if self.with_relation_embeddings:
                e = rel_embeddings[rel_id % self.n_relations]
                messages = concat([h, matmul(ones_col, e)], axis=1)
            else:
                messages = h
            terms.append(matmul(constant(adj), matmul(messages, self.rel_weights[rel_id])))
        return relu(add_n(terms)) if len(terms) > 1 else relu(terms[0])

    def params(self) -> dict[str, Tensor]:
        out = prefixed("self_proj", self.self_proj.params())
        for rel_id, w in enumerate(self.rel_weights):
            out[f"rel{rel_id}"] = w
        return out


class BidirectionalAggregator:
    """Attention in both directions between text rows and graph rows.

    S = h_graph h_text^T / sqrt(width); each side attends the other through
    row softmax of S (or S^T), is concatenated with its original rows, and
    is projected back to width.
    """

    def __init__(self, rng: np.random.Generator, width: int):
        self.inv_sqrt_h = 1.0 / math.sqrt(width)
        self.text_proj = Dense(rng, 2 * width, width)
        self.graph_proj = Dense(rng, 2 * width, width)

    def __call__(self, h_text: Tensor, h_graph: Tensor) -> tuple[Tensor, Tensor]:
        similarity = scale(matmul(h_graph, transpose(h_text)), self.inv_sqrt_h)
        graph_reads_text = matmul(softmax(similarity), h_text)
        text_reads_graph = matmul(softmax(transpose(similarity)), h_graph)
        h_text_out = self.text_proj(concat([h_text, text_reads_graph], axis=1))
        h_graph_out = self.graph_proj(concat([h_graph, graph_reads_text], axis=1))
        return h_text_out, h_graph_out

    def params(self) -> dict[str, Tensor]:
        return {
            **prefixed("text_proj", self.text_proj.params()),
            **prefixed("graph_proj", self.graph_proj.params()),
        }


class PointerSoftmax:
    """Mixture of vocabulary generation and copying from source positions.

    p = g * softmax(vocab logits) + (1 - g) * copy attention mass, with the
    copy mass scattered onto per-example extended token ids, returned as
    log probabilities floored at 1e-12. Ids >= vocab size can only receive
    probability through the copy term.
    """

    FLOOR = 1e-12

    def __init__(self, rng: np.random.Generator, width: int, vocab_size: int):
        self.vocab_size = vocab_size
        self.inv_sqrt_h = 1.0 / math.sqrt(width)
        self.vocab_proj = Dense(rng, width, vocab_size)
        self.copy_query = Dense(rng, width, width)
        self.copy_key = Dense(rng, width, width)
        self.gate = Dense(rng, width, 1)

    def __call__(
        self,
        dec_states: Tensor,
        source_memory: Tensor,
        source_ids: list[int],
        n_total_ids: int,
    ) -> Tensor:
        if len(source_ids) != source_memory.shape[0]:
            raise ShapeMismatch(
                f"{len(source_ids)} source ids for {source_memory.shape[0]} memory rows"
            )
        if n_total_ids < self.vocab_size:
            raise ShapeMismatch(f"extended id space {n_total_ids} below vocab {self.vocab_size}")
        if source_ids and max(source_ids) >= n_total_ids:
            raise ShapeMismatch(f"source id {max(source_ids)} outside {n_total_ids} ids")
        t = dec_states.shape[0]

        p_vocab = softmax(self.vocab_proj(dec_states))
        if n_total_ids > self.vocab_size:
            pad = constant(np.zeros((t, n_total_ids - self.vocab_size), dtype=DTYPE))
            p_vocab = concat([p_vocab, pad], axis=1)

        scores = scale(
            matmul(self.copy_query(dec_states), transpose(self.copy_key(source_memory))),
            self.inv_sqrt_h,
        )
        attn = softmax(scores)
        scatter = np.zeros((len(source_ids), n_total_ids), dtype=DTYPE)
        for pos, token_id in enumerate(source_ids):
            scatter[pos, token_id] = 1.0
        p_copy = matmul(attn, constant(scatter))

        g = sigmoid(self.gate(dec_states))
        keep = add_scalar(scale(g, -1.0), 1.0)
        p = add(mul(p_vocab, g), mul(p_copy, keep))
        return log(add_scalar(p, self.FLOOR))

    def params(self) -> dict[str, Tensor]:
        return {
            **prefixed("vocab_proj", self.vocab_proj.params()),
            **prefixed("copy_query", self.copy_query.params()),
            **prefixed("copy_key", self.copy_key.params()),
            **prefixed("gate", self.gate.params()),
        }
