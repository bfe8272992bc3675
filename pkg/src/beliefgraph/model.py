"""Graph-update sequence model.

Encodes (prior belief graph, action, observation) and decodes a command
sequence token by token. The text side is a transformer encoder; the graph
side is one of four variants:

* ``none``: a single learned row, so the graph carries no information;
* ``gcn``: graph convolution over the collapsed (relation-blind) structure;
* ``rgcn``: relational convolution with per-relation weights;
* ``rgcn-rel``: relational convolution whose messages also carry learned
  relation embeddings.

Both sides attend to each other, the decoder cross-attends over the fused
rows, and the output distribution mixes a vocabulary softmax with a copy
pointer over the source text, so tokens outside the vocabulary can still be
emitted by copying.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, constant, tensor
from .commands import (
    EOS_ID,
    SEP,
    SOS_ID,
    UNK_ID,
    Vocabulary,
    parse_sequence,
    render_sequence,
    tokenize,
)
from .evaluate import Predictor, teacher_forced_eval
from .graph import BeliefGraph, RelationRegistry, UpdateSequence, canonical_order, diff
from .layers import (
    BidirectionalAggregator,
    GCNLayer,
    GraphBatch,
    LayerNorm,
    PointerSoftmax,
    RGCNLayer,
    TransformerDecoderBlock,
    TransformerEncoderBlock,
    causal_mask,
    gcn_adjacency,
    prefixed,
    rgcn_adjacency,
    sinusoidal_positions,
)
from .world import Transition

VARIANTS = ("none", "gcn", "rgcn", "rgcn-rel")


class TargetTooLong(ValueError):
    """The rendered gold command sequence exceeds max_decode_len."""


class NonFiniteLoss(RuntimeError):
    """Training aborted because a batch loss went NaN or infinite."""


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "rgcn-rel"
    width: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    n_graph_layers: int = 1
    ff_inner: int = 128
    max_decode_len: int = 160

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.width % self.n_heads != 0:
            raise ValueError("width must be divisible by n_heads")
        for name in ("width", "n_heads", "n_encoder_layers", "n_decoder_layers",
                     "n_graph_layers", "ff_inner", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class EncodedSource:
    memory: Tensor        # fused text+graph rows the decoder attends over
    text_rows: Tensor     # fused text rows the pointer may copy from
    source_ids: list[int]  # extended token ids per text row
    oov_tokens: tuple[str, ...]
    n_total_ids: int


class GraphUpdateModel:
    """Model + vocabulary + relation registry bundle."""

    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        relations: RelationRegistry,
        seed: int = 0,
    ):
        self.config = config
        self.vocab = vocab
        self.relations = relations
        h = config.width
        # the shared stack is drawn first, in a fixed order, so every
        # variant starts from identical text-side weights for a given seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.embed = tensor(ad.rng_normal(rng, (len(vocab), h), 1.0 / math.sqrt(h)),
                            requires_grad=True)
        self.encoder_blocks = [
            TransformerEncoderBlock(rng, h, config.n_heads, config.ff_inner)
            for _ in range(config.n_encoder_layers)
        ]
        self.encoder_norm = LayerNorm(h)
        self.decoder_blocks = [
            TransformerDecoderBlock(rng, h, config.n_heads, config.ff_inner)
            for _ in range(config.n_decoder_layers)
        ]
        self.decoder_norm = LayerNorm(h)
        self.aggregator = BidirectionalAggregator(rng, h)
        self.pointer = PointerSoftmax(rng, h, len(vocab))
        self.null_node = tensor(ad.rng_normal(rng, (1, h), 1.0 / math.sqrt(h)),
                                requires_grad=True)
        self.gcn_layers: list[GCNLayer] = []
        self.rgcn_layers: list[RGCNLayer] = []
        self.relation_embed: list[Tensor] = []
        if config.variant == "gcn":
            self.gcn_layers = [GCNLayer(rng, h) for _ in range(config.n_graph_layers)]
        elif config.variant in ("rgcn", "rgcn-rel"):
            with_embeddings = config.variant == "rgcn-rel"
            self.rgcn_layers = [
                RGCNLayer(rng, h, len(relations), with_embeddings)
                for _ in range(config.n_graph_layers)
            ]
            if with_embeddings:
                self.relation_embed = [
                    tensor(ad.rng_normal(rng, (1, h), 1.0 / math.sqrt(h)), requires_grad=True)
                    for _ in range(len(relations))
                ]
        self._scale = math.sqrt(h)

    def params(self) -> dict[str, Tensor]:
        out = {"embed.words": self.embed, "graph.null": self.null_node}
        for i, blk in enumerate(self.encoder_blocks):
            out.update(prefixed(f"enc{i}", blk.params()))
        out.update(prefixed("enc.norm", self.encoder_norm.params()))
        for i, blk in enumerate(self.decoder_blocks):
            out.update(prefixed(f"dec{i}", blk.params()))
        out.update(prefixed("dec.norm", self.decoder_norm.params()))
        out.update(prefixed("agg", self.aggregator.params()))
        out.update(prefixed("ptr", self.pointer.params()))
        for i, layer in enumerate(self.gcn_layers):
            out.update(prefixed(f"graph.gcn{i}", layer.params()))
        for i, layer in enumerate(self.rgcn_layers):
            out.update(prefixed(f"graph.rgcn{i}", layer.params()))
        for i, emb in enumerate(self.relation_embed):
            out[f"graph.relemb{i}"] = emb
        return out

    # -- encoding ---------------------------------------------------------

    def source_tokens(self, action: str, observation: str) -> list[str]:
        return tokenize(action) + [SEP] + tokenize(observation)

    def _embed_rows(self, ids: list[int]) -> Tensor:
        rows = ad.embedding_lookup(self.embed, ids)
        scaled = ad.scale(rows, self._scale)
        positions = constant(sinusoidal_positions(len(ids), self.config.width))
        return ad.add(scaled, positions)

    def _graph_rows(self, graph: BeliefGraph) -> Tensor:
        if self.config.variant == "none" or len(graph) == 0:
            return self.null_node
        labels = sorted({e.label for t in graph for e in (t.head, t.tail)})
        index = {label: i for i, label in enumerate(labels)}
        batch = GraphBatch(
            node_labels=tuple(tuple(self.vocab.encode(label.split())) for label in labels),
            edges=tuple(
                (index[t.head.label], index[t.tail.label], self.relations.index(t.relation.label))
                for t in graph
            ),
            n_relations=len(self.relations),
        )
        features = []
        for ids in batch.node_labels:
            rows = ad.embedding_lookup(self.embed, list(ids))
            mean = constant(np.full((1, len(ids)), 1.0 / len(ids), dtype=ad.DTYPE))
            features.append(ad.matmul(mean, rows))
        h = ad.scale(ad.concat(features, axis=0), self._scale)
        if self.config.variant == "gcn":
            adjacency = gcn_adjacency(batch)
            for layer in self.gcn_layers:
                h = layer(h, adjacency)
        else:
            adjacency = rgcn_adjacency(batch)
            embeddings = self.relation_embed or None
            for layer in self.rgcn_layers:
                h = layer(h, adjacency, embeddings)
        return h

    def encode(self, prior: BeliefGraph, action: str, observation: str) -> EncodedSource:
        tokens = self.source_tokens(action, observation)
        oov: list[str] = []
        source_ids = []
        for tok in tokens:
            idx = self.vocab.id(tok)
            if idx == UNK_ID and tok != self.vocab.token(UNK_ID):
                if tok not in oov:
                    oov.append(tok)
                idx = len(self.vocab) + oov.index(tok)
            source_ids.append(idx)
        x = self._embed_rows(self.vocab.encode(tokens))
        for blk in self.encoder_blocks:
            x = blk(x)
        x = self.encoder_norm(x)
        h_graph = self._graph_rows(prior)
        text_rows, graph_rows = self.aggregator(x, h_graph)
        memory = ad.concat([text_rows, graph_rows], axis=0)
        return EncodedSource(
            memory=memory,
            text_rows=text_rows,
            source_ids=source_ids,
            oov_tokens=tuple(oov),
            n_total_ids=len(self.vocab) + len(oov),
        )

    # -- decoding ---------------------------------------------------------

    def _decode_logp(self, encoded: EncodedSource, input_ids: list[int]) -> Tensor:
        clamped = [i if i < len(self.vocab) else UNK_ID for i in input_ids]
        y = self._embed_rows(clamped)
        mask = causal_mask(len(input_ids))
        for blk in self.decoder_blocks:
            y = blk(y, encoded.memory, mask)
        y = self.decoder_norm(y)
        return self.pointer(y, encoded.text_rows, encoded.source_ids, encoded.n_total_ids)

    def target_ids(self, encoded: EncodedSource, gold: UpdateSequence) -> list[int]:
        tokens = render_sequence(gold)
        if len(tokens) > self.config.max_decode_len:
            raise TargetTooLong(
                f"{len(tokens)} target tokens exceed max_decode_len={self.config.max_decode_len}"
            )
        ext = {tok: len(self.vocab) + i for i, tok in enumerate(encoded.oov_tokens)}
        out = []
        for tok in tokens:
            idx = self.vocab.id(tok)
            if idx == UNK_ID and tok in ext:
                idx = ext[tok]
            out.append(idx)
        return out

    def forward_loss(self, transition: Transition) -> Tensor:
        encoded = self.encode(transition.g_seen_prev, transition.action, transition.observation)
        gold = canonical_order(diff(transition.g_seen_prev, transition.g_seen_next))
        targets = self.target_ids(encoded, gold)
        input_ids = [SOS_ID] + targets[:-1]
        logp = self._decode_logp(encoded, input_ids)
        return ad.nll_loss(logp, targets)

    def generate(
        self, prior: BeliefGraph, action: str, observation: str
    ) -> tuple[UpdateSequence, int, list[str]]:
        """Greedy decode; returns (ops, n_malformed_segments, raw tokens)."""
        encoded = self.encode(prior, action, observation)
        ids = [SOS_ID]
        tokens: list[str] = []
        for _ in range(self.config.max_decode_len):
            logp = self._decode_logp(encoded, ids)
            nxt = int(np.argmax(logp.data[-1]))
            ids.append(nxt)
            tokens.append(self.id_to_token(nxt, encoded))
            if nxt == EOS_ID:
                break
        ops, malformed = parse_sequence(tokens, self.relations)
        return ops, malformed, tokens

    def id_to_token(self, idx: int, encoded: EncodedSource) -> str:
        if idx < len(self.vocab):
            return self.vocab.token(idx)
        return encoded.oov_tokens[idx - len(self.vocab)]

    def predictor(self) -> Predictor:
        def predict(prior: BeliefGraph, transition: Transition) -> UpdateSequence:
            ops, _, _ = self.generate(prior, transition.action, transition.observation)
            return ops

        return predict


# -- persistence -----------------------------------------------------------

_CHECKPOINT_KIND = "graph-update-model"


def save_model(
    path: str | Path,
    model: GraphUpdateModel,
    step: int = 0,
    adam: Adam | None = None,
) -> None:
    header = {
        "kind": _CHECKPOINT_KIND,
        "config": asdict(model.config),
        "vocab": list(model.vocab.tokens),
        "relations": list(model.relations.labels),
        "step": step,
    }
    arrays = {name: p.data for name, p in model.params().items()}
    if adam is not None:
        header["adam_t"] = adam.t
        arrays.update(adam.state_arrays())
    ad.write_checkpoint(path, header, arrays)


def load_model(path: str | Path) -> tuple[GraphUpdateModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, header)."""
    header, arrays = ad.read_checkpoint(path)
    if header.get("kind") != _CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a model checkpoint")
    config = ModelConfig(**header["config"])
    vocab = Vocabulary(header["vocab"])
    relations = RelationRegistry(header["relations"])
    model = GraphUpdateModel(config, vocab, relations, seed=0)
    params = model.params()
    param_arrays = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    if set(param_arrays) != set(params):
        missing = sorted(set(params) - set(param_arrays))
        extra = sorted(set(param_arrays) - set(params))
        raise ValueError(f"checkpoint mismatch: missing {missing}, extra {extra}")
    for name, p in params.items():
        if param_arrays[name].shape != p.data.shape:
            raise ValueError(
                f"{name}: checkpoint shape {param_arrays[name].shape} vs {p.data.shape}"
            )
        p.data[...] = param_arrays[name]
    return model, header


def restore_adam(model: GraphUpdateModel, header: dict, path: str | Path,
                 lr: float = 1e-3) -> Adam:
    _, arrays = ad.read_checkpoint(path)
    adam = Adam(model.params(), lr=lr)
    if "adam_t" in header:
        adam.load_state(arrays, header["adam_t"])
    return adam


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    max_steps: int | None = None
    eval_every_steps: int | None = None
    stop_at_f1: float | None = None
    val_sample: int | None = None
    log_path: str | Path | None = None
    checkpoint_path: str | Path | None = None


def _val_subset(transitions, n):
    if n is None or n >= len(transitions):
        return list(transitions)
    stride = max(1, len(transitions) // n)
    return list(transitions[::stride][:n])


def train_model(
    model: GraphUpdateModel,
    train_transitions: list[Transition],
    val_transitions: list[Transition],
    cfg: TrainConfig,
) -> list[dict]:
    """Mini-batch Adam with per-epoch validation.

    Returns the history of log records; each record is also appended to
    cfg.log_path as one JSON line. The checkpoint tracks the best
    validation teacher-forced F1 seen so far. When eval_every_steps is
    set it replaces the per-epoch cadence entirely (useful when an epoch
    is only a handful of steps).
    """
    if not train_transitions:
        raise ValueError("no training transitions")
    params = model.params()
    adam = Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 23]))
    val_set = _val_subset(val_transitions, cfg.val_sample)
    history: list[dict] = []
    best_f1 = -1.0
    step = 0
    log_handle = open(cfg.log_path, "a") if cfg.log_path else None

    def log(record: dict) -> None:
        history.append(record)
        if log_handle:
            log_handle.write(json.dumps(record, sort_keys=True) + "\n")
            log_handle.flush()

    def evaluate() -> float:
        nonlocal best_f1
        if not val_set:
            return float("nan")
        f1 = teacher_forced_eval(val_set, model.predictor()).overall
        if f1 >= best_f1 and cfg.checkpoint_path:
            save_model(cfg.checkpoint_path, model, step=step, adam=adam)
        best_f1 = max(best_f1, f1)
        return f1

    try:
        stop = False
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_transitions))
            epoch_losses: list[float] = []
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                losses = [model.forward_loss(train_transitions[int(i)]) for i in chunk]
                total = losses[0] if len(losses) == 1 else ad.scale(
                    ad.add_n(losses), 1.0 / len(losses)
                )
                value = total.item()
                if not np.isfinite(value):
                    raise NonFiniteLoss(f"loss {value} at step {step}")
                total.backward()
                adam.step()
                adam.zero_grad()
                step += 1
                epoch_losses.append(value)
                if cfg.eval_every_steps and step % cfg.eval_every_steps == 0:
                    f1 = evaluate()
                    log({"step": step, "epoch": epoch, "train_loss": value, "val_tf_f1": f1})
                    if cfg.stop_at_f1 is not None and f1 >= cfg.stop_at_f1:
                        stop = True
                        break
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break
            if stop:
                break
            if cfg.eval_every_steps:
                continue
            f1 = evaluate()
            log({"step": step, "epoch": epoch,
                 "train_loss": sum(epoch_losses) / max(1, len(epoch_losses)), "val_tf_f1": f1})
            if cfg.stop_at_f1 is not None and f1 >= cfg.stop_at_f1:
                break
    finally:
        if log_handle:
            log_handle.close()
    return history
