"""Model wiring, losses, generation, checkpoints, and the training loop."""
import json

import numpy as np
import pytest

from beliefgraph import autodiff as ad
from beliefgraph.commands import EOS, SOS_ID, UNK_ID
from beliefgraph.dataset import build_vocab
from beliefgraph.graph import (
    BeliefGraph,
    Entity,
    RelationRegistry,
    add_op,
    apply_update,
    diff,
)
from beliefgraph.model import (
    VARIANTS,
    GraphUpdateModel,
    ModelConfig,
    NonFiniteLoss,
    TargetTooLong,
    TrainConfig,
    load_model,
    restore_adam,
    save_model,
    train_model,
)
from beliefgraph.world import Transition, WorldConfig, generate_game

REL = RelationRegistry()
WCFG = WorldConfig(n_rooms=2, n_objects=5, recipe_length=2, n_random_actions_per_step=1)


@pytest.fixture(scope="module")
def corpus():
    transitions = list(generate_game(WCFG, 2).transitions)
    return transitions, build_vocab(transitions)


def tiny_config(variant="rgcn-rel", **kw):
    base = dict(variant=variant, width=32, n_heads=4, n_encoder_layers=1,
                n_decoder_layers=1, ff_inner=48, max_decode_len=120)
    base.update(kw)
    return ModelConfig(**base)


class TestConfig:
    def test_rejects_bad_variant(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="lstm")

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError):
            ModelConfig(width=30, n_heads=4)


class TestWiring:
    def test_text_side_parameters_are_variant_invariant(self, corpus):
        _, vocab = corpus
        shapes = {}
        for variant in VARIANTS:
            model = GraphUpdateModel(tiny_config(variant), vocab, REL, seed=3)
            params = model.params()
            text_side = {k: v.shape for k, v in params.items() if not k.startswith("graph.")}
            shapes[variant] = text_side
        assert all(s == shapes["none"] for s in shapes.values())

    def test_shared_stack_init_is_seed_stable_across_variants(self, corpus):
        _, vocab = corpus
        a = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=3)
        b = GraphUpdateModel(tiny_config("rgcn-rel"), vocab, REL, seed=3)
        pa, pb = a.params(), b.params()
        for name in pa:
            if not name.startswith("graph."):
                assert np.array_equal(pa[name].data, pb[name].data), name

    def test_graph_parameters_differ_by_variant(self, corpus):
        _, vocab = corpus
        names = {}
        for variant in VARIANTS:
            model = GraphUpdateModel(tiny_config(variant), vocab, REL, seed=0)
            names[variant] = {k for k in model.params() if k.startswith("graph.")}
        assert names["none"] == {"graph.null"}
        assert any("gcn" in k for k in names["gcn"])
        assert any("rgcn" in k for k in names["rgcn"])
        assert any("relemb" in k for k in names["rgcn-rel"])
        assert not any("relemb" in k for k in names["rgcn"])

    def test_relation_blind_variant_ignores_the_graph(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=0)
        t = max(transitions, key=lambda x: len(x.g_seen_prev))
        enc_full = model.encode(t.g_seen_prev, t.action, t.observation)
        enc_empty = model.encode(BeliefGraph(), t.action, t.observation)
        assert np.array_equal(enc_full.memory.data, enc_empty.memory.data)

    def test_graph_variants_react_to_the_graph(self, corpus):
        transitions, vocab = corpus
        t = max(transitions, key=lambda x: len(x.g_seen_prev))
        for variant in ("gcn", "rgcn", "rgcn-rel"):
            model = GraphUpdateModel(tiny_config(variant), vocab, REL, seed=0)
            enc_full = model.encode(t.g_seen_prev, t.action, t.observation)
            enc_empty = model.encode(BeliefGraph(), t.action, t.observation)
            assert not np.allclose(enc_full.text_rows.data, enc_empty.text_rows.data), variant

    def test_rgcn_rel_distinguishes_relation_labels(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config("rgcn-rel"), vocab, REL, seed=0)
        a = apply_update(BeliefGraph(), (add_op(Entity("red apple"), Entity("shed"), REL.relation("at")),))
        b = apply_update(BeliefGraph(), (add_op(Entity("red apple"), Entity("shed"), REL.relation("in")),))
        ra = model.encode(a, "look", "you see .").memory.data
        rb = model.encode(b, "look", "you see .").memory.data
        assert not np.allclose(ra, rb)
        gcn = GraphUpdateModel(tiny_config("gcn"), vocab, REL, seed=0)
        assert np.allclose(
            gcn.encode(a, "look", "you see .").memory.data,
            gcn.encode(b, "look", "you see .").memory.data,
        )


class TestLossAndTargets:
    def test_empty_gold_is_one_eos_step(self, corpus):
        transitions, vocab = corpus
        empty = next(t for t in transitions
                     if not diff(t.g_seen_prev, t.g_seen_next))
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=1)
        enc = model.encode(empty.g_seen_prev, empty.action, empty.observation)
        targets = model.target_ids(enc, ())
        assert targets == [vocab.id(EOS)]
        logp = model._decode_logp(enc, [SOS_ID])
        expected = -float(logp.data[0, targets[0]])
        assert model.forward_loss(empty).item() == pytest.approx(expected, abs=1e-6)

    def test_target_too_long_raises(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config(max_decode_len=4), vocab, REL, seed=1)
        rich = max(transitions, key=lambda t: len(diff(t.g_seen_prev, t.g_seen_next)))
        with pytest.raises(TargetTooLong):
            model.forward_loss(rich)

    def test_loss_is_sensitive_to_the_observation(self, corpus):
        transitions, vocab = corpus
        t = max(transitions, key=lambda x: len(diff(x.g_seen_prev, x.g_seen_next)))
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=1)
        a = model.forward_loss(t).item()
        scrambled = Transition(
            t.game_id, t.step, t.branch, t.g_seen_prev, t.action,
            "nothing here at all .", t.g_seen_next,
        )
        b = model.forward_loss(scrambled).item()
        assert a != pytest.approx(b)

    def test_full_model_gradient_is_numerically_sound(self, corpus):
        transitions, vocab = corpus
        t = min(
            (x for x in transitions if diff(x.g_seen_prev, x.g_seen_next)),
            key=lambda x: len(diff(x.g_seen_prev, x.g_seen_next)),
        )
        model = GraphUpdateModel(tiny_config("rgcn-rel", width=8, n_heads=2, ff_inner=12),
                                 vocab, REL, seed=2)
        probe = model.pointer.gate.w

        def f(x):
            model.pointer.gate.w = x
            try:
                return model.forward_loss(t)
            finally:
                model.pointer.gate.w = probe

        err = ad.grad_check(f, probe.data.copy())
        assert err < 1e-3

    def test_oov_source_tokens_get_extended_ids(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=1)
        enc = model.encode(BeliefGraph(), "take zorp gadget", "you take the zorp gadget .")
        assert enc.oov_tokens == ("zorp", "gadget")
        assert enc.n_total_ids == len(vocab) + 2
        assert enc.source_ids[1] == len(vocab)
        targets = model.target_ids(
            enc,
            (add_op(Entity("zorp gadget"), Entity("player"), REL.relation("in")),),
        )
        assert len(vocab) in targets and len(vocab) + 1 in targets
        assert UNK_ID not in targets


class TestGeneration:
    def test_generate_is_deterministic_and_parseable(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=5)
        t = transitions[0]
        a = model.generate(t.g_seen_prev, t.action, t.observation)
        b = model.generate(t.g_seen_prev, t.action, t.observation)
        assert a == b
        ops, malformed, tokens = a
        assert isinstance(ops, tuple)
        assert malformed >= 0
        assert len(tokens) <= model.config.max_decode_len

    def test_oov_tokens_are_reachable_through_copy(self, corpus):
        _, vocab = corpus
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=5)
        enc = model.encode(BeliefGraph(), "take zorp", "you take the zorp .")
        logp = model._decode_logp(enc, [SOS_ID])
        ext = logp.data[0, len(vocab):]
        assert ext.shape == (1,)
        assert np.all(np.isfinite(ext))
        assert np.exp(ext[0]) > 0


class TestCheckpoints:
    def test_roundtrip_restores_everything(self, corpus, tmp_path):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config("rgcn-rel"), vocab, REL, seed=7)
        t = transitions[3]
        loss_before = model.forward_loss(t).item()
        gen_before = model.generate(t.g_seen_prev, t.action, t.observation)
        path = tmp_path / "model.ckpt"
        save_model(path, model, step=12)
        loaded, header = load_model(path)
        assert header["step"] == 12
        assert loaded.config == model.config
        assert loaded.vocab.tokens == vocab.tokens
        assert loaded.relations.labels == REL.labels
        assert loaded.forward_loss(t).item() == pytest.approx(loss_before, abs=0)
        assert loaded.generate(t.g_seen_prev, t.action, t.observation) == gen_before

    def test_checkpoint_bytes_are_deterministic(self, corpus, tmp_path):
        _, vocab = corpus
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=7)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(a, model, step=1)
        save_model(b, model, step=1)
        assert a.read_bytes() == b.read_bytes()

    def test_adam_state_roundtrip(self, corpus, tmp_path):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config(), vocab, REL, seed=7)
        adam = ad.Adam(model.params(), lr=1e-3)
        loss = model.forward_loss(transitions[0])
        loss.backward()
        adam.step()
        adam.zero_grad()
        path = tmp_path / "model.ckpt"
        save_model(path, model, step=1, adam=adam)
        loaded, header = load_model(path)
        adam2 = restore_adam(loaded, header, path, lr=1e-3)
        assert adam2.t == 1
        for name in adam.m:
            assert np.array_equal(adam.m[name], adam2.m[name])
            assert np.array_equal(adam.v[name], adam2.v[name])

    def test_wrong_kind_is_rejected(self, tmp_path):
        path = tmp_path / "other.ckpt"
        ad.write_checkpoint(path, {"kind": "something-else"}, {"x": np.zeros((2, 2), np.float32)})
        with pytest.raises(ValueError):
            load_model(path)


class TestTraining:
    def test_loss_drops_and_history_logs(self, corpus, tmp_path):
        transitions, vocab = corpus
        subset = transitions[:4]
        model = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=9)
        log_path = tmp_path / "log.jsonl"
        ckpt = tmp_path / "best.ckpt"
        history = train_model(model, subset, subset, TrainConfig(
            epochs=8, batch_size=4, learning_rate=3e-3, seed=1,
            log_path=log_path, checkpoint_path=ckpt, val_sample=4,
        ))
        assert len(history) == 8
        assert history[-1]["train_loss"] < history[0]["train_loss"]
        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert lines == history
        assert ckpt.exists()
        loaded, _ = load_model(ckpt)
        assert loaded.config == model.config

    def test_shuffling_is_seeded(self, corpus):
        transitions, vocab = corpus
        losses = []
        for _ in range(2):
            model = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=9)
            history = train_model(model, transitions[:6], transitions[:2], TrainConfig(
                epochs=2, batch_size=3, learning_rate=1e-3, seed=4, val_sample=2,
            ))
            losses.append([h["train_loss"] for h in history])
        assert losses[0] == losses[1]

    def test_non_finite_loss_aborts(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=9)
        model.embed.data[:] = np.inf
        with pytest.raises(NonFiniteLoss):
            train_model(model, transitions[:2], transitions[:2], TrainConfig(
                epochs=1, batch_size=2,
            ))

    def test_max_steps_bounds_the_run(self, corpus):
        transitions, vocab = corpus
        model = GraphUpdateModel(tiny_config("none"), vocab, REL, seed=9)
        history = train_model(model, transitions[:8], [], TrainConfig(
            epochs=50, batch_size=2, max_steps=3,
        ))
        assert history == []  # stopped mid-epoch, no epoch record written
