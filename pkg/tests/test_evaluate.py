"""Metric checks against a deliberately naive reference scorer."""
import json
import random

import pytest

from beliefgraph.dataset import games_from_transitions
from beliefgraph.evaluate import (
    action_verb,
    free_run_eval,
    gold_update,
    group_by_verb,
    oracle_predictor,
    render_report,
    set_f1,
    teacher_forced_eval,
)
from beliefgraph.graph import (
    BeliefGraph,
    Entity,
    RelationRegistry,
    Triple,
    add_op,
    apply_update,
    delete_op,
)
from beliefgraph.world import Transition, WorldConfig, generate_game

REL = RelationRegistry()
CONFIG = WorldConfig(n_rooms=3, n_objects=5, recipe_length=2, n_random_actions_per_step=2)


def brute_f1(pred, gold):
    """Straight-from-the-definition reference implementation."""
    pred, gold = list(set(pred)), list(set(gold))
    matches = 0
    for p in pred:
        for g in gold:
            if p == g:
                matches += 1
                break
    if not pred and not gold:
        return 1.0
    if not pred or not gold or matches == 0:
        return 0.0
    precision = matches / len(pred)
    recall = matches / len(gold)
    return 2 * precision * recall / (precision + recall)


def random_ops(rng, k):
    heads = ("player", "red apple", "old key", "toolbox", "meal")
    tails = ("shed", "backyard", "player", "toolbox", "meal")
    out = set()
    for _ in range(k):
        make = add_op if rng.random() < 0.7 else delete_op
        out.add(make(
            Entity(rng.choice(heads)),
            Entity(rng.choice(tails)),
            REL.relation(rng.choice(REL.labels)),
        ))
    return out


class TestSetF1:
    def test_conventions(self):
        assert set_f1(set(), set()) == 1.0
        assert set_f1({1}, set()) == 0.0
        assert set_f1(set(), {1}) == 0.0
        assert set_f1({1, 2}, {2, 3}) == 0.5
        assert set_f1({1, 2, 3}, {1, 2, 3}) == 1.0

    def test_agrees_with_reference_on_random_cases(self):
        rng = random.Random(17)
        for _ in range(100):
            pred = random_ops(rng, rng.randrange(0, 8))
            gold = random_ops(rng, rng.randrange(0, 8))
            assert abs(set_f1(pred, gold) - brute_f1(pred, gold)) < 1e-9


def make_transition(step, prev_ops, next_ops, action="look"):
    prev = apply_update(BeliefGraph(), tuple(prev_ops))
    nxt = apply_update(prev, tuple(next_ops))
    return Transition(0, step, 0, prev, action, "obs .", nxt)


def keyed_predictor(table):
    def predict(prior, transition):
        return table[transition.step]
    return predict


class TestTeacherForced:
    def test_oracle_is_perfect_on_a_corpus(self):
        transitions = list(generate_game(CONFIG, 31).transitions)
        report = teacher_forced_eval(transitions, oracle_predictor())
        assert report.overall == 1.0
        assert all(score.f1 == 1.0 for score in report.per_verb.values())
        assert sum(s.count for s in report.per_verb.values()) == report.count

    def test_single_transition_self_score(self):
        transitions = list(generate_game(CONFIG, 31).transitions)
        rich = max(transitions, key=lambda t: len(gold_update(t)))
        report = teacher_forced_eval([rich], oracle_predictor())
        assert report.overall == 1.0

    def test_macro_and_micro_divergence(self):
        a = Entity("a"), Entity("b"), REL.relation("at")
        ops1 = (add_op(*a),)
        ops2 = (
            add_op(Entity("c"), Entity("d"), REL.relation("in")),
            add_op(Entity("e"), Entity("f"), REL.relation("on")),
            add_op(Entity("g"), Entity("h"), REL.relation("is")),
        )
        t1 = make_transition(0, (), ops1)
        t2 = make_transition(1, (), ops2)
        predict = keyed_predictor({0: ops1, 1: ()})
        macro = teacher_forced_eval([t1, t2], predict)
        assert macro.overall == pytest.approx((1.0 + 0.0) / 2)
        micro = teacher_forced_eval([t1, t2], predict, micro=True)
        # 1 hit, 1 predicted, 4 gold
        p, r = 1 / 1, 1 / 4
        assert micro.overall == pytest.approx(2 * p * r / (p + r))
        assert micro.averaging == "micro"

    def test_empty_gold_empty_prediction_scores_one(self):
        t = make_transition(0, (add_op(Entity("a"), Entity("b"), REL.relation("at")),), ())
        report = teacher_forced_eval([t], keyed_predictor({0: ()}))
        assert report.overall == 1.0

    def test_agrees_with_reference_scorer(self):
        rng = random.Random(3)
        transitions = list(generate_game(CONFIG, 8).transitions)[:40]
        noisy = {}
        for t in transitions:
            gold = list(gold_update(t))
            kept = tuple(op for op in gold if rng.random() < 0.6) + tuple(random_ops(rng, 1))
            noisy[(t.step, t.branch)] = kept

        def predict(prior, tr):
            return noisy[(tr.step, tr.branch)]

        report = teacher_forced_eval(transitions, predict)
        expected = sum(
            brute_f1(noisy[(t.step, t.branch)], gold_update(t)) for t in transitions
        ) / len(transitions)
        assert abs(report.overall - expected) < 1e-9

    def test_refuses_empty_input(self):
        with pytest.raises(ValueError):
            teacher_forced_eval([], oracle_predictor())


class TestVerbGrouping:
    def test_unknown_verbs_fold_into_other(self):
        assert action_verb("dance wildly") == "other"
        assert action_verb("go west") == "go"
        t1 = make_transition(0, (), (), action="dance wildly")
        t2 = make_transition(1, (), (), action="go west")
        groups = group_by_verb([t1, t2])
        assert set(groups) == {"other", "go"}

    def test_generated_games_have_expected_verbs(self):
        game = generate_game(CONFIG, 12)
        groups = group_by_verb(list(game.transitions))
        assert "look" in groups and "go" in groups and "prepare" in groups
        assert "other" not in groups


class TestFreeRun:
    def test_oracle_reaches_the_gold_final_graph(self):
        games = [generate_game(CONFIG, seed) for seed in range(40, 44)]
        report = free_run_eval(games, oracle_predictor())
        assert report.overall == 1.0
        assert report.count == 4

    def test_collapsed_scoring_forgives_relation_errors(self):
        games = [generate_game(CONFIG, 50)]

        def relation_scrambler(prior, transition):
            swapped = []
            for op in gold_update(transition):
                wrong = "on" if op.triple.relation.label == "in" else op.triple.relation.label
                swapped.append(type(op)(
                    op.verb,
                    Triple(op.triple.head, op.triple.tail, REL.relation(wrong)),
                ))
            return tuple(swapped)

        strict = free_run_eval(games, relation_scrambler)
        collapsed = free_run_eval(games, relation_scrambler, collapse=True)
        assert strict.overall < 1.0
        assert collapsed.overall == 1.0

    def test_silent_predictor_scores_zero(self):
        games = [generate_game(CONFIG, 60)]
        report = free_run_eval(games, lambda prior, tr: ())
        assert report.overall == 0.0

    def test_agrees_with_reference_replay(self):
        rng = random.Random(9)
        game = generate_game(CONFIG, 70)

        def lossy(prior, transition):
            return tuple(op for op in gold_update(transition) if rng.random() < 0.8)

        calls = []

        def recording(prior, transition):
            ops = lossy(prior, transition)
            calls.append(ops)
            return ops

        report = free_run_eval([game], recording)
        belief = set()
        for ops in calls:
            for op in ops:
                if op.verb.name == "ADD":
                    belief.add(op.triple)
                else:
                    belief.discard(op.triple)
        expected = brute_f1(belief, set(game.final_seen.triples))
        assert abs(report.overall - expected) < 1e-9

    def test_games_regrouped_from_corpus_score_one(self):
        transitions = []
        for seed in (80, 81):
            transitions.extend(generate_game(CONFIG, seed).transitions)
        games = games_from_transitions(transitions)
        report = free_run_eval(games, oracle_predictor())
        assert report.overall == 1.0


class TestReporting:
    def test_json_payload_is_stable(self):
        report = teacher_forced_eval(
            list(generate_game(CONFIG, 90).transitions), oracle_predictor()
        )
        payload = report.to_json()
        assert payload["kind"] == "teacher_forced"
        assert json.loads(json.dumps(payload)) == payload

    def test_rendered_table_is_aligned(self):
        report = teacher_forced_eval(
            list(generate_game(CONFIG, 91).transitions), oracle_predictor()
        )
        text = render_report(report)
        lines = text.splitlines()
        assert "f1=" in lines[0]
        body = lines[2:]
        assert len(body) == len(report.per_verb)
        positions = {line.rindex("1.0000") for line in body}
        assert len(positions) == 1
