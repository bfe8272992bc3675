"""Scoring graph-update predictions.

Two regimes:

* teacher-forced: each transition is scored independently against the gold
  command set, with the ground-truth prior graph supplied to the predictor;
* free-run: the predictor maintains its own belief graph from empty across a
  game's walkthrough, and only the final graph is compared to the gold one.

Both use set F1 with the conventions: two empty sets score 1.0, exactly one
empty set scores 0.0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .graph import (
    BeliefGraph,
    RelationRegistry,
    UpdateSequence,
    apply_update,
    canonical_order,
    collapse_relations,
    diff,
)
from .world import Game, Transition

Predictor = Callable[[BeliefGraph, Transition], UpdateSequence]

ACTION_VERBS = (
    "look", "go", "open", "close", "take", "drop", "examine",
    "slice", "chop", "dice", "cook", "prepare",
)


def set_f1(predicted: Iterable, gold: Iterable) -> float:
    predicted = set(predicted)
    gold = set(gold)
    if not predicted and not gold:
        return 1.0
    if not predicted or not gold:
        return 0.0
    hits = len(predicted & gold)
    if hits == 0:
        return 0.0
    precision = hits / len(predicted)
    recall = hits / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def action_verb(action: str) -> str:
    head = action.split()[0] if action.split() else ""
    return head if head in ACTION_VERBS else "other"


def group_by_verb(transitions: Sequence[Transition]) -> dict[str, list[Transition]]:
    groups: dict[str, list[Transition]] = {}
    for t in transitions:
        groups.setdefault(action_verb(t.action), []).append(t)
    return groups


def gold_update(transition: Transition) -> UpdateSequence:
    return canonical_order(diff(transition.g_seen_prev, transition.g_seen_next))


def oracle_predictor() -> Predictor:
    """Replays the recorded delta, ignoring the supplied prior graph."""

    def predict(prior: BeliefGraph, transition: Transition) -> UpdateSequence:
        return gold_update(transition)

    return predict


@dataclass(frozen=True)
class VerbScore:
    f1: float
    count: int


@dataclass(frozen=True)
class EvalReport:
    kind: str  # "teacher_forced" or "free_run"
    overall: float
    count: int
    per_verb: dict[str, VerbScore] = field(default_factory=dict)
    averaging: str = "macro"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "overall": self.overall,
            "count": self.count,
            "averaging": self.averaging,
            "per_verb": {
                verb: {"f1": score.f1, "count": score.count}
                for verb, score in sorted(self.per_verb.items())
            },
        }


def render_report(report: EvalReport) -> str:
    lines = [f"{report.kind}  n={report.count}  {report.averaging} f1={report.overall:.4f}"]
    if report.per_verb:
        width = max(len(v) for v in report.per_verb)
        lines.append(f"{'verb'.ljust(width)}  {'n':>6}  f1")
        for verb in sorted(report.per_verb):
            score = report.per_verb[verb]
            lines.append(f"{verb.ljust(width)}  {score.count:>6}  {score.f1:.4f}")
    return "\n".join(lines)


def _micro_f1(pairs: list[tuple[set, set]]) -> float:
    hits = sum(len(p & g) for p, g in pairs)
    n_pred = sum(len(p) for p, _ in pairs)
    n_gold = sum(len(g) for _, g in pairs)
    if n_pred == 0 and n_gold == 0:
        return 1.0
    if n_pred == 0 or n_gold == 0 or hits == 0:
        return 0.0
    precision = hits / n_pred
    recall = hits / n_gold
    return 2.0 * precision * recall / (precision + recall)


def teacher_forced_eval(
    transitions: Sequence[Transition],
    predict: Predictor,
    micro: bool = False,
) -> EvalReport:
    """Score each transition's predicted command set against the gold one,
    with the ground-truth prior graph as input."""
    if not transitions:
        raise ValueError("no transitions to score")
    pairs: list[tuple[str, set, set]] = []
    for t in transitions:
        predicted = set(predict(t.g_seen_prev, t))
        gold = set(gold_update(t))
        pairs.append((action_verb(t.action), predicted, gold))
    per_verb = {}
    for verb in sorted({v for v, _, _ in pairs}):
        scores = [set_f1(p, g) for v, p, g in pairs if v == verb]
        per_verb[verb] = VerbScore(sum(scores) / len(scores), len(scores))
    if micro:
        overall = _micro_f1([(p, g) for _, p, g in pairs])
    else:
        scores = [set_f1(p, g) for _, p, g in pairs]
        overall = sum(scores) / len(scores)
    return EvalReport(
        kind="teacher_forced",
        overall=overall,
        count=len(pairs),
        per_verb=per_verb,
        averaging="micro" if micro else "macro",
    )


def free_run_eval(
    games: Sequence[Game],
    predict: Predictor,
    collapse: bool = False,
    placeholder: str = "related_to",
) -> EvalReport:
    """Maintain a belief graph from empty over each walkthrough and compare
    the final belief against the gold final graph.

    With ``collapse`` set, relation labels on both sides are replaced by a
    placeholder before comparison, so only the connection structure counts.
    """
    if not games:
        raise ValueError("no games to score")
    placeholder_rel = RelationRegistry((placeholder,)).relation(placeholder)
    scores = []
    for game in games:
        belief = BeliefGraph()
        for transition in game.on_path:
            ops = predict(belief, transition)
            belief = apply_update(belief, ops)
        gold = game.final_seen
        if collapse:
            belief = collapse_relations(belief, placeholder_rel)
            gold = collapse_relations(gold, placeholder_rel)
        scores.append(set_f1(belief.triples, gold.triples))
    return EvalReport(
        kind="free_run",
        overall=sum(scores) / len(scores),
        count=len(games),
    )
