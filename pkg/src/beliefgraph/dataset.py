"""Transition corpora: building game splits, JSONL on-disk format, vocab.

Each JSONL line is one transition with keys ``game``, ``step``, ``branch``,
``graph_prev``, ``action``, ``observation``, ``graph_next``, ``ops``.
Graphs are sorted ``[head, relation, tail]`` rows; ``ops`` is the canonical
rendering of the graph delta and is re-checked against the stored graphs on
load. The test split draws object names from held-out adjective+noun pairs:
nouns recur across splits, full two-word names never do.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import repeat
from pathlib import Path

import numpy as np

from .commands import MalformedCommand, Vocabulary, render_op, parse_op, tokenize
from .graph import (
    BeliefGraph,
    Entity,
    RelationRegistry,
    Triple,
    UnknownRelation,
    canonical_order,
    diff,
)
from .world import Game, Transition, WorldConfig, generate_game

SPLITS = ("train", "valid", "test")
_KEYS = frozenset(
    ("game", "step", "branch", "graph_prev", "action", "observation", "graph_next", "ops")
)


class SchemaError(ValueError):
    """A dataset file failed validation; the message names the first bad line."""


def split_combo_pools(
    adjectives: tuple[str, ...],
    nouns: tuple[str, ...],
    seed: int,
    n_test_adjectives: int = 3,
) -> tuple[tuple[tuple[str, str], ...], tuple[tuple[str, str], ...]]:
    """Per-noun adjective split: every noun appears in both pools, but the
    resulting two-word object names are disjoint between them."""
    if n_test_adjectives >= len(adjectives):
        raise ValueError("need at least one training adjective per noun")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 97]))
    train: list[tuple[str, str]] = []
    test: list[tuple[str, str]] = []
    adjs = sorted(adjectives)
    for noun in sorted(nouns):
        order = rng.permutation(len(adjs))
        held = {adjs[int(i)] for i in order[:n_test_adjectives]}
        for adj in adjs:
            (test if adj in held else train).append((adj, noun))
    return tuple(sorted(train)), tuple(sorted(test))


def graph_payload(graph: BeliefGraph) -> list[list[str]]:
    return [[h, r, t] for h, r, t in (
        (tr.head.label, tr.relation.label, tr.tail.label) for tr in graph
    )]


def graph_from_payload(rows: list, relations: RelationRegistry) -> BeliefGraph:
    triples = []
    for row in rows:
        if not (isinstance(row, list) and len(row) == 3 and all(isinstance(x, str) for x in row)):
            raise ValueError(f"bad graph row {row!r}")
        head, rel, tail = row
        triples.append(Triple(Entity(head), Entity(tail), relations.relation(rel)))
    return BeliefGraph(triples)


def transition_payload(t: Transition) -> dict:
    ops = canonical_order(diff(t.g_seen_prev, t.g_seen_next))
    return {
        "game": t.game_id,
        "step": t.step,
        "branch": t.branch,
        "graph_prev": graph_payload(t.g_seen_prev),
        "action": t.action,
        "observation": t.observation,
        "graph_next": graph_payload(t.g_seen_next),
        "ops": [render_op(op) for op in ops],
    }


def write_transitions(path: Path, transitions: list[Transition]) -> None:
    with open(path, "w") as handle:
        for t in transitions:
            handle.write(json.dumps(transition_payload(t), sort_keys=True, separators=(",", ":")))
            handle.write("\n")


def load_transitions(path: Path, relations: RelationRegistry) -> list[Transition]:
    """Parse and validate a JSONL transition file.

    Every record is re-checked for internal consistency: the stored op list
    must equal the canonical delta between the stored graphs.
    """
    out: list[Transition] = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}, line {lineno}: invalid json ({exc.msg})") from exc
            if not isinstance(record, dict) or set(record) != _KEYS:
                raise SchemaError(f"{path}, line {lineno}: expected keys {sorted(_KEYS)}")
            try:
                prev = graph_from_payload(record["graph_prev"], relations)
                nxt = graph_from_payload(record["graph_next"], relations)
                ops = tuple(parse_op(tokenize(s), relations) for s in record["ops"])
                if not isinstance(record["game"], int) or not isinstance(record["step"], int):
                    raise ValueError("game and step must be integers")
                if not isinstance(record["branch"], int) or record["branch"] < 0:
                    raise ValueError("branch must be a non-negative integer")
                if not isinstance(record["action"], str) or not isinstance(record["observation"], str):
                    raise ValueError("action and observation must be strings")
            except (ValueError, UnknownRelation, MalformedCommand, TypeError) as exc:
                raise SchemaError(f"{path}, line {lineno}: {exc}") from exc
            expected = canonical_order(diff(prev, nxt))
            if ops != expected:
                raise SchemaError(
                    f"{path}, line {lineno}: ops do not match the graph delta"
                )
            out.append(
                Transition(
                    game_id=record["game"],
                    step=record["step"],
                    branch=record["branch"],
                    g_seen_prev=prev,
                    action=record["action"],
                    observation=record["observation"],
                    g_seen_next=nxt,
                )
            )
    return out


def games_from_transitions(transitions: list[Transition]) -> list[Game]:
    """Regroup a flat transition list into games; walkthrough actions are
    the branch-0 transitions in step order."""
    by_game: dict[int, list[Transition]] = {}
    for t in transitions:
        by_game.setdefault(t.game_id, []).append(t)
    games = []
    for game_id in sorted(by_game):
        ts = sorted(by_game[game_id], key=lambda t: (t.step, t.branch))
        walkthrough = tuple(t.action for t in ts if t.branch == 0)
        games.append(Game(game_id, walkthrough, tuple(ts)))
    return games


def game_seed(base_seed: int, split_index: int, game_index: int) -> int:
    return base_seed * 4000003 + split_index * 1000003 + game_index


def build_dataset(
    config: WorldConfig,
    n_games: dict[str, int],
    seed: int,
    out_dir: Path,
    jobs: int = 1,
) -> dict[str, Path]:
    """Generate and write train/valid/test splits plus a stats file.

    Game seeds are disjoint across splits; the test split uses the held-out
    object-name pool. Generation is independent per game, so jobs > 1
    fans the games out over a process pool; output bytes do not depend
    on the job count because the parent writes results in seed order.
    """
    for split, count in n_games.items():
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        if count < 0:
            raise ValueError(f"negative game count {count} for split {split!r}")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_pool, test_pool = split_combo_pools(
        config.object_adjectives, config.object_nouns, seed
    )
    paths: dict[str, Path] = {}
    stats: dict[str, dict] = {}
    for split_index, split in enumerate(SPLITS):
        count = n_games.get(split, 0)
        pool = test_pool if split == "test" else train_pool
        split_config = replace(config, object_combos=pool)
        seeds = [game_seed(seed, split_index, i) for i in range(count)]
        if jobs > 1 and count > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, count)) as pool_exec:
                games = list(pool_exec.map(generate_game, repeat(split_config), seeds))
        else:
            games = [generate_game(split_config, s) for s in seeds]
        transitions = [t for game in games for t in game.transitions]
        path = out_dir / f"{split}.jsonl"
        write_transitions(path, transitions)
        paths[split] = path
        stats[split] = corpus_stats(transitions)
    with open(out_dir / "stats.json", "w") as handle:
        json.dump(stats, handle, indent=2, sort_keys=True)
    paths["stats"] = out_dir / "stats.json"
    return paths


def corpus_stats(transitions: list[Transition]) -> dict:
    if not transitions:
        return {"n_games": 0, "n_transitions": 0}
    entities: set[str] = set()
    relations: set[str] = set()
    obs_tokens = 0
    n_ops = 0
    for t in transitions:
        obs_tokens += len(tokenize(t.observation))
        n_ops += len(diff(t.g_seen_prev, t.g_seen_next))
        for g in (t.g_seen_prev, t.g_seen_next):
            for tr in g:
                entities.add(tr.head.label)
                entities.add(tr.tail.label)
                relations.add(tr.relation.label)
    games = games_from_transitions(transitions)
    final_sizes = [len(g.final_seen) for g in games]
    return {
        "n_games": len(games),
        "n_transitions": len(transitions),
        "avg_observation_tokens": round(obs_tokens / len(transitions), 2),
        "avg_ops_per_transition": round(n_ops / len(transitions), 3),
        "n_entities": len(entities),
        "n_relation_types": len(relations),
        "avg_final_graph_triples": round(sum(final_sizes) / len(final_sizes), 2),
    }


def build_vocab(transitions: list[Transition]) -> Vocabulary:
    """Vocabulary over observation, action, and rendered-op tokens."""
    token_lists = []
    for t in transitions:
        token_lists.append(tokenize(t.observation))
        token_lists.append(tokenize(t.action))
        for op in canonical_order(diff(t.g_seen_prev, t.g_seen_next)):
            token_lists.append(tokenize(render_op(op)))
    return Vocabulary.from_token_lists(token_lists)
