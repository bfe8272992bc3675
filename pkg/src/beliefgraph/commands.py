"""Textual command language for graph updates.

The model reads and emits commands of the form ``verb ( head , tail ,
relation )`` with multiple commands joined by ``<sep>`` and terminated by
``<eos>``. Rendering and parsing round-trip exactly; parsing model output
is total, dropping and counting malformed segments instead of raising.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .graph import Entity, RelationRegistry, Triple, UpdateOp, UpdateSequence, Verb

PAD, SOS, EOS, SEP, UNK = "<pad>", "<sos>", "<eos>", "<sep>", "<unk>"
RESERVED_TOKENS = (PAD, SOS, EOS, SEP, UNK)
PAD_ID, SOS_ID, EOS_ID, SEP_ID, UNK_ID = range(5)

_PUNCT = ("(", ")", ",")


class MalformedCommand(ValueError):
    """Token run that does not form ``verb ( arg , arg , arg )``."""


def tokenize(text: str) -> list[str]:
    """Lowercase and whitespace-split, with ``(`` ``)`` ``,`` split off as
    their own tokens."""
    for p in _PUNCT:
        text = text.replace(p, f" {p} ")
    return text.lower().split()


def parse_op(tokens: Sequence[str], relations: RelationRegistry) -> UpdateOp:
    """Parse one command's tokens.

    Raises MalformedCommand on structural problems and UnknownRelation when
    the third slot is not a registered relation.
    """
    if not tokens:
        raise MalformedCommand("empty command")
    verb_token = tokens[0]
    if verb_token not in ("add", "delete"):
        raise MalformedCommand(f"unknown verb {verb_token!r}")
    if len(tokens) < 3 or tokens[1] != "(" or tokens[-1] != ")":
        raise MalformedCommand(f"missing parentheses in {' '.join(tokens)!r}")
    slots: list[list[str]] = [[]]
    for tok in tokens[2:-1]:
        if tok == ",":
            slots.append([])
        elif tok in ("(", ")"):
            raise MalformedCommand(f"nested punctuation in {' '.join(tokens)!r}")
        else:
            slots[-1].append(tok)
    if len(slots) != 3 or any(not slot for slot in slots):
        raise MalformedCommand(f"expected 3 arguments in {' '.join(tokens)!r}")
    head, tail, rel = (" ".join(slot) for slot in slots)
    relation = relations.relation(rel)
    try:
        triple = Triple(Entity(head), Entity(tail), relation)
    except ValueError as exc:
        raise MalformedCommand(str(exc)) from exc
    return UpdateOp(Verb(verb_token), triple)


def render_op(op: UpdateOp) -> str:
    t = op.triple
    return f"{op.verb.value} ( {t.head.label} , {t.tail.label} , {t.relation.label} )"


def render_sequence(ops: Iterable[UpdateOp]) -> list[str]:
    """Token list for a whole update: per-op tokens joined by <sep>, closed
    by <eos>. The empty update renders as just [<eos>]."""
    out: list[str] = []
    for op in ops:
        if out:
            out.append(SEP)
        out.extend(render_op(op).split())
    out.append(EOS)
    return out


def parse_sequence(
    tokens: Sequence[str], relations: RelationRegistry
) -> tuple[UpdateSequence, int]:
    """Split on <sep>, stop at the first <eos>, parse each segment.

    Malformed segments are dropped and counted; evaluation treats them as
    wrong predictions rather than crashing on bad generations.
    """
    body: list[str] = []
    for tok in tokens:
        if tok == EOS:
            break
        body.append(tok)
    if not body:
        return (), 0
    segments: list[list[str]] = [[]]
    for tok in body:
        if tok == SEP:
            segments.append([])
        else:
            segments[-1].append(tok)
    ops: list[UpdateOp] = []
    malformed = 0
    for segment in segments:
        try:
            ops.append(parse_op(segment, relations))
        except ValueError:
            malformed += 1
    return tuple(ops), malformed


class Vocabulary:
    """Bijective token-id map with the five reserved tokens pinned at 0..4."""

    def __init__(self, tokens: Iterable[str]):
        ordered = list(RESERVED_TOKENS)
        seen = set(ordered)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                ordered.append(tok)
        self._tokens = tuple(ordered)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    @classmethod
    def from_token_lists(cls, token_lists: Iterable[Iterable[str]]) -> "Vocabulary":
        seen = set()
        for tokens in token_lists:
            seen.update(tokens)
        return cls(sorted(seen - set(RESERVED_TOKENS)))

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._ids.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": list(self._tokens)}, indent=0, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        tokens = payload["tokens"]
        if tuple(tokens[:5]) != RESERVED_TOKENS:
            raise ValueError(f"{path}: reserved tokens missing or reordered")
        vocab = cls(tokens[5:])
        if vocab.tokens != tuple(tokens):
            raise ValueError(f"{path}: duplicate tokens in vocabulary file")
        return vocab
