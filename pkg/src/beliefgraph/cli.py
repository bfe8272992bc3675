"""Command-line pipeline: data generation, training, evaluation, plumbing.

Exit codes: 0 success, 1 runtime failure (corrupt data, failed generation,
diverged training, gradient check failure), 2 usage or configuration error.
Every subcommand is deterministic for fixed flags and seed; --jobs only
changes wall time, never output bytes.

Configuration files are flat ``key = value`` lines (``#`` comments allowed);
command-line flags override file values.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .commands import MalformedCommand, parse_op, render_op, render_sequence, tokenize
from .dataset import (
    SPLITS,
    SchemaError,
    build_dataset,
    build_vocab,
    games_from_transitions,
    load_transitions,
)
from .evaluate import (
    EvalReport,
    free_run_eval,
    gold_update,
    oracle_predictor,
    render_report,
    teacher_forced_eval,
)
from .graph import (
    RelationRegistry,
    UnknownRelation,
    apply_update,
    diff,
    read_graph_file,
    write_graph_file,
)
from .layers import (
    BidirectionalAggregator,
    GCNLayer,
    GraphBatch,
    PointerSoftmax,
    RGCNLayer,
    TransformerDecoderBlock,
    TransformerEncoderBlock,
    causal_mask,
    gcn_adjacency,
    rgcn_adjacency,
)
from .model import (
    VARIANTS,
    GraphUpdateModel,
    ModelConfig,
    NonFiniteLoss,
    TrainConfig,
    load_model,
    save_model,
    train_model,
)
from .world import GenerationFailure, Transition, WorldConfig, generate_game


class ConfigError(Exception):
    """Bad flag value or configuration file content (exit code 2)."""


# -- configuration files ----------------------------------------------------

def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_words(text: str) -> tuple[str, ...]:
    return tuple(word.strip() for word in text.split(",") if word.strip())


_WORLD_KEYS: dict[str, Callable[[str], object]] = {
    "n_rooms": int,
    "room_layout_seed": int,
    "n_objects": int,
    "n_random_actions_per_step": int,
    "recipe_length": int,
    "random_actions_compound": _parse_bool,
    "object_adjectives": _parse_words,
    "object_nouns": _parse_words,
}

_MODEL_KEYS: dict[str, Callable[[str], object]] = {
    "variant": str,
    "width": int,
    "n_heads": int,
    "n_encoder_layers": int,
    "n_decoder_layers": int,
    "n_graph_layers": int,
    "ff_inner": int,
    "max_decode_len": int,
}

_TRAIN_KEYS: dict[str, Callable[[str], object]] = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "max_steps": int,
    "eval_every_steps": int,
    "stop_at_f1": float,
    "val_sample": int,
}


def load_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"missing config file {path}")
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _coerce(key: str, value: str, parse: Callable[[str], object]) -> object:
    try:
        return parse(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def world_config_from(mapping: dict[str, str]) -> WorldConfig:
    kwargs = {}
    for key, value in mapping.items():
        if key not in _WORLD_KEYS:
            raise ConfigError(
                f"unknown world config key {key!r}; valid keys: {', '.join(sorted(_WORLD_KEYS))}"
            )
        kwargs[key] = _coerce(key, value, _WORLD_KEYS[key])
    try:
        return WorldConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- ops files ----------------------------------------------------------------

def read_ops_file(path: Path, registry: RelationRegistry):
    """One rendered command per line; blank lines are ignored."""
    ops = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            ops.append(parse_op(tokenize(line), registry))
        except (MalformedCommand, UnknownRelation) as exc:
            raise MalformedCommand(f"{path}:{lineno}: {exc}") from None
    return ops


def write_ops_file(path: Path, ops) -> None:
    Path(path).write_text("".join(render_op(op) + "\n" for op in ops), encoding="utf-8")


# -- gradient check suite -----------------------------------------------------

def _case_embedding(rng: np.random.Generator):
    table = ad.rng_normal(rng, (7, 6), 1.0)
    ids = [0, 3, 3, 5, 2]
    mix = ad.constant(ad.rng_normal(rng, (5, 6), 1.0))

    def f(t):
        return ad.mean_all(ad.mul(ad.embedding_lookup(t, ids), mix))

    return [(f, table)]


def _case_encoder_block(rng: np.random.Generator):
    block = TransformerEncoderBlock(rng, 8, 2, 12)
    probe = ad.constant(ad.rng_normal(rng, (4, 8), 1.0))
    x0 = ad.rng_normal(rng, (4, 8), 1.0)
    xc = ad.constant(x0)

    def f_input(x):
        return ad.mean_all(ad.mul(block(x), probe))

    w0 = block.attn.wq[0].data.copy()

    def f_param(p):
        block.attn.wq[0] = p
        return ad.mean_all(ad.mul(block(xc), probe))

    return [(f_input, x0), (f_param, w0)]


def _case_decoder_block(rng: np.random.Generator):
    block = TransformerDecoderBlock(rng, 8, 2, 12)
    memory = ad.constant(ad.rng_normal(rng, (5, 8), 1.0))
    mask = causal_mask(4)
    probe = ad.constant(ad.rng_normal(rng, (4, 8), 1.0))
    x0 = ad.rng_normal(rng, (4, 8), 1.0)
    xc = ad.constant(x0)

    def f_input(x):
        return ad.mean_all(ad.mul(block(x, memory, mask), probe))

    w0 = block.cross_attn.wv[1].data.copy()

    def f_param(p):
        block.cross_attn.wv[1] = p
        return ad.mean_all(ad.mul(block(xc, memory, mask), probe))

    return [(f_input, x0), (f_param, w0)]


_GRAPH_FIXTURE = GraphBatch(
    node_labels=((0,), (1,), (2,), (3,)),
    edges=((0, 1, 0), (2, 1, 1), (3, 0, 2), (1, 3, 0)),
    n_relations=3,
)


def _case_gcn(rng: np.random.Generator):
    adjacency = gcn_adjacency(_GRAPH_FIXTURE)
    layer = GCNLayer(rng, 8)
    probe = ad.constant(ad.rng_normal(rng, (4, 8), 1.0))
    h0 = ad.rng_normal(rng, (4, 8), 1.0)
    hc = ad.constant(h0)

    def f_input(h):
        return ad.mean_all(ad.mul(layer(h, adjacency), probe))

    w0 = layer.proj.w.data.copy()

    def f_param(p):
        layer.proj.w = p
        return ad.mean_all(ad.mul(layer(hc, adjacency), probe))

    return [(f_input, h0), (f_param, w0)]


def _case_rgcn(rng: np.random.Generator, with_embeddings: bool):
    rel_adjacency = rgcn_adjacency(_GRAPH_FIXTURE)
    layer = RGCNLayer(rng, 8, 3, with_embeddings)
    embeddings = None
    if with_embeddings:
        embeddings = [
            ad.tensor(ad.rng_normal(rng, (1, 8), 0.5), requires_grad=True) for _ in range(3)
        ]
    probe = ad.constant(ad.rng_normal(rng, (4, 8), 1.0))
    h0 = ad.rng_normal(rng, (4, 8), 1.0)
    hc = ad.constant(h0)

    def f_input(h):
        return ad.mean_all(ad.mul(layer(h, rel_adjacency, embeddings), probe))

    w0 = layer.rel_weights[0].data.copy()

    def f_weight(p):
        layer.rel_weights[0] = p
        return ad.mean_all(ad.mul(layer(hc, rel_adjacency, embeddings), probe))

    cases = [(f_input, h0), (f_weight, w0)]
    if with_embeddings:
        e0 = embeddings[0].data.copy()

        def f_embedding(p):
            embeddings[0] = p
            return ad.mean_all(ad.mul(layer(hc, rel_adjacency, embeddings), probe))

        cases.append((f_embedding, e0))
    return cases


def _case_aggregator(rng: np.random.Generator):
    aggregator = BidirectionalAggregator(rng, 8)
    h_graph = ad.constant(ad.rng_normal(rng, (3, 8), 1.0))
    probe_text = ad.constant(ad.rng_normal(rng, (5, 8), 1.0))
    probe_graph = ad.constant(ad.rng_normal(rng, (3, 8), 1.0))
    t0 = ad.rng_normal(rng, (5, 8), 1.0)
    tc = ad.constant(t0)

    def total(h_text, h_graph_in):
        text_out, graph_out = aggregator(h_text, h_graph_in)
        return ad.add_n([
            ad.mean_all(ad.mul(text_out, probe_text)),
            ad.mean_all(ad.mul(graph_out, probe_graph)),
        ])

    def f_input(h):
        return total(h, h_graph)

    w0 = aggregator.graph_proj.w.data.copy()

    def f_param(p):
        aggregator.graph_proj.w = p
        return total(tc, h_graph)

    return [(f_input, t0), (f_param, w0)]


def _case_pointer(rng: np.random.Generator):
    pointer = PointerSoftmax(rng, 8, 9)
    memory = ad.constant(ad.rng_normal(rng, (4, 8), 1.0))
    source_ids = [5, 9, 2, 10]  # two ids beyond the vocab: copy-only mass
    targets = [1, 10, 4]
    d0 = ad.rng_normal(rng, (3, 8), 1.0)
    dc = ad.constant(d0)

    def f_input(d):
        return ad.nll_loss(pointer(d, memory, source_ids, 11), targets)

    w0 = pointer.copy_key.w.data.copy()

    def f_key(p):
        pointer.copy_key.w = p
        return ad.nll_loss(pointer(dc, memory, source_ids, 11), targets)

    g0 = pointer.gate.w.data.copy()

    def f_gate(p):
        pointer.gate.w = p
        return ad.nll_loss(pointer(dc, memory, source_ids, 11), targets)

    return [(f_input, d0), (f_key, w0), (f_gate, g0)]


def _case_full_model(rng: np.random.Generator):
    config = WorldConfig(n_rooms=2, n_objects=3, recipe_length=1, n_random_actions_per_step=0)
    game_seed = int(rng.integers(0, 2**31 - 1))
    game = generate_game(config, game_seed)
    transition = min(
        (t for t in game.transitions if t.g_seen_prev.triples != t.g_seen_next.triples),
        key=lambda t: len(diff(t.g_seen_prev, t.g_seen_next)),
    )
    vocab = build_vocab(game.transitions)
    model_config = ModelConfig(
        variant="rgcn-rel", width=8, n_heads=2, n_encoder_layers=1,
        n_decoder_layers=1, n_graph_layers=1, ff_inner=12, max_decode_len=64,
    )
    model = GraphUpdateModel(model_config, vocab, config.relations, seed=game_seed % 997)

    def f_gate(p):
        model.pointer.gate.w = p
        return model.forward_loss(transition)

    def f_relation(p):
        model.relation_embed[0] = p
        return model.forward_loss(transition)

    return [
        (f_gate, model.pointer.gate.w.data.copy()),
        (f_relation, model.relation_embed[0].data.copy()),
    ]


# (name, case builder, finite-difference step); the full model gets a larger
# step because its float32 loss sits near the rounding floor of a smaller one
GRADCHECK_BLOCKS: tuple[tuple[str, Callable, float], ...] = (
    ("embedding", _case_embedding, 1e-3),
    ("encoder-block", _case_encoder_block, 1e-3),
    ("decoder-block", _case_decoder_block, 1e-3),
    ("gcn", _case_gcn, 1e-3),
    ("rgcn", lambda rng: _case_rgcn(rng, False), 1e-3),
    ("rgcn-rel-emb", lambda rng: _case_rgcn(rng, True), 1e-3),
    ("aggregator", _case_aggregator, 1e-3),
    ("pointer-softmax", _case_pointer, 1e-3),
    ("full-model", _case_full_model, 3e-3),
)


def gradient_suite(n_seeds: int = 20, tolerance: float = 1e-3) -> list[dict]:
    """Finite-difference checks for every differentiable block.

    Each block is rebuilt from scratch per seed and probed both through its
    input and through a representative deep parameter, so the whole backward
    path is exercised. Central differences are meaningless within eps of a
    relu kink, so a draw that misses tolerance is retried at a fresh point:
    a kink straddle moves away, while a genuine vjp defect fails every draw.
    Returns one record per block with the worst accepted error.
    """
    results = []
    for name, build, eps in GRADCHECK_BLOCKS:
        worst = 0.0
        for seed in range(n_seeds):
            err = float("inf")
            for attempt in range(3):
                rng = np.random.default_rng(np.random.SeedSequence([1303, seed, attempt]))
                err = max(ad.grad_check(f, point, eps=eps) for f, point in build(rng))
                if err < tolerance:
                    break
            worst = max(worst, err)
        results.append({"block": name, "max_rel_err": worst, "ok": worst < tolerance})
    return results


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    counts = {"train": args.train, "valid": args.valid, "test": args.test}
    for split, count in counts.items():
        if count < 0:
            raise ConfigError(f"--{split} must be >= 0, got {count}")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    mapping = load_config_file(args.config) if args.config else {}
    mapping.update(parse_overrides(args.overrides))
    config = world_config_from(mapping)
    paths = build_dataset(config, counts, seed=args.seed, out_dir=args.out, jobs=args.jobs)
    stats = json.loads(paths["stats"].read_text(encoding="utf-8"))
    for split in SPLITS:
        print(f"{split}: {stats[split]['n_transitions']} transitions -> {paths[split]}")
    print(f"stats -> {paths['stats']}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data_dir = Path(args.data)
    train_path = data_dir / "train.jsonl"
    valid_path = data_dir / "valid.jsonl"
    for path in (train_path, valid_path):
        if not path.exists():
            raise ConfigError(f"missing data file {path}")
    mapping = load_config_file(args.config) if args.config else {}
    mapping.update(parse_overrides(args.overrides))
    model_kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    for key, value in mapping.items():
        if key in _MODEL_KEYS:
            model_kwargs[key] = _coerce(key, value, _MODEL_KEYS[key])
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = _coerce(key, value, _TRAIN_KEYS[key])
        else:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: "
                f"{', '.join(sorted(_MODEL_KEYS) + sorted(_TRAIN_KEYS))}"
            )
    if args.variant is not None:
        model_kwargs["variant"] = args.variant
    for flag in ("epochs", "batch_size", "max_steps", "eval_every_steps",
                 "stop_at_f1", "val_sample"):
        value = getattr(args, flag)
        if value is not None:
            train_kwargs[flag] = value
    if args.lr is not None:
        train_kwargs["learning_rate"] = args.lr
    try:
        model_config = ModelConfig(**model_kwargs)
        train_config = TrainConfig(
            seed=args.seed, log_path=args.log, checkpoint_path=args.out, **train_kwargs
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    registry = RelationRegistry()
    train_transitions = load_transitions(train_path, registry)
    valid_transitions = load_transitions(valid_path, registry)
    if not train_transitions:
        raise ConfigError(f"{train_path} holds no transitions")
    longest = max(
        len(render_sequence(gold_update(t)))
        for t in train_transitions + valid_transitions
    )
    if longest > model_config.max_decode_len:
        raise ConfigError(
            f"longest rendered target in the data is {longest} tokens; "
            f"raise max_decode_len (currently {model_config.max_decode_len})"
        )
    vocab = build_vocab(train_transitions)
    model = GraphUpdateModel(model_config, vocab, registry, seed=args.seed)
    history = train_model(model, train_transitions, valid_transitions, train_config)
    out = Path(args.out)
    if not out.exists():
        # stopped before the first evaluation ever saved a checkpoint
        save_model(out, model, step=history[-1]["step"] if history else 0)
    best = max((h["val_tf_f1"] for h in history), default=float("nan"))
    last_step = history[-1]["step"] if history else 0
    print(f"variant={model_config.variant} steps={last_step} "
          f"best_val_tf_f1={best:.4f} checkpoint={out}")
    return 0


def _predict_tf_shard(
    ckpt_path: str | None, transitions: list[Transition]
) -> list[list[str]]:
    predict = oracle_predictor() if ckpt_path is None else load_model(ckpt_path)[0].predictor()
    return [[render_op(op) for op in predict(t.g_seen_prev, t)] for t in transitions]


def _score_fr_shard(ckpt_path, games, collapse: bool, placeholder: str) -> list[float]:
    predict = oracle_predictor() if ckpt_path is None else load_model(ckpt_path)[0].predictor()
    return [
        free_run_eval([game], predict, collapse=collapse, placeholder=placeholder).overall
        for game in games
    ]


def _chunks(items: list, n: int) -> list[list]:
    size = max(1, -(-len(items) // n))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _checked_ckpt(args: argparse.Namespace) -> str | None:
    """Validated checkpoint path, or None when the oracle stands in."""
    if args.oracle:
        return None
    if not args.ckpt:
        raise ConfigError("provide --ckpt or --oracle")
    if not Path(args.ckpt).exists():
        raise ConfigError(f"missing checkpoint {args.ckpt}")
    return str(args.ckpt)


def _emit_report(report: EvalReport, args: argparse.Namespace) -> None:
    if getattr(args, "per_verb", False):
        print(render_report(report))
    else:
        print(f"{report.kind}  n={report.count}  {report.averaging} f1={report.overall:.4f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as handle:
            json.dump(report.to_json(), handle, indent=2, sort_keys=True)
            handle.write("\n")


def _load_eval_transitions(args: argparse.Namespace) -> list[Transition]:
    data_path = Path(args.data)
    if not data_path.exists():
        raise ConfigError(f"missing data file {data_path}")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    return load_transitions(data_path, RelationRegistry())


def cmd_eval_tf(args: argparse.Namespace) -> int:
    transitions = _load_eval_transitions(args)
    ckpt = _checked_ckpt(args)
    if args.jobs > 1 and len(transitions) > 1:
        registry = RelationRegistry()
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            shards = pool.map(_predict_tf_shard, repeat(ckpt), _chunks(transitions, args.jobs))
            rendered = [ops for shard in shards for ops in shard]
        by_key = {
            (t.game_id, t.step, t.branch): [parse_op(tokenize(line), registry) for line in ops]
            for t, ops in zip(transitions, rendered)
        }

        def predict(prior, transition):
            return by_key[(transition.game_id, transition.step, transition.branch)]
    else:
        predict = oracle_predictor() if ckpt is None else load_model(ckpt)[0].predictor()
    report = teacher_forced_eval(transitions, predict, micro=args.micro)
    _emit_report(report, args)
    return 0


def cmd_eval_fr(args: argparse.Namespace) -> int:
    transitions = _load_eval_transitions(args)
    games = games_from_transitions(transitions)
    if not games:
        raise ConfigError(f"{args.data} holds no games")
    ckpt = _checked_ckpt(args)
    if args.jobs > 1 and len(games) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            shards = pool.map(
                _score_fr_shard, repeat(ckpt), _chunks(games, args.jobs),
                repeat(args.collapse), repeat(args.placeholder),
            )
            scores = [score for shard in shards for score in shard]
        report = EvalReport(
            kind="free_run", overall=sum(scores) / len(scores), count=len(games)
        )
    else:
        predict = oracle_predictor() if ckpt is None else load_model(ckpt)[0].predictor()
        report = free_run_eval(
            games, predict, collapse=args.collapse, placeholder=args.placeholder
        )
    _emit_report(report, args)
    return 0


def cmd_apply(args: argparse.Namespace) -> int:
    registry = RelationRegistry()
    for path in (args.graph, args.ops):
        if not Path(path).exists():
            raise ConfigError(f"missing input file {path}")
    graph = read_graph_file(args.graph, registry)
    ops = read_ops_file(Path(args.ops), registry)
    result = apply_update(graph, ops)
    write_graph_file(result, args.out)
    print(f"{len(result)} triples -> {args.out}")
    return 0


def cmd_diff(args: argparse.Namespace) -> int:
    registry = RelationRegistry()
    for path in (args.from_path, args.to_path):
        if not Path(path).exists():
            raise ConfigError(f"missing input file {path}")
    ops = diff(
        read_graph_file(args.from_path, registry),
        read_graph_file(args.to_path, registry),
    )
    write_ops_file(args.out, ops)
    print(f"{len(ops)} ops -> {args.out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    results = gradient_suite(n_seeds=args.seeds, tolerance=args.tolerance)
    width = max(len(r["block"]) for r in results)
    print(f"{'block'.ljust(width)}  max_rel_err  status")
    for r in results:
        status = "ok" if r["ok"] else "FAIL"
        print(f"{r['block'].ljust(width)}  {r['max_rel_err']:11.3e}  {status}")
    return 0 if all(r["ok"] for r in results) else 1


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefgraph",
        description="Learn add/delete graph updates from text-game transitions.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="generate train/valid/test transition splits")
    p.add_argument("--config", type=Path, default=None, help="flat key = value world config")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=10, help="games in the train split")
    p.add_argument("--valid", type=int, default=2, help="games in the valid split")
    p.add_argument("--test", type=int, default=2, help="games in the test split")
    p.add_argument("--jobs", type=int, default=1, help="parallel generator processes")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an update generator on a data directory")
    p.add_argument("--data", type=Path, required=True,
                   help="directory holding train.jsonl and valid.jsonl")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--config", type=Path, default=None, help="model/training key = value file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every_steps", type=int, default=None)
    p.add_argument("--stop-at-f1", dest="stop_at_f1", type=float, default=None)
    p.add_argument("--val-sample", dest="val_sample", type=int, default=None,
                   help="validate on an evenly spaced subset this large")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, default=None, help="JSON-line training log")
    p.set_defaults(func=cmd_train)

    for name, helper in (("eval-tf", "teacher-forced per-transition command F1"),
                         ("eval-fr", "free-run final-graph F1")):
        p = sub.add_parser(name, help=helper)
        p.add_argument("--ckpt", type=Path, default=None)
        p.add_argument("--oracle", action="store_true",
                       help="replay recorded gold updates instead of a model")
        p.add_argument("--data", type=Path, required=True, help="transition JSONL file")
        p.add_argument("--report", type=Path, default=None, help="write the report as JSON")
        p.add_argument("--jobs", type=int, default=1)
        if name == "eval-tf":
            p.add_argument("--per-verb", dest="per_verb", action="store_true",
                           help="print the per-verb breakdown table")
            p.add_argument("--micro", action="store_true",
                           help="micro-average over commands instead of transitions")
            p.set_defaults(func=cmd_eval_tf)
        else:
            p.add_argument("--collapse", action="store_true",
                           help="collapse relation labels before scoring")
            p.add_argument("--placeholder", default="related_to",
                           help="relation label used when collapsing")
            p.set_defaults(func=cmd_eval_fr)

    p = sub.add_parser("apply", help="apply an ops file to a graph file")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--ops", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("diff", help="emit the canonical ops turning one graph into another")
    p.add_argument("--from", dest="from_path", type=Path, required=True)
    p.add_argument("--to", dest="to_path", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, MalformedCommand, UnknownRelation, GenerationFailure,
            NonFiniteLoss, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
