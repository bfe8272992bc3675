"""Dynamic knowledge-graph maintenance from text.

Synthesizes text-game transition corpora, trains seq2seq models with
pluggable graph encoders to emit add/delete graph-update commands, and
scores them with teacher-forced and free-run F1 protocols.
"""
from .commands import (
    RESERVED_TOKENS,
    MalformedCommand,
    Vocabulary,
    parse_op,
    parse_sequence,
    render_op,
    render_sequence,
    tokenize,
)
from .dataset import (
    SchemaError,
    build_dataset,
    build_vocab,
    corpus_stats,
    games_from_transitions,
    load_transitions,
    write_transitions,
)
from .evaluate import (
    EvalReport,
    action_verb,
    free_run_eval,
    gold_update,
    oracle_predictor,
    render_report,
    set_f1,
    teacher_forced_eval,
)
from .graph import (
    DEFAULT_RELATIONS,
    BeliefGraph,
    Entity,
    Kind,
    Relation,
    RelationRegistry,
    Triple,
    UnknownRelation,
    UpdateOp,
    UpdateSequence,
    Verb,
    add_op,
    apply_op,
    apply_update,
    canonical_order,
    collapse_relations,
    delete_op,
    diff,
    read_graph_file,
    to_rdf_triples,
    write_graph_file,
)
from .model import (
    VARIANTS,
    GraphUpdateModel,
    ModelConfig,
    NonFiniteLoss,
    TargetTooLong,
    TrainConfig,
    load_model,
    save_model,
    train_model,
)
from .world import (
    Game,
    GenerationFailure,
    InadmissibleAction,
    Transition,
    WorldConfig,
    admissible_actions,
    generate_game,
    step,
)

__all__ = [
    "DEFAULT_RELATIONS",
    "RESERVED_TOKENS",
    "VARIANTS",
    "BeliefGraph",
    "Entity",
    "EvalReport",
    "Game",
    "GenerationFailure",
    "GraphUpdateModel",
    "InadmissibleAction",
    "Kind",
    "MalformedCommand",
    "ModelConfig",
    "NonFiniteLoss",
    "Relation",
    "RelationRegistry",
    "SchemaError",
    "TargetTooLong",
    "TrainConfig",
    "Transition",
    "Triple",
    "UnknownRelation",
    "UpdateOp",
    "UpdateSequence",
    "Verb",
    "Vocabulary",
    "WorldConfig",
    "action_verb",
    "add_op",
    "admissible_actions",
    "apply_op",
    "apply_update",
    "build_dataset",
    "build_vocab",
    "canonical_order",
    "collapse_relations",
    "corpus_stats",
    "delete_op",
    "diff",
    "free_run_eval",
    "games_from_transitions",
    "generate_game",
    "gold_update",
    "load_model",
    "load_transitions",
    "oracle_predictor",
    "parse_op",
    "parse_sequence",
    "read_graph_file",
    "render_op",
    "render_report",
    "render_sequence",
    "save_model",
    "set_f1",
    "step",
    "teacher_forced_eval",
    "to_rdf_triples",
    "tokenize",
    "train_model",
    "write_graph_file",
    "write_transitions",
]

__version__ = "0.1.0"
