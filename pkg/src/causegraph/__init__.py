"""Event causality identification over semantic graphs."""

from .data import (CorpusRecord, EventMention, EventPair, Vocab, gen_synthetic,
                   load_corpus, load_ctxemb, save_corpus, write_ctxemb)
from .evaluation import (FoldPlan, MetricsReport, f1_from_pr, make_folds, prf1,
                         run_cross_validation)
from .graph import (EventCentricStructure, PathSequence, SemanticGraph,
                    build_semantic_graph, khop_subgraph, resolve_event_node,
                    shortest_paths)
from .model import ModelConfig, build_params, insert_markers, pair_forward
from .penman import AmrGraph, RoleClass, classify_role, parse_penman, serialize_penman
from .training import Pipeline, TrainConfig, TrainReport, fit, focal_loss, sample_epoch

__version__ = "0.1.0"

__all__ = [
    "AmrGraph", "CorpusRecord", "EventCentricStructure", "EventMention",
    "EventPair", "FoldPlan", "MetricsReport", "ModelConfig", "PathSequence",
    "Pipeline", "RoleClass", "SemanticGraph", "TrainConfig", "TrainReport",
    "Vocab", "build_params", "build_semantic_graph", "classify_role",
    "f1_from_pr", "fit", "focal_loss", "gen_synthetic", "insert_markers",
    "khop_subgraph", "load_corpus", "load_ctxemb", "make_folds",
    "pair_forward", "parse_penman", "prf1", "resolve_event_node",
    "run_cross_validation", "sample_epoch", "save_corpus", "serialize_penman",
    "shortest_paths", "write_ctxemb",
]
