"""
Heterogeneous information network package.

Builds, validates, serializes and queries the typed user/item/brand/category
graph and the per-user chronological interaction sequences.
"""
from .nodes import NodeKind, NodeRef, Relation, RelationType, HinError, UnknownNodeError
from .typed_graph import TypedGraph, neighbors, reachable_within
from .sequences import InteractionSequence, SplitError, split, save_sequences, load_sequences
from .ingest import IdMap, IngestError, IngestResult, ingest
from .synthetic import generate_synthetic

__all__ = [
    'NodeKind',
    'NodeRef',
    'Relation',
    'RelationType',
    'HinError',
    'UnknownNodeError',
    'TypedGraph',
    'neighbors',
    'reachable_within',
    'InteractionSequence',
    'SplitError',
    'split',
    'save_sequences',
    'load_sequences',
    'IdMap',
    'IngestError',
    'IngestResult',
    'ingest',
    'generate_synthetic',
]
