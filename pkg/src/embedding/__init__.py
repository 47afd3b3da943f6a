"""
Embedding package.

DeepWalk initialization of users and items, skip-gram over mined path
corpora for every node kind, and mean-pooled path embeddings.
"""
from .table import EmbeddingError, EmbeddingTable, embed_path, complete_attribute_vectors
from .walks import WalkCorpus, generate_walks
from .skipgram import SkipGramConfig, train_skipgram, build_path_corpus, train_path_embeddings

__all__ = [
    'EmbeddingError',
    'EmbeddingTable',
    'embed_path',
    'complete_attribute_vectors',
    'WalkCorpus',
    'generate_walks',
    'SkipGramConfig',
    'train_skipgram',
    'build_path_corpus',
    'train_path_embeddings',
]
