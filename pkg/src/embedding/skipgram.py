"""
Skip-gram with negative sampling, backed by gensim's Word2Vec.

Tokens are node tokens ('u:3', 'i:17', ...). The input ("center") vectors
become the embedding table; context vectors are discarded.
"""
import logging
from collections import Counter
from typing import Iterable, List, Optional, Sequence

import numpy as np
from gensim.models import Word2Vec
from gensim.models.callbacks import CallbackAny2Vec
from pydantic import BaseModel, Field

from ..core.errors import ConfigError
from ..hin import NodeRef, TypedGraph
from .table import EmbeddingTable, uniform_init
from .walks import WalkCorpus

# Configure logging
logger = logging.getLogger(__name__)

# Final learning rate as a fraction of the initial one (linear decay)
_MIN_LR_FRACTION = 1e-4


class SkipGramConfig(BaseModel):
    """Hyperparameters of a skip-gram run."""
    dim: int = Field(default=100, ge=1)
    window: int = Field(default=5, ge=1)
    negatives_per_pair: int = Field(default=5, ge=1)
    epochs: int = Field(default=5, ge=1)
    lr: float = Field(default=0.025, gt=0.0)
    seed: int = 0
    deterministic: bool = True
    workers: int = Field(default=4, ge=1)

    @classmethod
    def from_pipeline(cls, config, epochs: Optional[int] = None) -> 'SkipGramConfig':
        return cls(
            dim=config.dim,
            window=config.window,
            negatives_per_pair=config.negatives_per_pair,
            epochs=epochs if epochs is not None else config.skipgram_epochs,
            lr=config.skipgram_lr,
            seed=config.seed,
            deterministic=config.deterministic,
            workers=config.workers,
        )


class _EpochLossRecorder(CallbackAny2Vec):
    """Records the loss of each epoch from gensim's cumulative counter."""

    def __init__(self):
        self.losses: List[float] = []
        self._previous = 0.0

    def on_epoch_end(self, model):
        cumulative = model.get_latest_training_loss()
        self.losses.append(float(cumulative - self._previous))
        self._previous = cumulative
        logger.debug(f"Skip-gram epoch {len(self.losses)} loss {self.losses[-1]:.4f}")


def train_skipgram(
    corpus: Sequence[Sequence[NodeRef]],
    config: SkipGramConfig,
    vocabulary: Optional[Iterable[NodeRef]] = None,
    initial: Optional[EmbeddingTable] = None,
) -> EmbeddingTable:
    """
    Train node vectors with skip-gram and negative sampling.

    Negatives are drawn from the unigram distribution raised to 0.75; the
    learning rate decays linearly. Deterministic mode uses a single worker.

    Args:
        corpus: Node sequences (walks or mined paths)
        config: Hyperparameters
        vocabulary: Nodes that must receive a vector even if absent from the corpus
        initial: Vectors to start from for the nodes it covers

    Returns:
        The trained table, with per-epoch losses in `table.losses`

    Raises:
        ConfigError: If dim or lr is not positive
    """
    if config.dim <= 0 or config.lr <= 0:
        raise ConfigError(f"Skip-gram needs dim > 0 and lr > 0, got dim={config.dim}, lr={config.lr}")
    if isinstance(corpus, WalkCorpus):
        corpus = corpus.walks

    counts: Counter = Counter()
    ordered: List[NodeRef] = []
    for node in list(vocabulary or []) + [node for sentence in corpus for node in sentence]:
        if node not in counts:
            ordered.append(node)
        counts[node] += 1
    if not ordered:
        raise ConfigError("Skip-gram corpus and vocabulary are both empty")

    model = Word2Vec(
        vector_size=config.dim,
        window=config.window,
        min_count=1,
        sg=1,
        hs=0,
        negative=config.negatives_per_pair,
        ns_exponent=0.75,
        alpha=config.lr,
        min_alpha=config.lr * _MIN_LR_FRACTION,
        sample=0,
        seed=config.seed,
        workers=1 if config.deterministic else config.workers,
        epochs=config.epochs,
    )
    model.build_vocab_from_freq({node.token: counts[node] for node in ordered})

    rng = np.random.default_rng(config.seed)
    keys = list(model.wv.index_to_key)
    model.wv.vectors[:] = uniform_init(rng, len(keys), config.dim).astype(model.wv.vectors.dtype)
    if initial is not None:
        if initial.dim != config.dim:
            raise ConfigError(f"Initial table has dim {initial.dim}, expected {config.dim}")
        for node in ordered:
            if node in initial:
                model.wv.vectors[model.wv.key_to_index[node.token]] = initial.vector(node)

    sentences = [[node.token for node in sentence] for sentence in corpus]
    recorder = _EpochLossRecorder()
    if not any(len(sentence) > 1 for sentence in sentences):
        logger.warning("Skip-gram corpus has no co-occurring pairs; returning initialized vectors")
    else:
        model.train(
            sentences,
            total_examples=len(sentences),
            epochs=config.epochs,
            compute_loss=True,
            callbacks=[recorder],
        )
        logger.info(f"Trained skip-gram over {len(sentences)} sentences; epoch losses {recorder.losses}")

    vectors = np.vstack([model.wv[node.token] for node in ordered]).astype(np.float64)
    return EmbeddingTable(ordered, vectors, losses=recorder.losses)


def build_path_corpus(paths: Iterable) -> List[List[NodeRef]]:
    """Mined paths as sentences: nodes are tokens."""
    return [list(path.nodes) for path in paths]


def train_path_embeddings(
    paths: Iterable,
    graph: TypedGraph,
    initial: EmbeddingTable,
    config: SkipGramConfig,
) -> EmbeddingTable:
    """
    Second embedding stage: skip-gram over the mined path corpus.

    Every graph node receives a vector; nodes covered by `initial` start
    from it, so user/item vectors are fine-tuned rather than relearned.

    Args:
        paths: Mined PathInstances
        graph: The graph
        initial: Starting vectors (typically DeepWalk plus completed attributes)
        config: Hyperparameters

    Returns:
        The final table, one row per graph node in global order
    """
    corpus = build_path_corpus(paths)
    table = train_skipgram(corpus, config, vocabulary=list(graph.nodes()), initial=initial)
    ordered = list(graph.nodes())
    return EmbeddingTable(ordered, np.vstack([table.vector(node) for node in ordered]), losses=table.losses)
