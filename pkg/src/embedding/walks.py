"""
Truncated random walks over the user–item bipartite graph (DeepWalk corpus).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ..hin import NodeRef, TypedGraph
from .table import EmbeddingError

logger = logging.getLogger(__name__)


@dataclass
class WalkCorpus:
    """
    A corpus of walks.

    Attributes:
        walks: Node sequences, each following graph edges
        walk_length: Upper bound on walk length
        walks_per_node: Walks started from each node
        seed: Seed that produced the corpus
    """
    walks: List[List[NodeRef]] = field(default_factory=list)
    walk_length: int = 10
    walks_per_node: int = 20
    seed: int = 0

    def sentences(self) -> List[List[str]]:
        """Walks as token sentences for skip-gram."""
        return [[node.token for node in walk] for walk in self.walks]

    def __len__(self) -> int:
        return len(self.walks)


def generate_walks(g: TypedGraph, walks_per_node: int = 20, walk_length: int = 10, seed: int = 0) -> WalkCorpus:
    """
    Generate uniform truncated random walks from every user and item.

    Only Buy edges are followed, so walks alternate between users and items.
    The start order is reshuffled every round, as in DeepWalk.

    Args:
        g: The graph
        walks_per_node: Walks per user/item node
        walk_length: Maximum walk length (>= 2)
        seed: Random seed

    Returns:
        The walk corpus

    Raises:
        EmbeddingError: If the graph has no users or items, or walk_length < 2
    """
    if walk_length < 2:
        raise EmbeddingError(f"walk_length must be >= 2, got {walk_length}")
    bipartite = g.user_item_graph()
    if bipartite.number_of_nodes() == 0:
        raise EmbeddingError("Cannot generate walks on a graph without users or items")

    starts = sorted(bipartite.nodes())
    adjacency: Dict[NodeRef, List[NodeRef]] = {node: sorted(bipartite.neighbors(node)) for node in starts}
    for node in starts:
        if not adjacency[node]:
            logger.warning(f"Node {node} has no user-item edge; its walks have length 1")

    rng = np.random.default_rng(seed)
    walks: List[List[NodeRef]] = []
    for _ in range(walks_per_node):
        for position in rng.permutation(len(starts)):
            walk = [starts[position]]
            while len(walk) < walk_length:
                candidates = adjacency[walk[-1]]
                if not candidates:
                    break
                walk.append(candidates[int(rng.integers(0, len(candidates)))])
            walks.append(walk)
    logger.info(f"Generated {len(walks)} walks from {len(starts)} start nodes")
    return WalkCorpus(walks=walks, walk_length=walk_length, walks_per_node=walks_per_node, seed=seed)
