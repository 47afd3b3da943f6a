"""
Recommender model: fusion, MLP scoring and the negative-sampling loss.

`TmerModel` holds every trainable parameter: node embeddings, the path
self-attention unit, the item-update gates and the scoring tower. Path sets
enter as node-index tensors of shape (..., q, L) padded with -1, so a batch
can mix transitions with different numbers and lengths of paths.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from ..attention import ItemUpdateBlock, SelfAttentionBlock, propagate_sequence, update_item, xavier_linear
from ..core.errors import DataError, NumericalError
from ..embedding import EmbeddingTable
from ..explorer import PathStore
from ..hin import NodeRef, TypedGraph

# Configure logging
logger = logging.getLogger(__name__)

EPSILON = 1e-7


class RecommenderError(DataError):
    """Base exception for recommender errors."""
    pass


def fuse(h_u: torch.Tensor, h1: torch.Tensor, h2: torch.Tensor) -> torch.Tensor:
    """
    Concatenate user, first and second representations: [h_u; h1; h2].

    Raises:
        RecommenderError: If the last dimensions differ
    """
    if not h_u.shape[-1] == h1.shape[-1] == h2.shape[-1]:
        raise RecommenderError(
            f"Cannot fuse vectors of dims {h_u.shape[-1]}, {h1.shape[-1]} and {h2.shape[-1]}"
        )
    return torch.cat([h_u, h1, h2], dim=-1)


class ScoringTower(nn.Module):
    """Two ReLU hidden layers halving the width, then a sigmoid unit."""

    def __init__(self, dim: int, dtype=torch.float32):
        super().__init__()
        width = 3 * dim
        if width // 4 < 1:
            raise RecommenderError(f"dim must be >= 2 for the scoring tower, got {dim}")
        self.widths = (width, width // 2, width // 4, 1)
        self.hidden1 = xavier_linear(width, width // 2, dtype=dtype)
        self.hidden2 = xavier_linear(width // 2, width // 4, dtype=dtype)
        self.output = xavier_linear(width // 4, 1, dtype=dtype)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(self.hidden1(fused))
        hidden = torch.relu(self.hidden2(hidden))
        return torch.sigmoid(self.output(hidden)).squeeze(-1)


def score(fused: torch.Tensor, tower: ScoringTower) -> torch.Tensor:
    """
    Probability r_{u,i} for fused vectors.

    Raises:
        RecommenderError: If the fused width is not 3 * dim
        NumericalError: If a score is not finite
    """
    if fused.shape[-1] != tower.widths[0]:
        raise RecommenderError(f"Fused vector has width {fused.shape[-1]}, expected {tower.widths[0]}")
    result = tower(fused)
    if not bool(torch.isfinite(result).all()):
        raise NumericalError(f"Non-finite score from fused input with norm {fused.detach().norm().item():.4g}")
    return result


def loss(
    r_pos: torch.Tensor,
    r_negs: torch.Tensor,
    variant: str = 'positive_term',
    eps: float = EPSILON,
) -> torch.Tensor:
    """
    Negative-sampling loss of one or more instances.

    positive_term: -log r_pos - mean(log(1 - r_neg)); negative_only drops
    the positive term. Probabilities are clipped to [eps, 1 - eps].

    Args:
        r_pos: (...) positive scores
        r_negs: (..., C) negative scores, C >= 1
        variant: 'positive_term' or 'negative_only'

    Returns:
        (...) per-instance losses

    Raises:
        RecommenderError: If there are no negatives or the variant is unknown
    """
    r_pos = torch.as_tensor(r_pos)
    r_negs = torch.as_tensor(r_negs)
    if r_negs.ndim == 0 or r_negs.shape[-1] == 0:
        raise RecommenderError("The loss needs at least one negative score")
    negative = -torch.log(1.0 - r_negs.clamp(eps, 1.0 - eps)).mean(dim=-1)
    if variant == 'negative_only':
        return negative
    if variant != 'positive_term':
        raise RecommenderError(f"Unknown loss variant '{variant}'")
    return -torch.log(r_pos.clamp(eps, 1.0 - eps)) + negative


class TmerModel(nn.Module):
    """
    Trainable recommender.

    Attributes:
        embeddings: One row per graph node, in global index order
        attention: Path-set self-attention, shared by user and item paths
        update: Item-update gates
        tower: Scoring MLP
    """

    def __init__(
        self,
        num_nodes: int,
        dim: int,
        heads: int = 4,
        dtype=torch.float32,
        feed_updated_previous: bool = True,
        use_item_item_paths: bool = True,
        use_user_item_paths: bool = True,
    ):
        super().__init__()
        self.num_nodes = num_nodes
        self.dim = dim
        self.heads = heads
        self.feed_updated_previous = feed_updated_previous
        self.use_item_item_paths = use_item_item_paths
        self.use_user_item_paths = use_user_item_paths
        self.embeddings = nn.Embedding(num_nodes, dim, dtype=dtype)
        self.attention = SelfAttentionBlock(dim, heads, dtype=dtype)
        self.update = ItemUpdateBlock(dim, dtype=dtype)
        self.tower = ScoringTower(dim, dtype=dtype)

    @classmethod
    def from_table(cls, table: EmbeddingTable, graph: TypedGraph, **options) -> 'TmerModel':
        """A model whose embeddings start from a table covering every graph node."""
        model = cls(graph.num_nodes, table.dim, **options)
        with torch.no_grad():
            model.embeddings.weight.copy_(torch.as_tensor(table.matrix_for(graph)))
        return model

    def settings(self) -> Dict:
        return {
            'num_nodes': self.num_nodes,
            'dim': self.dim,
            'heads': self.heads,
            'feed_updated_previous': self.feed_updated_previous,
            'use_item_item_paths': self.use_item_item_paths,
            'use_user_item_paths': self.use_user_item_paths,
        }

    def path_vectors(self, path_nodes: torch.Tensor) -> torch.Tensor:
        """Mean node embedding of each path; (..., L) indices -> (..., dim)."""
        valid = (path_nodes >= 0).to(self.embeddings.weight.dtype)
        vectors = self.embeddings(path_nodes.clamp(min=0)) * valid.unsqueeze(-1)
        return vectors.sum(dim=-2) / valid.sum(dim=-1, keepdim=True).clamp(min=1.0)

    def path_context(self, path_nodes: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Attended context of path sets.

        Args:
            path_nodes: (..., q, L) node indices, -1 padded; a path slot is real
                        when its first node is set

        Returns:
            (context (..., dim), path weights (..., q)); sets without paths give zeros
        """
        mask = path_nodes[..., 0] >= 0
        context, weights, _ = self.attention(self.path_vectors(path_nodes), mask)
        return context, weights

    def chain_states(
        self,
        items: torch.Tensor,
        item_paths: torch.Tensor,
        user_paths: torch.Tensor,
    ) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        """
        Propagate item updates along each user's chain.

        Args:
            items: (B, n) item indices
            item_paths: (B, n - 1, q, L) paths of each consecutive transition
            user_paths: (B, q, L) paths of user -> first item

        Returns:
            One (h1, h2) pair of (B, dim) tensors per position
        """
        item_context, _ = self.path_context(item_paths)
        user_context, _ = self.path_context(user_paths)
        if not self.use_item_item_paths:
            item_context = torch.zeros_like(item_context)
        if not self.use_user_item_paths:
            user_context = torch.zeros_like(user_context)
        return propagate_sequence(
            self.embeddings(items), item_context, user_context, self.update, self.feed_updated_previous,
        )

    def score_next(
        self,
        users: torch.Tensor,
        previous_state: torch.Tensor,
        previous_items: torch.Tensor,
        candidates: torch.Tensor,
        candidate_paths: torch.Tensor,
    ) -> torch.Tensor:
        """
        Score candidate next items after a chain.

        Args:
            users: (B,) user indices
            previous_state: (B, dim) h2 of the last chain item
            previous_items: (B,) index of the last chain item
            candidates: (B, C) candidate item indices
            candidate_paths: (B, C, q, L) paths previous item -> candidate

        Returns:
            (B, C) probabilities
        """
        context, _ = self.path_context(candidate_paths)
        if not self.use_item_item_paths:
            context = torch.zeros_like(context)
        count = candidates.shape[-1]
        previous = previous_state if self.feed_updated_previous else self.embeddings(previous_items)
        previous = previous.unsqueeze(-2).expand(-1, count, -1)
        h1, h2 = update_item(previous, self.embeddings(candidates), context, self.update)
        h_u = self.embeddings(users).unsqueeze(-2).expand(-1, count, -1)
        return score(fuse(h_u, h1, h2), self.tower)


class PathIndex:
    """
    Node-index arrays of the ranked paths of each pair, read from a PathStore.

    Pairs the store has not mined yet are mined on first request.
    """

    def __init__(self, store: PathStore, graph: TypedGraph, q: int, max_nodes: int):
        self.store = store
        self.graph = graph
        self.q = q
        self.max_nodes = max_nodes
        self._cache: Dict[Tuple[NodeRef, NodeRef], np.ndarray] = {}

    def ensure(self, pairs: Sequence[Tuple[NodeRef, NodeRef]]) -> None:
        self.store.ensure(pairs)

    def pair_nodes(self, source: NodeRef, target: NodeRef) -> np.ndarray:
        """(q, max_nodes) node indices of a pair's paths, -1 padded."""
        pair = (source, target)
        cached = self._cache.get(pair)
        if cached is not None:
            return cached
        block = np.full((self.q, self.max_nodes), -1, dtype=np.int64)
        for row, instance in enumerate(self.store.get(source, target)[:self.q]):
            if len(instance.nodes) > self.max_nodes:
                raise RecommenderError(f"Path of {len(instance.nodes)} nodes exceeds {self.max_nodes}")
            block[row, :len(instance.nodes)] = [self.graph.index(node) for node in instance.nodes]
        self._cache[pair] = block
        return block

    def tensor(self, pairs: Sequence[Tuple[NodeRef, NodeRef]], shape: Optional[Tuple[int, ...]] = None) -> torch.Tensor:
        """Stacked (len(pairs), q, max_nodes) index tensor, optionally reshaped to shape + (q, max_nodes)."""
        pairs = list(pairs)
        if pairs:
            stacked = np.stack([self.pair_nodes(source, target) for source, target in pairs])
        else:
            stacked = np.full((0, self.q, self.max_nodes), -1, dtype=np.int64)
        if shape is not None:
            stacked = stacked.reshape(tuple(shape) + (self.q, self.max_nodes))
        return torch.as_tensor(stacked)
