"""
Scoring with a trained model: candidate ranking and per-transition attention.
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np
import torch

from ..explorer import PathInstance
from ..hin import NodeRef, TypedGraph
from .model import PathIndex, RecommenderError, TmerModel

# Configure logging
logger = logging.getLogger(__name__)


class Recommender:
    """
    A trained model together with the paths it reads.

    Attributes:
        model: The trained model
        index: Path lookup, mining unseen pairs on demand
        graph: The graph
    """

    def __init__(self, model: TmerModel, index: PathIndex, graph: TypedGraph):
        self.model = model.eval()
        self.index = index
        self.graph = graph
        self.logger = logger

    def prepare(self, pairs: Sequence[Tuple[NodeRef, NodeRef]]) -> None:
        """Mine every listed pair that has not been mined yet."""
        self.index.ensure(pairs)

    @staticmethod
    def history_pairs(user: NodeRef, history: Sequence[NodeRef]) -> List[Tuple[NodeRef, NodeRef]]:
        return [(user, history[0])] + list(zip(history, history[1:]))

    @torch.no_grad()
    def history_state(self, user: NodeRef, history: Sequence[NodeRef]) -> torch.Tensor:
        """
        h2 of the last item after propagating the whole history.

        Raises:
            RecommenderError: If the history is empty
        """
        if not history:
            raise RecommenderError(f"User {user} has an empty history")
        items = torch.as_tensor([[self.graph.index(item) for item in history]])
        item_paths = self.index.tensor(list(zip(history, history[1:])), (1, len(history) - 1))
        user_paths = self.index.tensor([(user, history[0])])
        return self.model.chain_states(items, item_paths, user_paths)[-1][1]

    @torch.no_grad()
    def score_candidates(self, user: NodeRef, history: Sequence[NodeRef], candidates: Sequence[NodeRef]) -> np.ndarray:
        """
        Probability that each candidate follows the history.

        Args:
            user: The user
            history: The user's items so far, oldest first
            candidates: Items to score

        Returns:
            One probability per candidate
        """
        state = self.history_state(user, history)
        previous = history[-1]
        probs = self.model.score_next(
            torch.as_tensor([self.graph.index(user)]),
            state,
            torch.as_tensor([self.graph.index(previous)]),
            torch.as_tensor([[self.graph.index(item) for item in candidates]]),
            self.index.tensor([(previous, item) for item in candidates], (1, len(candidates))),
        )
        return probs[0].double().numpy()

    @torch.no_grad()
    def transition_weights(self, source: NodeRef, target: NodeRef) -> Tuple[List[PathInstance], np.ndarray]:
        """
        The ranked paths of a transition and their attention weights.

        Returns:
            (paths, weights aligned with paths); both empty when nothing was mined
        """
        paths = self.index.store.get(source, target)[:self.index.q]
        if not paths:
            return [], np.zeros(0)
        _, weights = self.model.path_context(self.index.tensor([(source, target)]))
        return list(paths), weights[0, :len(paths)].double().numpy()
