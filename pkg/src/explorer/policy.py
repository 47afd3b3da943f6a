"""
Exploration policy: states, action scoring, transitions and rewards.

An action from node e_t is a move to a neighbor or staying put. Each
candidate is scored by the cosine of the projected embeddings of e_t and the
candidate; a softmax turns scores into probabilities, the top k are kept and
renormalized. The square projection is the only trainable parameter and
starts as the identity, so an untrained policy scores raw cosines.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..core.errors import DataError, NumericalError
from ..embedding import EmbeddingTable
from ..hin import NodeRef, TypedGraph

# Configure logging
logger = logging.getLogger(__name__)

POLICY_FORMAT = 'tmer-policy-v1'


class ExplorerError(DataError):
    """Base exception for exploration errors."""
    pass


@dataclass(frozen=True)
class PolicyState:
    """
    State of an exploration episode.

    Attributes:
        current: The node being visited (e_t)
        history: Visited nodes, current one last (his_t)
    """
    current: NodeRef
    history: Tuple[NodeRef, ...]

    def __post_init__(self):
        if not self.history or self.history[-1] != self.current:
            raise ExplorerError("State history must end with the current node")

    @property
    def step(self) -> int:
        """Number of moves taken so far (t)."""
        return len(self.history) - 1

    @classmethod
    def initial(cls, source: NodeRef) -> 'PolicyState':
        return cls(source, (source,))


class PolicyModel(nn.Module):
    """
    Trainable action scorer plus episode settings.

    Attributes:
        projection: dim x dim matrix applied to both embeddings before the cosine
        max_steps: Episode bound T_max
        k_actions: Number of candidates kept after pruning
        baseline: Running-average reward subtracted in REINFORCE updates
        baseline_decay: Decay of the running average
    """

    def __init__(self, dim: int, max_steps: int = 6, k_actions: int = 20, baseline_decay: float = 0.99):
        super().__init__()
        if max_steps < 2:
            raise ExplorerError(f"max_steps must be >= 2, got {max_steps}")
        if k_actions < 1:
            raise ExplorerError(f"k_actions must be >= 1, got {k_actions}")
        self.projection = nn.Parameter(torch.eye(dim, dtype=torch.float64))
        self.max_steps = max_steps
        self.k_actions = k_actions
        self.baseline = 0.0
        self.baseline_decay = baseline_decay

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def unit_projections(self, vectors: torch.Tensor) -> torch.Tensor:
        """
        Project row vectors and scale them to unit length.

        Raises:
            NumericalError: If a projected vector has zero norm
        """
        projected = vectors @ self.projection.T
        norms = projected.norm(dim=-1, keepdim=True)
        if bool((norms == 0).any()):
            raise NumericalError("Projected embedding has zero norm; the embedding table is degenerate")
        return projected / norms

    def update_baseline(self, rewards: Sequence[float]) -> None:
        """Fold rewards into the exponential moving average, one at a time."""
        for value in rewards:
            self.baseline = self.baseline_decay * self.baseline + (1.0 - self.baseline_decay) * float(value)

    # Persistence

    def save(self, path: Union[str, Path]) -> None:
        """Write the policy as JSON with a format tag and shape header."""
        payload = {
            'format': POLICY_FORMAT,
            'shape': list(self.projection.shape),
            'max_steps': self.max_steps,
            'k_actions': self.k_actions,
            'baseline': self.baseline,
            'baseline_decay': self.baseline_decay,
            'projection': self.projection.detach().cpu().tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=2), encoding='utf-8')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'PolicyModel':
        """
        Read a policy written by `save`.

        Raises:
            ExplorerError: If the file is not a policy or its shape is inconsistent
        """
        try:
            payload = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ExplorerError(f"Cannot read policy '{path}': {str(e)}")
        if payload.get('format') != POLICY_FORMAT:
            raise ExplorerError(f"'{path}' is not a {POLICY_FORMAT} file")
        matrix = torch.tensor(payload['projection'], dtype=torch.float64)
        if list(matrix.shape) != payload['shape'] or matrix.shape[0] != matrix.shape[1]:
            raise ExplorerError(f"Policy '{path}' has inconsistent projection shape {list(matrix.shape)}")
        model = cls(matrix.shape[0], payload['max_steps'], payload['k_actions'], payload['baseline_decay'])
        with torch.no_grad():
            model.projection.copy_(matrix)
        model.baseline = float(payload['baseline'])
        return model


def pruned_distribution(cosines: np.ndarray, k_actions: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Softmax over cosine scores, pruned to the top k and renormalized.

    Ties keep candidate order.

    Args:
        cosines: Raw scores of the candidates, in candidate order
        k_actions: Number of candidates kept

    Returns:
        (kept candidate positions by descending probability, their probabilities)
    """
    shifted = np.exp(cosines - cosines.max())
    probs = shifted / shifted.sum()
    order = np.argsort(-probs, kind='stable')[:k_actions]
    kept = probs[order]
    return order, kept / kept.sum()


def candidate_nodes(graph: TypedGraph, node: NodeRef) -> List[NodeRef]:
    """Neighbors of a node plus the node itself, each once, in adjacency order."""
    seen = []
    for _, neighbor in graph.neighbors(node):
        if neighbor not in seen:
            seen.append(neighbor)
    if node not in seen:
        seen.append(node)
    return seen


def action_scores(
    state: PolicyState,
    model: PolicyModel,
    table: EmbeddingTable,
    graph: TypedGraph,
) -> List[Tuple[NodeRef, float]]:
    """
    Pruned action distribution at a state.

    Args:
        state: Current state
        model: The policy
        table: Embeddings of every candidate node
        graph: The graph

    Returns:
        (candidate, probability) pairs by descending probability, summing to 1

    Raises:
        NumericalError: If a projected embedding has zero norm
    """
    candidates = candidate_nodes(graph, state.current)
    with torch.no_grad():
        vectors = torch.as_tensor(
            np.vstack([table.vector(state.current)] + [table.vector(node) for node in candidates]),
            dtype=torch.float64,
        )
        units = model.unit_projections(vectors)
        cosines = (units[1:] @ units[0]).numpy()
    order, probs = pruned_distribution(cosines, model.k_actions)
    return [(candidates[position], float(prob)) for position, prob in zip(order, probs)]


def step(state: PolicyState, chosen: NodeRef, actions: Sequence[Tuple[NodeRef, float]], max_steps: int) -> PolicyState:
    """
    Deterministic transition: move to the chosen candidate.

    Raises:
        ExplorerError: If the episode is already at max_steps or the choice is not an action
    """
    if state.step >= max_steps:
        raise ExplorerError(f"Episode is terminal at step {state.step} (T_max={max_steps})")
    if chosen not in {node for node, _ in actions}:
        raise ExplorerError(f"Node {chosen} is not in the action set of {state.current}")
    return PolicyState(chosen, state.history + (chosen,))


def reward(state: PolicyState, target: NodeRef, max_steps: int) -> int:
    """1 if the target is reached within max_steps, else 0."""
    return int(state.current == target and state.step <= max_steps)


@dataclass
class ActionTable:
    """
    Pruned action distributions of every node under one projection.

    Attributes:
        candidates: (num_nodes, K) global indices of kept candidates, -1 padded
        probs: (num_nodes, K) probabilities aligned with candidates, 0 padded
        counts: (num_nodes,) number of kept candidates per node
    """
    candidates: np.ndarray
    probs: np.ndarray
    counts: np.ndarray

    @classmethod
    def build(cls, graph: TypedGraph, model: PolicyModel, embeddings: np.ndarray) -> 'ActionTable':
        """
        Score every node's candidates with the current projection.

        Args:
            graph: The graph
            model: The policy
            embeddings: (num_nodes, dim) matrix aligned with global node indices

        Raises:
            NumericalError: If a projected embedding has zero norm
        """
        indptr, indices = graph.csr
        with torch.no_grad():
            units = model.unit_projections(torch.as_tensor(embeddings, dtype=torch.float64)).numpy()

        width = 1
        rows = []
        for node_index in range(graph.num_nodes):
            neighbors = list(dict.fromkeys(indices[indptr[node_index]:indptr[node_index + 1]].tolist()))
            if node_index not in neighbors:
                neighbors.append(node_index)
            neighbors = np.asarray(neighbors, dtype=np.int64)
            cosines = units[neighbors] @ units[node_index]
            order, probs = pruned_distribution(cosines, model.k_actions)
            rows.append((neighbors[order], probs))
            width = max(width, len(order))

        candidates = np.full((graph.num_nodes, width), -1, dtype=np.int64)
        probabilities = np.zeros((graph.num_nodes, width), dtype=np.float64)
        counts = np.zeros(graph.num_nodes, dtype=np.int64)
        for node_index, (kept, probs) in enumerate(rows):
            candidates[node_index, :len(kept)] = kept
            probabilities[node_index, :len(kept)] = probs
            counts[node_index] = len(kept)
        return cls(candidates, probabilities, counts)

    def probability(self, source: int, target: int) -> Optional[float]:
        """Probability of moving source -> target, or None if pruned away."""
        hits = np.flatnonzero(self.candidates[source, :self.counts[source]] == target)
        return float(self.probs[source, hits[0]]) if hits.size else None
