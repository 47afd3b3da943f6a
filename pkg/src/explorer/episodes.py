"""
Episode sampling and REINFORCE training of the exploration policy.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from ..core.errors import NumericalError
from ..embedding import EmbeddingTable
from ..hin import NodeRef, Relation, TypedGraph
from .policy import ActionTable, ExplorerError, PolicyModel, PolicyState, action_scores, reward, step

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathInstance:
    """
    A mined path between two nodes.

    Attributes:
        nodes: Visited nodes, source first, target last
        relations: Relation of each hop (len(nodes) - 1 entries)
        step_scores: Probability of each chosen action
    """
    nodes: Tuple[NodeRef, ...]
    relations: Tuple[Relation, ...]
    step_scores: Tuple[float, ...]

    def __post_init__(self):
        if len(self.relations) != len(self.nodes) - 1 or len(self.step_scores) != len(self.relations):
            raise ExplorerError(
                f"Path with {len(self.nodes)} nodes needs {len(self.nodes) - 1} relations and step scores"
            )
        for value in self.step_scores:
            if not 0.0 < value <= 1.0:
                raise ExplorerError(f"Step score {value} is outside (0, 1]")

    @property
    def score(self) -> float:
        """Mean step score c."""
        return float(np.mean(self.step_scores)) if self.step_scores else 1.0

    @property
    def source(self) -> NodeRef:
        return self.nodes[0]

    @property
    def target(self) -> NodeRef:
        return self.nodes[-1]

    @property
    def has_revisit(self) -> bool:
        """True if a node reappears other than by staying in place."""
        collapsed = [node for position, node in enumerate(self.nodes)
                     if position == 0 or node != self.nodes[position - 1]]
        return len(set(collapsed)) != len(collapsed)

    def rank_key(self) -> Tuple:
        """Ordering used for ranking: simple paths first, then score, length, node ids."""
        return (self.has_revisit, -self.score, len(self.nodes), self.nodes)

    @classmethod
    def from_nodes(cls, nodes: Sequence[NodeRef], step_scores: Sequence[float], graph: TypedGraph) -> 'PathInstance':
        """Build a path, reading each hop's relation from the graph."""
        relations = tuple(graph.relation_between(head, tail) for head, tail in zip(nodes, nodes[1:]))
        return cls(tuple(nodes), relations, tuple(float(value) for value in step_scores))


@dataclass(frozen=True)
class TrajectoryStep:
    """One logged decision: the state, the chosen action and its probability."""
    state: PolicyState
    action: NodeRef
    probability: float


def run_episode(
    source: NodeRef,
    target: NodeRef,
    model: PolicyModel,
    table: EmbeddingTable,
    graph: TypedGraph,
    rng: np.random.Generator,
    allow_same: bool = False,
) -> Tuple[Optional[PathInstance], List[TrajectoryStep]]:
    """
    Sample one exploration episode.

    Actions are drawn from `action_scores` until the target is reached or
    max_steps moves have been made.

    Args:
        source: Start node
        target: Node to reach
        model: The policy
        table: Embeddings
        graph: The graph
        rng: Random generator
        allow_same: Accept source == target (zero-step success)

    Returns:
        (the path on success or None, the trajectory log)

    Raises:
        ExplorerError: If source == target and allow_same is False
    """
    if source == target and not allow_same:
        raise ExplorerError(f"Episode source and target are both {source}")
    state = PolicyState.initial(source)
    log: List[TrajectoryStep] = []
    while state.current != target and state.step < model.max_steps:
        actions = action_scores(state, model, table, graph)
        probs = np.array([prob for _, prob in actions])
        choice = int(rng.choice(len(actions), p=probs / probs.sum()))
        chosen, probability = actions[choice]
        log.append(TrajectoryStep(state, chosen, probability))
        state = step(state, chosen, actions, model.max_steps)

    if not reward(state, target, model.max_steps):
        return None, log
    path = PathInstance.from_nodes(state.history, [entry.probability for entry in log], graph)
    return path, log


@dataclass
class EpisodeBatch:
    """
    Episodes sampled in parallel from an ActionTable.

    Attributes:
        sources: (W,) global source indices
        targets: (W,) global target indices
        paths: (W, T + 1) visited global indices, -1 after termination
        slots: (W, T) chosen candidate slot in the ActionTable row, -1 after termination
        probs: (W, T) probability of each chosen action, 0 after termination
        lengths: (W,) number of moves made
        success: (W,) whether the target was reached
    """
    sources: np.ndarray
    targets: np.ndarray
    paths: np.ndarray
    slots: np.ndarray
    probs: np.ndarray
    lengths: np.ndarray
    success: np.ndarray

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def rewards(self) -> np.ndarray:
        return self.success.astype(np.float64)


def sample_episodes(
    actions: ActionTable,
    sources: np.ndarray,
    targets: np.ndarray,
    max_steps: int,
    rng: np.random.Generator,
) -> EpisodeBatch:
    """
    Run many episodes at once, one walker per (source, target) entry.

    A walker stops on first arrival at its target.

    Args:
        actions: Pruned action distributions of every node
        sources: Global source indices
        targets: Global target indices
        max_steps: Episode bound
        rng: Random generator

    Returns:
        The sampled batch
    """
    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    walkers = len(sources)
    paths = np.full((walkers, max_steps + 1), -1, dtype=np.int64)
    slots = np.full((walkers, max_steps), -1, dtype=np.int64)
    probs = np.zeros((walkers, max_steps), dtype=np.float64)
    lengths = np.zeros(walkers, dtype=np.int64)
    success = sources == targets
    paths[:, 0] = sources
    current = sources.copy()
    active = ~success

    cumulative = np.cumsum(actions.probs, axis=1)
    for t in range(max_steps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        nodes = current[rows]
        draws = rng.random(rows.size)
        chosen = (draws[:, None] > cumulative[nodes]).sum(axis=1)
        chosen = np.minimum(chosen, actions.counts[nodes] - 1)
        following = actions.candidates[nodes, chosen]

        paths[rows, t + 1] = following
        slots[rows, t] = chosen
        probs[rows, t] = actions.probs[nodes, chosen]
        lengths[rows] += 1
        current[rows] = following

        arrived = following == targets[rows]
        success[rows[arrived]] = True
        active[rows[arrived]] = False

    return EpisodeBatch(sources, targets, paths, slots, probs, lengths, success)


def trajectory_log_prob(
    batch: EpisodeBatch,
    model: PolicyModel,
    embeddings: torch.Tensor,
    actions: ActionTable,
) -> torch.Tensor:
    """
    Differentiable log-probability of each episode's chosen actions.

    The pruned candidate sets are held fixed; log pi = cos(chosen) minus
    the log-sum-exp of the kept candidates' cosines.

    Args:
        batch: Sampled episodes
        model: The policy (gradients flow into its projection)
        embeddings: (num_nodes, dim) float64 tensor aligned with global indices
        actions: The ActionTable the episodes were sampled from

    Returns:
        (W,) tensor of summed log-probabilities
    """
    walker, position = np.nonzero(batch.slots >= 0)
    if walker.size == 0:
        return torch.zeros(len(batch), dtype=torch.float64)
    nodes = batch.paths[walker, position]
    candidates = actions.candidates[nodes]
    mask = torch.as_tensor(candidates >= 0)

    units = model.unit_projections(embeddings)
    current = units[torch.as_tensor(nodes)]
    others = units[torch.as_tensor(np.maximum(candidates, 0))]
    cosines = (others * current[:, None, :]).sum(dim=-1)
    cosines = cosines.masked_fill(~mask, float('-inf'))
    chosen = torch.as_tensor(batch.slots[walker, position])
    step_log_probs = cosines.gather(1, chosen[:, None]).squeeze(1) - torch.logsumexp(cosines, dim=1)

    totals = torch.zeros(len(batch), dtype=torch.float64)
    return totals.index_add(0, torch.as_tensor(walker), step_log_probs)


def reinforce_update(
    batch: EpisodeBatch,
    model: PolicyModel,
    embeddings: torch.Tensor,
    actions: ActionTable,
    lr: float,
) -> PolicyModel:
    """
    One REINFORCE step with a moving-average baseline.

    theta <- theta + lr * sum_episodes (R - b) * sum_t grad log pi(a_t | s_t);
    the baseline is updated afterwards.

    Args:
        batch: Sampled episodes (nonempty)
        model: The policy, updated in place
        embeddings: (num_nodes, dim) float64 tensor aligned with global indices
        actions: The ActionTable the episodes were sampled from
        lr: Step size

    Returns:
        The updated model

    Raises:
        ExplorerError: If the batch is empty
        NumericalError: If the gradient is not finite
    """
    if len(batch) == 0:
        raise ExplorerError("REINFORCE batch is empty")
    advantages = torch.as_tensor(batch.rewards - model.baseline, dtype=torch.float64)
    model.zero_grad()
    objective = (advantages * trajectory_log_prob(batch, model, embeddings, actions)).sum()
    if objective.requires_grad:
        objective.backward()
    gradient = model.projection.grad
    if gradient is not None:
        if not bool(torch.isfinite(gradient).all()):
            raise NumericalError(
                f"Non-finite policy gradient: objective={objective.item()}, "
                f"projection norm={model.projection.detach().norm().item():.4g}, "
                f"baseline={model.baseline:.4f}, episodes={len(batch)}"
            )
        with torch.no_grad():
            model.projection.add_(lr * gradient)
    model.update_baseline(batch.rewards)
    return model


def reach_probability(actions: ActionTable, source: int, target: int, max_steps: int) -> float:
    """
    Exact probability that an episode from source reaches target within max_steps.

    Args:
        actions: Pruned action distributions
        source: Global source index
        target: Global target index
        max_steps: Episode bound

    Returns:
        The first-arrival probability
    """
    reach = np.zeros(len(actions.counts), dtype=np.float64)
    reach[target] = 1.0
    mask = actions.candidates >= 0
    safe = np.maximum(actions.candidates, 0)
    for _ in range(max_steps):
        reach = np.where(mask, actions.probs * reach[safe], 0.0).sum(axis=1)
        reach[target] = 1.0
    return float(reach[source])


def train_policy(
    pairs: Sequence[Tuple[NodeRef, NodeRef]],
    model: PolicyModel,
    table: EmbeddingTable,
    graph: TypedGraph,
    episodes: int = 2000,
    batch_size: int = 64,
    lr: float = 0.01,
    seed: int = 0,
) -> List[float]:
    """
    Train the policy with REINFORCE on episodes between the given pairs.

    Each batch draws pairs uniformly, samples one episode per draw, updates
    the projection and rescoring every node's actions.

    Args:
        pairs: (source, target) pairs, source != target
        model: The policy, trained in place
        table: Embeddings (frozen during exploration)
        graph: The graph
        episodes: Total number of episodes
        batch_size: Episodes per update
        lr: REINFORCE step size
        seed: Random seed

    Returns:
        Mean reward of each batch

    Raises:
        ExplorerError: If there are no usable pairs
    """
    usable = [(source, target) for source, target in pairs if source != target]
    if not usable:
        raise ExplorerError("No (source, target) pairs to train the policy on")
    sources = np.array([graph.index(source) for source, _ in usable], dtype=np.int64)
    targets = np.array([graph.index(target) for _, target in usable], dtype=np.int64)
    matrix = table.matrix_for(graph)
    embeddings = torch.as_tensor(matrix, dtype=torch.float64)
    rng = np.random.default_rng(seed)

    curve: List[float] = []
    remaining = episodes
    progress = tqdm(total=episodes, desc='policy', unit='ep', disable=logger.getEffectiveLevel() > logging.INFO)
    while remaining > 0:
        size = min(batch_size, remaining)
        picks = rng.integers(0, len(usable), size=size)
        actions = ActionTable.build(graph, model, matrix)
        batch = sample_episodes(actions, sources[picks], targets[picks], model.max_steps, rng)
        reinforce_update(batch, model, embeddings, actions, lr)
        curve.append(float(batch.rewards.mean()))
        remaining -= size
        progress.update(size)
        progress.set_postfix(reward=f"{curve[-1]:.3f}")
    progress.close()
    logger.info(
        f"Trained policy on {len(usable)} pairs for {episodes} episodes; "
        f"first batch reward {curve[0]:.3f}, last batch reward {curve[-1]:.3f}"
    )
    return curve
