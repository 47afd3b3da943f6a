"""
Path mining: ranking, mining pairs and the path store.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..embedding import EmbeddingTable
from ..hin import InteractionSequence, NodeRef, SplitError, TypedGraph, reachable_within, split
from .episodes import PathInstance, sample_episodes, train_policy
from .policy import ActionTable, ExplorerError, PolicyModel

# Configure logging
logger = logging.getLogger(__name__)

Pair = Tuple[NodeRef, NodeRef]

# Walkers sampled together when mining many pairs
_CHUNK_WALKERS = 200_000


class ExplorerConfig(BaseModel):
    """Hyperparameters of policy training and path mining."""
    max_steps: int = Field(default=6, ge=2)
    k_actions: int = Field(default=20, ge=1)
    episodes_per_pair: int = Field(default=50, ge=1)
    eval_episodes_per_pair: int = Field(default=20, ge=1)
    top_q: int = Field(default=5, ge=1)
    lr: float = Field(default=0.01, ge=0.0)
    policy_episodes: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=64, ge=1)
    baseline_decay: float = Field(default=0.99, ge=0.0, lt=1.0)
    seed: int = 0

    @classmethod
    def from_pipeline(cls, config) -> 'ExplorerConfig':
        return cls(
            max_steps=config.max_path_len,
            k_actions=config.k_actions,
            episodes_per_pair=config.episodes_per_pair,
            eval_episodes_per_pair=config.eval_episodes_per_pair,
            top_q=config.top_q,
            lr=config.policy_lr,
            policy_episodes=config.policy_episodes,
            batch_size=config.policy_batch_size,
            baseline_decay=config.baseline_decay,
            seed=config.seed,
        )


def rank_paths(paths: Iterable[PathInstance], q: int) -> List[PathInstance]:
    """
    Deduplicate paths by node sequence and keep the best q.

    Paths without a revisit come first, then higher score, then shorter
    paths, then lexicographic node order.

    Raises:
        ExplorerError: If q < 1
    """
    if q < 1:
        raise ExplorerError(f"q must be >= 1, got {q}")
    distinct: Dict[Tuple[NodeRef, ...], PathInstance] = {}
    for path in paths:
        distinct.setdefault(path.nodes, path)
    return sorted(distinct.values(), key=PathInstance.rank_key)[:q]


def mine_with_actions(
    pairs: Sequence[Pair],
    actions: ActionTable,
    graph: TypedGraph,
    max_steps: int,
    episodes_per_pair: int,
    q: int,
    rng: np.random.Generator,
) -> Dict[Pair, List[PathInstance]]:
    """
    Mine ranked paths for many pairs from precomputed action distributions.

    Returns:
        pair -> ranked paths (an empty list when no episode succeeded)
    """
    results: Dict[Pair, List[PathInstance]] = {pair: [] for pair in pairs}
    usable = [pair for pair in dict.fromkeys(pairs) if pair[0] != pair[1]]
    pairs_per_chunk = max(1, _CHUNK_WALKERS // episodes_per_pair)

    for start in range(0, len(usable), pairs_per_chunk):
        chunk = usable[start:start + pairs_per_chunk]
        pair_ids = np.repeat(np.arange(len(chunk)), episodes_per_pair)
        sources = np.array([graph.index(source) for source, _ in chunk], dtype=np.int64)[pair_ids]
        targets = np.array([graph.index(target) for _, target in chunk], dtype=np.int64)[pair_ids]
        batch = sample_episodes(actions, sources, targets, max_steps, rng)

        rows = np.flatnonzero(batch.success)
        found: Dict[int, List[PathInstance]] = {}
        if rows.size:
            keyed = np.column_stack([pair_ids[rows], batch.paths[rows]])
            _, first = np.unique(keyed, axis=0, return_index=True)
            rows = rows[first]
        for row in rows:
            length = int(batch.lengths[row])
            nodes = [graph.node_at(int(index)) for index in batch.paths[row, :length + 1]]
            path = PathInstance.from_nodes(nodes, batch.probs[row, :length], graph)
            found.setdefault(int(pair_ids[row]), []).append(path)
        for position, pair in enumerate(chunk):
            results[pair] = rank_paths(found.get(position, []), q)

    empty = sum(1 for paths in results.values() if not paths)
    if empty:
        logger.warning(f"{empty} of {len(results)} pairs have no successful episode")
    return results


def mine_paths(
    pairs: Sequence[Pair],
    model: PolicyModel,
    table: EmbeddingTable,
    graph: TypedGraph,
    episodes_per_pair: int = 50,
    q: int = 5,
    seed: int = 0,
) -> Dict[Pair, List[PathInstance]]:
    """
    Mine the top q paths of every pair with the policy.

    Args:
        pairs: (source, target) pairs
        model: The policy
        table: Embeddings
        graph: The graph
        episodes_per_pair: Episodes sampled per pair
        q: Paths kept per pair
        seed: Random seed

    Returns:
        pair -> ranked paths; pairs without a successful episode map to []
    """
    if q < 1:
        raise ExplorerError(f"q must be >= 1, got {q}")
    actions = ActionTable.build(graph, model, table.matrix_for(graph))
    rng = np.random.default_rng(seed)
    return mine_with_actions(pairs, actions, graph, model.max_steps, episodes_per_pair, q, rng)


def mining_pairs(
    sequences: Iterable[InteractionSequence],
    n_bridge: int = 2,
    n_train: int = 4,
    min_items: int = 12,
) -> List[Pair]:
    """
    Pairs mined before recommender training.

    Each user contributes user -> first bridge item and every consecutive
    item -> item pair of its bridge and train items.
    """
    pairs: List[Pair] = []
    for seq in sequences:
        try:
            bridge, train, _ = split(seq, n_bridge, n_train, min_items=min_items)
        except SplitError as e:
            logger.warning(f"Skipping user in mining: {str(e)}")
            continue
        chain = bridge + train
        if chain:
            pairs.append((seq.user, chain[0]))
        pairs.extend(zip(chain, chain[1:]))
    return [pair for pair in dict.fromkeys(pairs) if pair[0] != pair[1]]


def reachable_pairs(pairs: Iterable[Pair], graph: TypedGraph, max_hops: int) -> List[Pair]:
    """Pairs whose target lies within max_hops of the source."""
    reach: Dict[NodeRef, set] = {}
    kept: List[Pair] = []
    for source, target in pairs:
        if source not in reach:
            reach[source] = reachable_within(graph, source, max_hops)
        if target in reach[source]:
            kept.append((source, target))
        else:
            logger.warning(f"Target {target} is more than {max_hops} hops from {source}; pair dropped")
    return kept


class PathStore:
    """
    Ranked paths per (source, target) pair.

    With an ActionTable the store mines pairs it has not seen on demand;
    without one, unknown pairs have no paths.
    """

    def __init__(
        self,
        graph: TypedGraph,
        q: int = 5,
        actions: Optional[ActionTable] = None,
        max_steps: int = 6,
        episodes_per_pair: int = 20,
        seed: int = 0,
    ):
        self.graph = graph
        self.q = q
        self.actions = actions
        self.max_steps = max_steps
        self.episodes_per_pair = episodes_per_pair
        self._rng = np.random.default_rng(seed)
        self._paths: Dict[Pair, List[PathInstance]] = {}
        self.logger = logger

    def __contains__(self, pair: Pair) -> bool:
        return pair in self._paths

    def __len__(self) -> int:
        return len(self._paths)

    def pairs(self) -> List[Pair]:
        return list(self._paths)

    def all_paths(self) -> Iterator[PathInstance]:
        for paths in self._paths.values():
            yield from paths

    def update(self, mined: Dict[Pair, List[PathInstance]]) -> None:
        """Record ranked paths for pairs, replacing earlier entries."""
        for pair, paths in mined.items():
            self._paths[pair] = rank_paths(paths, self.q) if paths else []

    def ensure(self, pairs: Iterable[Pair]) -> None:
        """Mine every pair not yet in the store, in one batch."""
        missing = [pair for pair in dict.fromkeys(pairs) if pair not in self._paths]
        if not missing:
            return
        if self.actions is None:
            self._paths.update({pair: [] for pair in missing})
            return
        self.logger.debug(f"Mining {len(missing)} new pairs")
        self._paths.update(mine_with_actions(
            missing, self.actions, self.graph, self.max_steps, self.episodes_per_pair, self.q, self._rng,
        ))

    def get(self, source: NodeRef, target: NodeRef) -> List[PathInstance]:
        """Ranked paths of a pair, mining it first if needed."""
        pair = (source, target)
        if pair not in self._paths:
            self.ensure([pair])
        return self._paths[pair]

    # Persistence

    def save(self, path: Union[str, Path]) -> None:
        """
        Write `# pair <src> -> <dst>` headers, each followed by one path per line:
        node tokens then `score=<float>`, tab-separated.
        """
        lines: List[str] = []
        for (source, target), paths in self._paths.items():
            lines.append(f"# pair {source.token} -> {target.token}")
            for instance in paths:
                lines.append('\t'.join([node.token for node in instance.nodes] + [f"score={instance.score!r}"]))
        Path(path).write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')

    @classmethod
    def load(
        cls,
        path: Union[str, Path],
        graph: TypedGraph,
        actions: ActionTable,
        q: int = 5,
        max_steps: int = 6,
        episodes_per_pair: int = 20,
        seed: int = 0,
    ) -> 'PathStore':
        """
        Read a paths file, recovering step scores from the policy's actions.

        Raises:
            ExplorerError: If a line is malformed or a path does not match the policy
        """
        store = cls(graph, q, actions, max_steps, episodes_per_pair, seed)
        current: Optional[Pair] = None
        for line_number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith('# pair '):
                parts = line[len('# pair '):].split(' -> ')
                if len(parts) != 2:
                    raise ExplorerError(f"Paths line {line_number}: malformed pair header '{line}'")
                current = (NodeRef.parse(parts[0].strip()), NodeRef.parse(parts[1].strip()))
                store._paths[current] = []
                continue
            if current is None:
                raise ExplorerError(f"Paths line {line_number}: path before any pair header")
            fields = line.split('\t')
            if len(fields) < 2 or not fields[-1].startswith('score='):
                raise ExplorerError(f"Paths line {line_number}: expected node tokens then score=<float>")
            nodes = [NodeRef.parse(token) for token in fields[:-1]]
            if (nodes[0], nodes[-1]) != current:
                raise ExplorerError(f"Paths line {line_number}: path does not join {current[0]} and {current[1]}")
            scores = []
            for head, tail in zip(nodes, nodes[1:]):
                probability = actions.probability(graph.index(head), graph.index(tail))
                if probability is None:
                    raise ExplorerError(f"Paths line {line_number}: step {head} -> {tail} is not a policy action")
                scores.append(probability)
            instance = PathInstance.from_nodes(nodes, scores, graph)
            recorded = float(fields[-1][len('score='):])
            if abs(instance.score - recorded) > 1e-9:
                raise ExplorerError(
                    f"Paths line {line_number}: score {recorded} does not match the policy ({instance.score})"
                )
            store._paths[current].append(instance)
        return store


def explore(
    pairs: Sequence[Pair],
    table: EmbeddingTable,
    graph: TypedGraph,
    config: ExplorerConfig,
) -> Tuple[PolicyModel, PathStore, List[float]]:
    """
    Train the policy on the pairs, then mine their paths.

    Args:
        pairs: Mining pairs
        table: First-stage embeddings covering every node
        graph: The graph
        config: Exploration hyperparameters

    Returns:
        (trained policy, store holding the mined paths, per-batch mean rewards)
    """
    model = PolicyModel(table.dim, config.max_steps, config.k_actions, config.baseline_decay)
    curve: List[float] = []
    if config.policy_episodes > 0:
        curve = train_policy(
            pairs, model, table, graph, config.policy_episodes, config.batch_size, config.lr, config.seed,
        )
    actions = ActionTable.build(graph, model, table.matrix_for(graph))
    store = PathStore(graph, config.top_q, actions, config.max_steps, config.eval_episodes_per_pair, config.seed + 1)
    rng = np.random.default_rng(config.seed + 2)
    store.update(mine_with_actions(
        pairs, actions, graph, config.max_steps, config.episodes_per_pair, config.top_q, rng,
    ))
    logger.info(f"Mined {sum(1 for _ in store.all_paths())} paths for {len(store)} pairs")
    return model, store, curve
