"""
End-to-end recommender training with sampled negatives, and checkpoints.
"""
import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field
from tqdm import tqdm

from ..core.errors import NumericalError
from ..hin import InteractionSequence, NodeKind, NodeRef, SplitError, TypedGraph, split
from .model import PathIndex, RecommenderError, TmerModel, loss

# Configure logging
logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'tmer-checkpoint-v1'


class TrainingDiverged(NumericalError):
    """Raised when the loss stops being finite; carries the losses of the finite epochs."""

    def __init__(self, message: str, losses: List[float]):
        super().__init__(message)
        self.losses = list(losses)


class TrainConfig(BaseModel):
    """Hyperparameters of recommender training."""
    lr: float = Field(default=1e-4, ge=0.0)
    epochs: int = Field(default=30, ge=1)
    negatives_per_positive: int = Field(default=4, ge=1)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0
    optimizer: Literal['sgd', 'adam'] = 'sgd'
    loss_variant: Literal['positive_term', 'negative_only'] = 'positive_term'
    freeze_embeddings: bool = False
    heads: int = Field(default=4, ge=1)
    feed_updated_previous: bool = True
    use_item_item_paths: bool = True
    use_user_item_paths: bool = True
    n_bridge: int = Field(default=2, ge=1)
    n_train: int = Field(default=4, ge=1)
    min_items: int = Field(default=12, ge=1)

    @classmethod
    def from_pipeline(cls, config) -> 'TrainConfig':
        return cls(
            lr=config.lr,
            epochs=config.epochs,
            negatives_per_positive=config.train_negatives,
            batch_size=config.batch_size,
            seed=config.seed,
            optimizer=config.optimizer,
            loss_variant=config.loss_variant,
            freeze_embeddings=config.freeze_embeddings,
            heads=config.heads,
            feed_updated_previous=config.feed_updated_previous,
            use_item_item_paths=config.use_item_item_paths,
            use_user_item_paths=config.use_user_item_paths,
            n_bridge=config.n_bridge,
            n_train=config.n_train,
            min_items=config.min_interactions,
        )

    def model_options(self) -> Dict:
        return {
            'heads': self.heads,
            'feed_updated_previous': self.feed_updated_previous,
            'use_item_item_paths': self.use_item_item_paths,
            'use_user_item_paths': self.use_user_item_paths,
        }


@dataclass
class TrainingData:
    """
    Training chains and their fixed negatives.

    Attributes:
        users: One user per chain
        chains: Bridge then train items of each user
        negatives: negatives[u][j] lists the negatives of target position
                   n_bridge + j of chain u
        n_bridge: Number of leading bridge items, never targets
    """
    users: List[NodeRef]
    chains: List[List[NodeRef]]
    negatives: List[List[List[NodeRef]]]
    n_bridge: int

    def __len__(self) -> int:
        return len(self.users)

    def pairs(self) -> List[Tuple[NodeRef, NodeRef]]:
        """Every (source, target) pair whose paths training reads."""
        needed: List[Tuple[NodeRef, NodeRef]] = []
        for user, chain, negatives in zip(self.users, self.chains, self.negatives):
            needed.append((user, chain[0]))
            needed.extend(zip(chain, chain[1:]))
            for offset, drawn in enumerate(negatives):
                previous = chain[self.n_bridge + offset - 1]
                needed.extend((previous, item) for item in drawn)
        return list(dict.fromkeys(needed))


def sample_negatives(
    known: Iterable[NodeRef],
    graph: TypedGraph,
    count: int,
    rng: np.random.Generator,
) -> List[NodeRef]:
    """
    Draw items the user never interacted with, uniformly without replacement.

    When fewer than `count` such items exist, all of them are returned.
    """
    excluded = {node.local_id for node in known if node.kind == NodeKind.ITEM}
    pool = np.setdiff1d(np.arange(graph.count(NodeKind.ITEM)), np.fromiter(excluded, dtype=np.int64))
    if len(pool) < count:
        logger.warning(f"Only {len(pool)} non-interacted items available, {count} requested")
        count = len(pool)
    drawn = rng.choice(pool, size=count, replace=False) if count else np.empty(0, dtype=np.int64)
    return [NodeRef(NodeKind.ITEM, int(local_id)) for local_id in drawn]


def build_training_data(
    sequences: Iterable[InteractionSequence],
    graph: TypedGraph,
    config: TrainConfig,
) -> TrainingData:
    """
    Split sequences and draw the negatives of every training target.

    Raises:
        RecommenderError: If no user has a usable sequence
    """
    rng = np.random.default_rng(config.seed)
    users: List[NodeRef] = []
    chains: List[List[NodeRef]] = []
    negatives: List[List[List[NodeRef]]] = []
    for seq in sequences:
        try:
            bridge, train, _ = split(seq, config.n_bridge, config.n_train, min_items=config.min_items)
        except SplitError as e:
            logger.warning(f"Skipping user in training: {str(e)}")
            continue
        drawn = [sample_negatives(seq.items, graph, config.negatives_per_positive, rng) for _ in train]
        if any(len(group) != config.negatives_per_positive for group in drawn):
            logger.warning(f"User {seq.user} lacks negatives; skipped")
            continue
        users.append(seq.user)
        chains.append(bridge + train)
        negatives.append(drawn)
    if not users:
        raise RecommenderError("No user has a sequence long enough to train on")
    return TrainingData(users, chains, negatives, config.n_bridge)


@dataclass
class _Tensors:
    users: torch.Tensor
    items: torch.Tensor
    item_paths: torch.Tensor
    user_paths: torch.Tensor
    candidates: torch.Tensor
    candidate_paths: torch.Tensor


def _tensorize(data: TrainingData, index: PathIndex, graph: TypedGraph) -> _Tensors:
    count = len(data)
    length = len(data.chains[0])
    targets = length - data.n_bridge
    users = torch.as_tensor([graph.index(user) for user in data.users])
    items = torch.as_tensor([[graph.index(item) for item in chain] for chain in data.chains])
    chain_pairs = [pair for chain in data.chains for pair in zip(chain, chain[1:])]
    item_paths = index.tensor(chain_pairs, (count, length - 1))
    user_paths = index.tensor([(user, chain[0]) for user, chain in zip(data.users, data.chains)])

    candidates: List[List[List[NodeRef]]] = []
    candidate_pairs: List[Tuple[NodeRef, NodeRef]] = []
    for chain, negatives in zip(data.chains, data.negatives):
        rows = []
        for offset, drawn in enumerate(negatives):
            position = data.n_bridge + offset
            row = [chain[position]] + list(drawn)
            rows.append(row)
            candidate_pairs.extend((chain[position - 1], item) for item in row)
        candidates.append(rows)
    width = len(candidates[0][0])
    candidate_index = torch.as_tensor([[[graph.index(item) for item in row] for row in rows] for rows in candidates])
    candidate_paths = index.tensor(candidate_pairs, (count, targets, width))

    empty = int((item_paths[..., 0, 0] < 0).sum()) + int((user_paths[..., 0, 0] < 0).sum())
    if empty:
        logger.warning(f"{empty} training transitions have no mined path; they use a zero context")
    return _Tensors(users, items, item_paths, user_paths, candidate_index, candidate_paths)


def _optimizer(model: TmerModel, config: TrainConfig) -> torch.optim.Optimizer:
    params = [param for param in model.parameters() if param.requires_grad]
    if config.optimizer == 'adam':
        return torch.optim.Adam(params, lr=config.lr)
    return torch.optim.SGD(params, lr=config.lr)


def batch_loss(model: TmerModel, tensors: _Tensors, rows: torch.Tensor, n_bridge: int, variant: str) -> torch.Tensor:
    """Mean loss over every target position of the selected chains."""
    states = model.chain_states(tensors.items[rows], tensors.item_paths[rows], tensors.user_paths[rows])
    losses = []
    for offset in range(tensors.candidates.shape[1]):
        position = n_bridge + offset
        probs = model.score_next(
            tensors.users[rows],
            states[position - 1][1],
            tensors.items[rows, position - 1],
            tensors.candidates[rows, offset],
            tensors.candidate_paths[rows, offset],
        )
        losses.append(loss(probs[:, 0], probs[:, 1:], variant))
    return torch.stack(losses, dim=1).mean()


def train(
    data: TrainingData,
    model: TmerModel,
    index: PathIndex,
    graph: TypedGraph,
    config: TrainConfig,
) -> List[float]:
    """
    Train the model end to end.

    Negatives stay fixed across epochs; users are reshuffled every epoch.

    Args:
        data: Chains and negatives
        model: The model, trained in place
        index: Paths of every pair in `data.pairs()`
        graph: The graph
        config: Hyperparameters

    Returns:
        Mean loss of each epoch

    Raises:
        TrainingDiverged: If the loss diverges; the model is restored to the
                          end of the last finite epoch first
    """
    index.ensure(data.pairs())
    tensors = _tensorize(data, index, graph)
    model.embeddings.weight.requires_grad_(not config.freeze_embeddings)
    optimizer = _optimizer(model, config)
    generator = np.random.default_rng(config.seed)
    last_good = copy.deepcopy(model.state_dict())

    history: List[float] = []
    quiet = logger.getEffectiveLevel() > logging.INFO
    for epoch in tqdm(range(1, config.epochs + 1), desc='train', unit='epoch', disable=quiet):
        model.train()
        total, weight = 0.0, 0
        order = torch.as_tensor(generator.permutation(len(data)))
        for start in range(0, len(data), config.batch_size):
            rows = order[start:start + config.batch_size]
            try:
                value = batch_loss(model, tensors, rows, data.n_bridge, config.loss_variant)
                if not bool(torch.isfinite(value)):
                    raise NumericalError(f"Training loss became {value.item()} in epoch {epoch}")
            except NumericalError as e:
                model.load_state_dict(last_good)
                logger.error(f"{str(e)}; restored the parameters of epoch {epoch - 1}")
                raise TrainingDiverged(str(e), history) from e
            optimizer.zero_grad()
            value.backward()
            optimizer.step()
            total += value.item() * len(rows)
            weight += len(rows)
        history.append(total / weight)
        last_good = copy.deepcopy(model.state_dict())
        logger.info(f"Epoch {epoch}/{config.epochs} loss {history[-1]:.6f}")
    model.eval()
    return history


def save_checkpoint(
    path: Union[str, Path],
    model: TmerModel,
    config: TrainConfig,
    losses: List[float],
) -> None:
    """Write parameters, shapes, settings and the loss log with torch.save."""
    state = model.state_dict()
    torch.save({
        'format': CHECKPOINT_FORMAT,
        'shapes': {name: list(tensor.shape) for name, tensor in state.items()},
        'state_dict': state,
        'model': model.settings(),
        'config': config.model_dump(),
        'losses': list(losses),
    }, str(path))


def load_checkpoint(path: Union[str, Path]) -> Tuple[TmerModel, TrainConfig, List[float]]:
    """
    Read a checkpoint written by `save_checkpoint`.

    Raises:
        RecommenderError: If the file is not a checkpoint or shapes disagree
    """
    try:
        payload = torch.load(str(path), map_location='cpu', weights_only=True)
    except (OSError, RuntimeError, EOFError) as e:
        raise RecommenderError(f"Cannot read checkpoint '{path}': {str(e)}")
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise RecommenderError(f"'{path}' is not a {CHECKPOINT_FORMAT} file")
    state = payload['state_dict']
    for name, shape in payload['shapes'].items():
        if name not in state or list(state[name].shape) != shape:
            raise RecommenderError(f"Checkpoint '{path}': parameter '{name}' does not have shape {shape}")
    settings = dict(payload['model'])
    dtype = state['embeddings.weight'].dtype
    model = TmerModel(settings.pop('num_nodes'), settings.pop('dim'), dtype=dtype, **settings)
    model.load_state_dict(state)
    model.eval()
    return model, TrainConfig(**payload['config']), list(payload['losses'])
