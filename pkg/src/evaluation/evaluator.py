"""
Sampled-negative evaluation protocol and report formatting.

Every test item of a user is one instance: the positive is mixed with
n_negatives items the user never interacted with, all candidates are
scored after the user's history up to the previous item, and the rank of
the positive feeds HR@K and NDCG@K.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from tqdm import tqdm

from ..hin import InteractionSequence, NodeKind, NodeRef, SplitError, TypedGraph, split
from ..recommender import sample_negatives
from .metrics import EvaluationError, corrected_rank, hr_at_k, ndcg_at_k, pessimistic_rank

# Configure logging
logger = logging.getLogger(__name__)


class EvalConfig(BaseModel):
    """Settings of the evaluation protocol."""
    n_negatives: int = Field(default=500, ge=1)
    ks: List[int] = Field(default_factory=lambda: [1, 5, 10, 20])
    corrected: bool = False
    seed: int = 0
    n_bridge: int = Field(default=2, ge=1)
    n_train: int = Field(default=4, ge=1)
    min_items: int = Field(default=12, ge=1)
    max_test_items: Optional[int] = None

    @field_validator('ks', mode='before')
    @classmethod
    def _parse_ks(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(part) for part in value.split(',') if part.strip()]
        return value

    @model_validator(mode='after')
    def _check(self) -> 'EvalConfig':
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError("ks must be a non-empty list of positive integers")
        if list(self.ks) != sorted(set(self.ks)):
            raise ValueError(f"ks must be strictly ascending, got {self.ks}")
        if self.n_negatives < max(self.ks):
            raise ValueError(f"n_negatives ({self.n_negatives}) must be >= max(ks) ({max(self.ks)})")
        return self

    @classmethod
    def from_pipeline(cls, config) -> 'EvalConfig':
        return cls(
            n_negatives=config.n_negatives,
            ks=list(config.ks),
            corrected=config.corrected,
            seed=config.seed,
            n_bridge=config.n_bridge,
            n_train=config.n_train,
            min_items=config.min_interactions,
            max_test_items=config.max_test_items,
        )


class Scorer(Protocol):
    """Anything that scores candidate next items for a user history."""

    def prepare(self, pairs: Sequence[Tuple[NodeRef, NodeRef]]) -> None:
        ...

    def score_candidates(self, user: NodeRef, history: Sequence[NodeRef], candidates: Sequence[NodeRef]) -> np.ndarray:
        ...


class PopularityScorer:
    """Baseline scoring items by their number of training interactions."""

    def __init__(self, counts: Dict[NodeRef, int]):
        self.counts = dict(counts)

    @classmethod
    def from_sequences(cls, sequences: Iterable[InteractionSequence], n_bridge: int = 2, n_train: int = 4,
                       min_items: int = 12) -> 'PopularityScorer':
        counts: Counter = Counter()
        for seq in sequences:
            try:
                bridge, train, _ = split(seq, n_bridge, n_train, min_items=min_items)
            except SplitError:
                continue
            counts.update(bridge + train)
        return cls(counts)

    def prepare(self, pairs: Sequence[Tuple[NodeRef, NodeRef]]) -> None:
        pass

    def score_candidates(self, user: NodeRef, history: Sequence[NodeRef], candidates: Sequence[NodeRef]) -> np.ndarray:
        return np.array([self.counts.get(item, 0) for item in candidates], dtype=np.float64)


@dataclass
class EvalInstance:
    """A held-out transition and its sampled negatives."""
    user: NodeRef
    history: List[NodeRef]
    positive: NodeRef
    negatives: List[NodeRef]

    @property
    def previous(self) -> NodeRef:
        return self.history[-1]


@dataclass
class InstanceResult:
    """Outcome of one instance."""
    user: NodeRef
    item: NodeRef
    rank: int
    n_candidates: int
    metric_rank: float


@dataclass
class EvalReport:
    """
    Aggregated metrics of one method.

    Attributes:
        label: Method name shown in reports
        ks: Cut-offs
        hr: Mean HR@K per K
        ndcg: Mean NDCG@K per K
        results: Per-instance outcomes
        skipped: Instances whose positive item never occurs in training
        corrected: Whether ranks were corrected to the full item universe
    """
    label: str
    ks: List[int]
    hr: Dict[int, float] = field(default_factory=dict)
    ndcg: Dict[int, float] = field(default_factory=dict)
    results: List[InstanceResult] = field(default_factory=list)
    skipped: int = 0
    corrected: bool = False

    @property
    def count(self) -> int:
        return len(self.results)

    def save_ranks(self, path: Union[str, Path]) -> None:
        """Write `user<TAB>item<TAB>rank<TAB>n_candidates` per instance."""
        lines = [f"{r.user.token}\t{r.item.token}\t{r.rank}\t{r.n_candidates}" for r in self.results]
        Path(path).write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')


def rank_instance(scorer: Scorer, instance: EvalInstance) -> int:
    """
    Pessimistic rank of the positive among its negatives.

    Raises:
        EvaluationError: If the positive is among the negatives
    """
    if instance.positive in instance.negatives:
        raise EvaluationError(f"Positive {instance.positive} of user {instance.user} is also a negative")
    scores = scorer.score_candidates(instance.user, instance.history, [instance.positive] + instance.negatives)
    return pessimistic_rank(scores[0], scores[1:])


def build_instances(
    sequences: Iterable[InteractionSequence],
    graph: TypedGraph,
    config: EvalConfig,
) -> Tuple[List[EvalInstance], int]:
    """
    Test instances with seeded negatives, and the number skipped.

    An instance is skipped when its positive item is in no user's bridge or
    train items.
    """
    sequences = list(sequences)
    rng = np.random.default_rng(config.seed)
    seen_in_training = set()
    splits = []
    for seq in sequences:
        try:
            bridge, train, test = split(seq, config.n_bridge, config.n_train, config.max_test_items, config.min_items)
        except SplitError as e:
            logger.warning(f"Skipping user in evaluation: {str(e)}")
            continue
        seen_in_training.update(bridge + train)
        splits.append((seq, bridge + train, test))

    instances: List[EvalInstance] = []
    skipped = 0
    for seq, history, test in splits:
        for item in test:
            if item not in seen_in_training:
                skipped += 1
            else:
                negatives = sample_negatives(seq.items, graph, config.n_negatives, rng)
                instances.append(EvalInstance(seq.user, list(history), item, negatives))
            history = history + [item]
    if skipped:
        logger.warning(f"Skipped {skipped} test instances whose item never occurs in training")
    return instances, skipped


def evaluate(
    scorer: Scorer,
    instances: Sequence[EvalInstance],
    config: EvalConfig,
    universe: int,
    label: str = 'TMER-RL',
    skipped: int = 0,
) -> EvalReport:
    """
    Rank every instance and average HR@K and NDCG@K.

    Args:
        scorer: The scoring method
        instances: Test instances with their negatives
        config: Protocol settings
        universe: Number of items, used by the rank correction
        label: Method name
        skipped: Instances skipped upstream, carried into the report

    Returns:
        The report

    Raises:
        EvaluationError: If there is no instance to evaluate
    """
    if not instances:
        raise EvaluationError("No test instances to evaluate")
    needed = []
    for instance in instances:
        needed.append((instance.user, instance.history[0]))
        needed.extend(zip(instance.history, instance.history[1:]))
        needed.extend((instance.previous, item) for item in [instance.positive] + instance.negatives)
    scorer.prepare(list(dict.fromkeys(needed)))

    report = EvalReport(label=label, ks=list(config.ks), skipped=skipped, corrected=config.corrected)
    quiet = logger.getEffectiveLevel() > logging.INFO
    for instance in tqdm(instances, desc=f"eval {label}", unit='inst', disable=quiet):
        rank = rank_instance(scorer, instance)
        metric_rank = corrected_rank(rank, len(instance.negatives), universe) if config.corrected else float(rank)
        report.results.append(InstanceResult(instance.user, instance.positive, rank,
                                             len(instance.negatives) + 1, metric_rank))

    for k in config.ks:
        report.hr[k] = float(np.mean([hr_at_k(r.metric_rank, k) for r in report.results]))
        report.ndcg[k] = float(np.mean([ndcg_at_k(r.metric_rank, k) for r in report.results]))
    logger.info(f"{label}: " + ', '.join(f"HR@{k}={report.hr[k]:.4f}" for k in config.ks))
    return report


def evaluate_sequences(
    scorer: Scorer,
    sequences: Iterable[InteractionSequence],
    graph: TypedGraph,
    config: EvalConfig,
    label: str = 'TMER-RL',
) -> EvalReport:
    """Build the instances of the sequences and evaluate them."""
    instances, skipped = build_instances(sequences, graph, config)
    return evaluate(scorer, instances, config, graph.count(NodeKind.ITEM), label, skipped)


def format_report(reports: Sequence[EvalReport]) -> str:
    """
    Text table with one row per metric and one column per method.
    """
    if not reports:
        return ''
    labels = [report.label for report in reports]
    width = max(12, *(len(label) + 2 for label in labels))
    lines = ['Metric'.ljust(10) + ''.join(label.rjust(width) for label in labels)]
    for name, values in (('HR', 'hr'), ('NDCG', 'ndcg')):
        for k in reports[0].ks:
            row = f"{name}@{k}".ljust(10)
            row += ''.join(f"{getattr(report, values)[k]:.4f}".rjust(width) for report in reports)
            lines.append(row)
    lines.append('Instances'.ljust(10) + ''.join(str(report.count).rjust(width) for report in reports))
    lines.append('Skipped'.ljust(10) + ''.join(str(report.skipped).rjust(width) for report in reports))
    if any(report.corrected for report in reports):
        lines.append('Ranks corrected to the full item universe')
    return '\n'.join(lines) + '\n'
