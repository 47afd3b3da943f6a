"""
Explanation records: the attended paths behind one recommended transition.
"""
import json
import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel, Field

from ..core.errors import DataError
from ..explorer import PathInstance
from ..hin import NodeKind, NodeRef
from ..recommender import Recommender

# Configure logging
logger = logging.getLogger(__name__)

NO_EVIDENCE = 'no evidence'


class ExplainError(DataError):
    """Exception raised for invalid explanation requests."""
    pass


class PathEvidence(BaseModel):
    """One path with its attention weight alpha and path score c."""
    nodes: List[str]
    relations: List[str]
    alpha: float = Field(ge=0.0)
    score: float = Field(gt=0.0, le=1.0)

    @property
    def scheme(self) -> str:
        return scheme_of(self.nodes)


class ExplanationRecord(BaseModel):
    """Paths explaining prev_item -> next_item for a user, by descending weight."""
    user: str
    prev_item: str
    next_item: str
    paths: List[PathEvidence] = Field(default_factory=list)
    scheme_counts: Dict[str, int] = Field(default_factory=dict)

    @property
    def no_evidence(self) -> bool:
        return not self.paths


def scheme_of(nodes: Union[PathInstance, Sequence[Union[NodeRef, str]]]) -> str:
    """Kind letters of a path joined by dashes, e.g. 'I-B-I'."""
    nodes = getattr(nodes, 'nodes', nodes)
    letters = []
    for node in nodes:
        node = NodeRef.parse(node) if isinstance(node, str) else node
        letters.append(node.kind.letter)
    return '-'.join(letters)


def _counts(schemes: Iterable[str]) -> Dict[str, int]:
    counter = Counter(schemes)
    return dict(sorted(counter.items(), key=lambda entry: (-entry[1], entry[0])))


def explain_transition(
    user: NodeRef,
    prev_item: NodeRef,
    next_item: NodeRef,
    recommender: Recommender,
    top_paths: int = 5,
) -> ExplanationRecord:
    """
    Explanation of one transition from the model's path attention.

    Args:
        user: The user
        prev_item: Previous item
        next_item: Recommended item
        recommender: Trained model and its paths
        top_paths: Maximum number of paths reported

    Returns:
        The record; its path list is empty when no path was mined. When more
        than top_paths paths exist, the kept weights are rescaled to sum to 1.
    """
    if top_paths < 1:
        raise ExplainError(f"top_paths must be >= 1, got {top_paths}")
    paths, weights = recommender.transition_weights(prev_item, next_item)
    if not paths:
        logger.warning(f"No mined path explains {prev_item} -> {next_item} for user {user}")
    order = sorted(range(len(paths)), key=lambda position: (-weights[position], position))[:top_paths]
    kept = float(sum(weights[position] for position in order))
    evidence = [
        PathEvidence(
            nodes=[node.token for node in paths[position].nodes],
            relations=[relation.name for relation in paths[position].relations],
            alpha=float(weights[position]) / kept,
            score=paths[position].score,
        )
        for position in order
    ]
    return ExplanationRecord(
        user=user.token,
        prev_item=prev_item.token,
        next_item=next_item.token,
        paths=evidence,
        scheme_counts=_counts(path.scheme for path in evidence),
    )


def summarize_schemes(records: Iterable[Union[ExplanationRecord, PathInstance]]) -> Dict[str, int]:
    """Frequency of each path scheme, most frequent first."""
    schemes: List[str] = []
    for record in records:
        if isinstance(record, ExplanationRecord):
            schemes.extend(path.scheme for path in record.paths)
        else:
            schemes.append(scheme_of(record))
    return _counts(schemes)


def _kind_legend(aliases: Optional[Dict[str, str]]) -> str:
    names = {kind.letter: kind.name.lower() for kind in NodeKind}
    names.update(aliases or {})
    return ', '.join(f"{letter}={names[letter]}" for letter in sorted(names))


def render(
    obj: Union[ExplanationRecord, Sequence[ExplanationRecord], Dict[str, int]],
    format: str = 'text',
    aliases: Optional[Dict[str, str]] = None,
) -> str:
    """
    Serialize a record, a list of records or a scheme table.

    Args:
        obj: What to render
        format: 'text' (human-readable) or 'structured' (JSON)
        aliases: Display names for kind letters in text output, e.g. {'B': 'author'}

    Returns:
        The rendered report

    Raises:
        ExplainError: If the format is unknown
    """
    if format == 'structured':
        if isinstance(obj, ExplanationRecord):
            return obj.model_dump_json(indent=2) + '\n'
        if isinstance(obj, dict):
            return json.dumps(obj, indent=2) + '\n'
        return json.dumps([record.model_dump(mode='json') for record in obj], indent=2) + '\n'
    if format != 'text':
        raise ExplainError(f"Unknown report format '{format}'")

    if isinstance(obj, dict):
        lines = [f"Path schemes ({_kind_legend(aliases)})"]
        lines.extend(f"  {scheme}\t{count}" for scheme, count in obj.items())
        return '\n'.join(lines) + '\n'
    records = [obj] if isinstance(obj, ExplanationRecord) else list(obj)
    lines: List[str] = []
    for record in records:
        lines.append(f"User {record.user}: {record.prev_item} -> {record.next_item}")
        if record.no_evidence:
            lines.append(f"  {NO_EVIDENCE}")
            continue
        for path in record.paths:
            steps = [path.nodes[0]]
            for relation, node in zip(path.relations, path.nodes[1:]):
                steps.append(f"-{relation}-> {node}")
            lines.append(f"  alpha={path.alpha:.4f} score={path.score:.4f} [{path.scheme}] {' '.join(steps)}")
    return '\n'.join(lines) + '\n'


def parse_records(text: str) -> List[ExplanationRecord]:
    """Read records written by render(..., 'structured')."""
    payload = json.loads(text)
    if isinstance(payload, dict):
        payload = [payload]
    return [ExplanationRecord.model_validate(entry) for entry in payload]
