"""
Ingestion of interaction and metadata files into a typed graph.

Interactions: `user_id<TAB>item_id<TAB>timestamp` per line, `#` comments.
Metadata: `item_id<TAB>brand_id<TAB>category_id`, an empty field means missing.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from .nodes import HinError, NodeKind, NodeRef, Relation, RelationType
from .sequences import InteractionSequence
from .typed_graph import Edge, TypedGraph

# Configure logging
logger = logging.getLogger(__name__)

BUY = Relation(RelationType.BUY)
IS_BRAND_OF = Relation(RelationType.IS_BRAND_OF)
IS_CATEGORY_OF = Relation(RelationType.IS_CATEGORY_OF)


class IngestError(HinError):
    """Exception raised when an input file cannot be parsed."""
    pass


@dataclass
class IdMap:
    """
    Mapping between external ids and dense per-kind internal ids.

    Internal ids are assigned in first-seen order.
    """
    external: Dict[NodeKind, List[str]] = field(default_factory=lambda: {kind: [] for kind in NodeKind})
    _lookup: Dict[Tuple[NodeKind, str], int] = field(default_factory=dict, repr=False)

    def intern(self, kind: NodeKind, external_id: str) -> NodeRef:
        """Return the node for an external id, assigning the next id if unseen."""
        key = (kind, external_id)
        if key not in self._lookup:
            self._lookup[key] = len(self.external[kind])
            self.external[kind].append(external_id)
        return NodeRef(kind, self._lookup[key])

    def get(self, kind: NodeKind, external_id: str) -> Optional[NodeRef]:
        local_id = self._lookup.get((kind, external_id))
        return None if local_id is None else NodeRef(kind, local_id)

    def external_id(self, node: NodeRef) -> str:
        """
        External id of a node.

        Raises:
            HinError: If the node was never interned
        """
        try:
            return self.external[node.kind][node.local_id]
        except IndexError:
            raise HinError(f"No external id recorded for {node}")

    def count(self, kind: NodeKind) -> int:
        return len(self.external[kind])

    def save(self, path: Union[str, Path]) -> None:
        """Write `kind<TAB>local_id<TAB>external_id` lines."""
        lines = [
            f"{kind.code}\t{local_id}\t{external_id}"
            for kind in NodeKind
            for local_id, external_id in enumerate(self.external[kind])
        ]
        Path(path).write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'IdMap':
        """
        Read a file written by `save`.

        Raises:
            IngestError: If a line is malformed or ids are not dense
        """
        id_map = cls()
        for line_number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise IngestError(f"Id map line {line_number}: expected 3 fields, got '{line}'")
            node = id_map.intern(NodeKind.from_code(parts[0]), parts[2])
            if str(node.local_id) != parts[1]:
                raise IngestError(f"Id map line {line_number}: ids are not dense in first-seen order")
        return id_map


class IngestResult(NamedTuple):
    """Output of `ingest`."""
    graph: TypedGraph
    sequences: List[InteractionSequence]
    id_map: IdMap


def _read_lines(path: Union[str, Path]) -> List[Tuple[int, str]]:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise IngestError(f"Cannot read '{path}': {str(e)}")
    except UnicodeDecodeError as e:
        raise IngestError(f"File '{path}' is not valid UTF-8: {str(e)}")
    return [
        (line_number, line.rstrip('\r'))
        for line_number, line in enumerate(text.split('\n'), start=1)
        if line.strip() and not line.lstrip().startswith('#')
    ]


def _parse_interactions(path: Union[str, Path]) -> List[Tuple[str, str, int]]:
    records = []
    for line_number, line in _read_lines(path):
        parts = line.split('\t')
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise IngestError(f"{path}:{line_number}: expected 'user_id<TAB>item_id<TAB>timestamp', got '{line}'")
        try:
            timestamp = int(parts[2])
        except ValueError:
            raise IngestError(f"{path}:{line_number}: timestamp '{parts[2]}' is not an integer")
        records.append((parts[0], parts[1], timestamp))
    return records


def _parse_metadata(path: Union[str, Path]) -> List[Tuple[int, str, str, str]]:
    records = []
    for line_number, line in _read_lines(path):
        parts = line.split('\t')
        if len(parts) == 2:
            parts.append('')
        if len(parts) != 3 or not parts[0]:
            raise IngestError(f"{path}:{line_number}: expected 'item_id<TAB>brand_id<TAB>category_id', got '{line}'")
        records.append((line_number, parts[0], parts[1].strip(), parts[2].strip()))
    return records


def ingest(
    interactions_file: Union[str, Path],
    metadata_file: Optional[Union[str, Path]] = None,
    min_interactions: int = 12,
    max_sequence_length: Optional[int] = None,
    train_fraction: float = 1.0,
    seed: int = 0,
) -> IngestResult:
    """
    Build the graph and the chronological sequences from input files.

    Args:
        interactions_file: Path of the interactions file
        metadata_file: Path of the metadata file (optional)
        min_interactions: Users with fewer interactions are dropped with their edges
        max_sequence_length: Keep only each user's latest items (None keeps all)
        train_fraction: Fraction of the retained users to keep, sampled with `seed`
        seed: Seed for the user subsample

    Returns:
        IngestResult(graph, sequences, id_map)

    Raises:
        IngestError: On a malformed line (reported with its line number)
    """
    if min_interactions < 1:
        raise IngestError(f"min_interactions must be >= 1, got {min_interactions}")

    records = _parse_interactions(interactions_file)
    if not records:
        logger.warning(f"Interactions file '{interactions_file}' is empty; producing an empty graph")

    # Group by user, preserving file order for timestamp ties
    per_user: Dict[str, List[Tuple[int, str, int]]] = {}
    for position, (user_id, item_id, timestamp) in enumerate(records):
        per_user.setdefault(user_id, []).append((position, item_id, timestamp))

    kept_users = [user_id for user_id, rows in per_user.items() if len(rows) >= min_interactions]
    dropped = len(per_user) - len(kept_users)
    if dropped:
        logger.info(f"Dropped {dropped} users with fewer than {min_interactions} interactions")

    if train_fraction < 1.0 and kept_users:
        rng = np.random.default_rng(seed)
        n_keep = max(1, int(round(train_fraction * len(kept_users))))
        chosen = set(rng.choice(len(kept_users), size=n_keep, replace=False).tolist())
        kept_users = [user_id for index, user_id in enumerate(kept_users) if index in chosen]
        logger.info(f"Subsampled {len(kept_users)} users (train_fraction={train_fraction})")

    retained: Dict[str, List[Tuple[int, str, int]]] = {}
    for user_id in kept_users:
        rows = sorted(per_user[user_id], key=lambda row: (row[2], row[0]))
        if max_sequence_length is not None:
            rows = rows[-max_sequence_length:]
        retained[user_id] = rows

    # Dense ids in first-seen file order among retained records
    id_map = IdMap()
    kept_rows = sorted(
        ((position, user_id, item_id) for user_id, rows in retained.items() for position, item_id, _ in rows),
        key=lambda row: row[0],
    )
    for _, user_id, item_id in kept_rows:
        id_map.intern(NodeKind.USER, user_id)
        id_map.intern(NodeKind.ITEM, item_id)

    forward: List[Edge] = []
    sequences: List[InteractionSequence] = []
    for user_id in sorted(retained, key=lambda u: id_map.get(NodeKind.USER, u).local_id):
        user = id_map.get(NodeKind.USER, user_id)
        items = [id_map.get(NodeKind.ITEM, item_id) for _, item_id, _ in retained[user_id]]
        timestamps = [timestamp for _, _, timestamp in retained[user_id]]
        forward.extend(Edge(user, BUY, item) for item in items)
        sequences.append(InteractionSequence(user, items, timestamps))

    if metadata_file is not None:
        for line_number, item_id, brand_id, category_id in _parse_metadata(metadata_file):
            item = id_map.get(NodeKind.ITEM, item_id)
            if item is None:
                logger.warning(f"{metadata_file}:{line_number}: item '{item_id}' has no retained interactions; skipping")
                continue
            if brand_id:
                forward.append(Edge(item, IS_BRAND_OF, id_map.intern(NodeKind.BRAND, brand_id)))
            if category_id:
                forward.append(Edge(item, IS_CATEGORY_OF, id_map.intern(NodeKind.CATEGORY, category_id)))

    counts = {kind: id_map.count(kind) for kind in NodeKind}
    graph = TypedGraph.build(counts, forward)
    graph.validate()
    logger.info(f"Ingested {graph!r} with {len(sequences)} sequences")
    return IngestResult(graph, sequences, id_map)
