"""
Per-user chronological interaction sequences and the bridge/train/test split.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from .nodes import HinError, NodeKind, NodeRef

logger = logging.getLogger(__name__)


class SplitError(HinError):
    """Exception raised when a sequence is too short to split."""
    pass


@dataclass
class InteractionSequence:
    """
    A user's purchases in chronological order.

    Attributes:
        user: The user node
        items: Item nodes, oldest first
        timestamps: Epoch seconds, aligned with items, non-decreasing
    """
    user: NodeRef
    items: List[NodeRef] = field(default_factory=list)
    timestamps: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.user.kind != NodeKind.USER:
            raise HinError(f"Sequence owner must be a user, got {self.user}")
        if len(self.items) != len(self.timestamps):
            raise HinError(f"User {self.user}: {len(self.items)} items but {len(self.timestamps)} timestamps")
        for earlier, later in zip(self.timestamps, self.timestamps[1:]):
            if later < earlier:
                raise HinError(f"User {self.user}: timestamps are not chronological")

    def __len__(self) -> int:
        return len(self.items)


def split(
    seq: InteractionSequence,
    n_bridge: int = 2,
    n_train: int = 4,
    max_test_items: Optional[int] = None,
    min_items: int = 12,
) -> Tuple[List[NodeRef], List[NodeRef], List[NodeRef]]:
    """
    Split a sequence into bridge, train and test items, preserving order.

    Args:
        seq: The sequence to split
        n_bridge: Number of leading bridge items
        n_train: Number of training items after the bridge
        max_test_items: Cap on the test items (None keeps the whole remainder)
        min_items: Minimum sequence length accepted

    Returns:
        (bridge, train, test)

    Raises:
        SplitError: If the sequence is shorter than min_items or leaves no test item
    """
    if len(seq) < min_items or len(seq) <= n_bridge + n_train:
        raise SplitError(
            f"User {seq.user} has {len(seq)} items; need at least "
            f"{max(min_items, n_bridge + n_train + 1)} to split"
        )
    bridge = list(seq.items[:n_bridge])
    train = list(seq.items[n_bridge:n_bridge + n_train])
    test = list(seq.items[n_bridge + n_train:])
    if max_test_items is not None:
        test = test[:max_test_items]
    return bridge, train, test


def save_sequences(sequences: Sequence[InteractionSequence], path: Union[str, Path]) -> None:
    """
    Write sequences as one line per interaction: `user<TAB>item<TAB>timestamp`.
    """
    lines = []
    for seq in sequences:
        for item, timestamp in zip(seq.items, seq.timestamps):
            lines.append(f"{seq.user.token}\t{item.token}\t{timestamp}")
    Path(path).write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')


def load_sequences(path: Union[str, Path]) -> List[InteractionSequence]:
    """
    Read sequences written by `save_sequences`, keeping file order.

    Raises:
        HinError: If a line is malformed
    """
    order: List[NodeRef] = []
    by_user = {}
    for line_number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split('\t')
        if len(parts) != 3:
            raise HinError(f"Sequence line {line_number}: expected 3 fields, got '{line}'")
        user = NodeRef.parse(parts[0])
        item = NodeRef.parse(parts[1])
        try:
            timestamp = int(parts[2])
        except ValueError:
            raise HinError(f"Sequence line {line_number}: timestamp '{parts[2]}' is not an integer")
        if user not in by_user:
            by_user[user] = ([], [])
            order.append(user)
        by_user[user][0].append(item)
        by_user[user][1].append(timestamp)
    return [InteractionSequence(user, *by_user[user]) for user in order]
