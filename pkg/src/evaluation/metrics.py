"""
Ranking metrics for a single relevant item among sampled negatives.
"""
import math
from typing import Sequence

import numpy as np

from ..core.errors import DataError


class EvaluationError(DataError):
    """Exception raised for invalid evaluation inputs."""
    pass


def hr_at_k(rank: float, k: int) -> int:
    """1 if the positive ranks within the top k, else 0."""
    if rank < 1:
        raise EvaluationError(f"Rank must be >= 1, got {rank}")
    return int(rank <= k)


def ndcg_at_k(rank: float, k: int) -> float:
    """1 / log2(rank + 1) if the positive ranks within the top k, else 0."""
    if rank < 1:
        raise EvaluationError(f"Rank must be >= 1, got {rank}")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def pessimistic_rank(positive_score: float, negative_scores: Sequence[float]) -> int:
    """1 + number of negatives scoring at least as high as the positive."""
    return 1 + int(np.count_nonzero(np.asarray(negative_scores, dtype=np.float64) >= positive_score))


def corrected_rank(rank: int, n_negatives: int, universe: int) -> float:
    """
    Estimated rank among the whole item universe from a sampled rank.

    R = 1 + (r - 1) * (M - 1) / n for n sampled negatives out of M items.
    """
    if n_negatives < 1:
        raise EvaluationError("Rank correction needs at least one negative")
    return 1.0 + (rank - 1) * (universe - 1) / n_negatives
