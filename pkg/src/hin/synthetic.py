"""
Planted-structure dataset generator.

Every user is loyal to one brand: each purchase comes from that brand's items
with probability `loyalty`, otherwise from the whole catalogue. The files use
the same formats as real data, so the generated dataset exercises ingestion.
"""
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .nodes import HinError

logger = logging.getLogger(__name__)

_BASE_TIMESTAMP = 1_500_000_000
_DAY = 86_400


def generate_synthetic(
    interactions_file: Union[str, Path],
    metadata_file: Union[str, Path],
    n_users: int = 200,
    n_items: int = 400,
    n_brands: int = 10,
    n_categories: int = 5,
    loyalty: float = 0.9,
    sequence_length: int = 12,
    seed: int = 0,
) -> Dict[str, int]:
    """
    Write a planted-brand dataset.

    Item j belongs to brand j mod n_brands; categories are drawn uniformly.
    Users never buy the same item twice.

    Args:
        interactions_file: Output interactions path
        metadata_file: Output metadata path
        n_users: Number of users
        n_items: Number of items
        n_brands: Number of brands
        n_categories: Number of categories
        loyalty: Probability a purchase comes from the user's brand
        sequence_length: Purchases per user
        seed: Random seed

    Returns:
        Mapping from external user id to the index of the user's planted brand

    Raises:
        HinError: If the catalogue is too small for the requested sequences
    """
    if sequence_length > n_items:
        raise HinError(f"sequence_length ({sequence_length}) exceeds n_items ({n_items})")
    if n_brands > n_items:
        raise HinError(f"n_brands ({n_brands}) exceeds n_items ({n_items})")

    rng = np.random.default_rng(seed)
    item_brand = np.arange(n_items) % n_brands
    item_category = rng.integers(0, n_categories, size=n_items)
    brand_items: List[np.ndarray] = [np.flatnonzero(item_brand == b) for b in range(n_brands)]

    planted: Dict[str, int] = {}
    interaction_lines: List[str] = []
    for user in range(n_users):
        user_id = f"user{user}"
        brand = int(rng.integers(0, n_brands))
        planted[user_id] = brand
        bought: List[int] = []
        seen = set()
        while len(bought) < sequence_length:
            if rng.random() < loyalty:
                pool = brand_items[brand]
            else:
                pool = np.arange(n_items)
            candidates = [int(item) for item in pool if int(item) not in seen]
            if not candidates:
                candidates = [item for item in range(n_items) if item not in seen]
            item = candidates[int(rng.integers(0, len(candidates)))]
            seen.add(item)
            bought.append(item)
        for position, item in enumerate(bought):
            timestamp = _BASE_TIMESTAMP + position * _DAY + int(rng.integers(0, _DAY // 2))
            interaction_lines.append(f"{user_id}\titem{item}\t{timestamp}")

    metadata_lines = [
        f"item{item}\tbrand{item_brand[item]}\tcat{item_category[item]}"
        for item in range(n_items)
    ]
    Path(interactions_file).write_text('\n'.join(interaction_lines) + '\n', encoding='utf-8')
    Path(metadata_file).write_text('\n'.join(metadata_lines) + '\n', encoding='utf-8')
    logger.info(f"Generated {n_users} users x {sequence_length} purchases over {n_items} items and {n_brands} brands")
    return planted
