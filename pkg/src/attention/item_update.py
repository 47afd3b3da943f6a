"""
Gated item-update attention.

Two ReLU-gated layers carry information from the previous item and the
transition's path context into the next item's representation; the first
item of a sequence is gated by the user -> item path context instead.
"""
import logging
from typing import List, Optional, Tuple

import torch
from torch import nn

from .self_attention import AttentionShapeError, xavier_linear

# Configure logging
logger = logging.getLogger(__name__)


class ItemUpdateBlock(nn.Module):
    """
    Weights of the item-update gates.

    Attributes:
        previous: W_{i-1} and b^(1)
        context_first: W_phi, gating the previous item
        current: W_i and b^(2)
        context_second: W_phi^(2), gating the current item
        first: W_i and b_i of the first-item update
        context_user: W_{phi u->i}
    """

    def __init__(self, dim: int, dtype=torch.float32):
        super().__init__()
        self.dim = dim
        self.previous = xavier_linear(dim, dim, dtype=dtype)
        self.context_first = xavier_linear(dim, dim, bias=False, dtype=dtype)
        self.current = xavier_linear(dim, dim, dtype=dtype)
        self.context_second = xavier_linear(dim, dim, bias=False, dtype=dtype)
        self.first = xavier_linear(dim, dim, dtype=dtype)
        self.context_user = xavier_linear(dim, dim, bias=False, dtype=dtype)

    def _check(self, *vectors: torch.Tensor) -> None:
        for vector in vectors:
            if vector.shape[-1] != self.dim:
                raise AttentionShapeError(f"Expected vectors of dim {self.dim}, got shape {tuple(vector.shape)}")

    def forward(
        self,
        previous: torch.Tensor,
        current: torch.Tensor,
        context: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        self._check(previous, current, context)
        h1 = torch.relu(self.previous(previous) + self.context_first(context)) * previous
        h2 = torch.relu(self.current(current) + self.context_second(context)) * current
        return h1, h2

    def forward_first(self, item: torch.Tensor, user_context: torch.Tensor) -> torch.Tensor:
        self._check(item, user_context)
        return torch.relu(self.first(item) + self.context_user(user_context)) * item


def update_item(
    prev_item: torch.Tensor,
    cur_item: torch.Tensor,
    path_ctx: torch.Tensor,
    block: ItemUpdateBlock,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Two-layer update of a transition prev_item -> cur_item.

    h1 = relu(W_{i-1} h_{i-1} + W_phi h_phi + b1) * h_{i-1}
    h2 = relu(W_i h_i + W_phi2 h_phi + b2) * h_i

    Raises:
        AttentionShapeError: If a vector does not have the block's dim
    """
    return block(prev_item, cur_item, path_ctx)


def update_first_item(
    first_item: torch.Tensor,
    user_path_ctx: Optional[torch.Tensor],
    block: ItemUpdateBlock,
) -> torch.Tensor:
    """
    First-item update: relu(W_i h_i + W_u h_phi(u->i) + b_i) * h_i.

    A missing user path context is replaced by zeros.
    """
    if user_path_ctx is None:
        logger.warning("No user -> item path context; using a zero context")
        user_path_ctx = torch.zeros_like(first_item)
    return block.forward_first(first_item, user_path_ctx)


def propagate_sequence(
    items: torch.Tensor,
    item_contexts: torch.Tensor,
    user_context: torch.Tensor,
    block: ItemUpdateBlock,
    feed_updated_previous: bool = True,
) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """
    Run the item updates along a sequence.

    The first item is updated from the user context and reported as
    (user context, updated item). Every later item i gets (h1, h2) from
    update_item with the predecessor's h2 as h_{i-1}, or with the raw
    predecessor embedding when feed_updated_previous is False.

    Args:
        items: (..., n, dim) item embeddings in order
        item_contexts: (..., n - 1, dim) attended contexts of each transition
        user_context: (..., dim) attended context of user -> first item
        block: Update weights
        feed_updated_previous: Feed the predecessor's h2 rather than its embedding

    Returns:
        One (h1, h2) pair per item

    Raises:
        AttentionShapeError: If the context count does not match the transitions
    """
    n = items.shape[-2]
    if n == 0:
        raise AttentionShapeError("Cannot propagate an empty sequence")
    if item_contexts.shape[-2] != n - 1:
        raise AttentionShapeError(f"{n} items need {n - 1} transition contexts, got {item_contexts.shape[-2]}")

    first = update_first_item(items[..., 0, :], user_context, block)
    states = [(user_context, first)]
    for position in range(1, n):
        previous = states[-1][1] if feed_updated_previous else items[..., position - 1, :]
        states.append(update_item(previous, items[..., position, :], item_contexts[..., position - 1, :], block))
    return states
