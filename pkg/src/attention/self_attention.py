"""
Multi-head self-attention over the set of paths mined for one transition.

The paths of a transition are stacked as a short sequence. Each head runs
scaled dot-product attention, heads are concatenated and mixed by W^O, and
the attended sequence is mean-pooled into one context vector. The weight of
a path is the attention mass its position receives, averaged over heads and
query positions.
"""
import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..core.errors import DataError

# Configure logging
logger = logging.getLogger(__name__)


class AttentionShapeError(DataError):
    """Exception raised when attention inputs have inconsistent shapes."""
    pass


def xavier_linear(in_features: int, out_features: int, bias: bool = True, dtype=torch.float32) -> nn.Linear:
    """Linear layer with uniform ±sqrt(6/(fan_in+fan_out)) weights and zero bias."""
    layer = nn.Linear(in_features, out_features, bias=bias, dtype=dtype)
    nn.init.xavier_uniform_(layer.weight)
    if bias:
        nn.init.zeros_(layer.bias)
    return layer


class SelfAttentionBlock(nn.Module):
    """
    Multi-head self-attention unit.

    Per-head projections W_i^Q, W_i^K, W_i^V are the row blocks of the
    query, key and value matrices; `output` is W^O.
    """

    def __init__(self, dim: int, heads: int = 4, dtype=torch.float32):
        super().__init__()
        if heads < 1 or dim % heads != 0:
            raise AttentionShapeError(f"dim ({dim}) must be divisible by heads ({heads})")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = xavier_linear(dim, dim, bias=False, dtype=dtype)
        self.key = xavier_linear(dim, dim, bias=False, dtype=dtype)
        self.value = xavier_linear(dim, dim, bias=False, dtype=dtype)
        self.output = xavier_linear(dim, dim, bias=False, dtype=dtype)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        # (..., L, dim) -> (..., heads, L, head_dim)
        return x.unflatten(-1, (self.heads, self.head_dim)).transpose(-3, -2)

    def forward(
        self,
        paths: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Attend over batches of path sets.

        Args:
            paths: (..., L, dim) path vectors
            mask: (..., L) True for real paths, False for padding

        Returns:
            (context (..., dim), path weights (..., L), attention (..., heads, L, L));
            a set with no real path gets a zero context and zero weights
        """
        if paths.shape[-1] != self.dim:
            raise AttentionShapeError(f"Expected path vectors of dim {self.dim}, got {paths.shape[-1]}")
        if mask is None:
            mask = torch.ones(paths.shape[:-1], dtype=torch.bool, device=paths.device)
        if mask.shape != paths.shape[:-1]:
            raise AttentionShapeError(f"Mask shape {tuple(mask.shape)} does not match paths {tuple(paths.shape)}")

        present = mask.any(dim=-1)
        # Sets without paths attend over their padding; the result is zeroed below
        usable = mask | ~present.unsqueeze(-1)

        q = self._split_heads(self.query(paths))
        k = self._split_heads(self.key(paths))
        v = self._split_heads(self.value(paths))
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~usable.unsqueeze(-2).unsqueeze(-3), float('-inf'))
        attention = torch.softmax(logits, dim=-1)

        attended = (attention @ v).transpose(-3, -2).flatten(-2)
        attended = self.output(attended)

        rows = (usable & present.unsqueeze(-1)).to(paths.dtype)
        count = rows.sum(dim=-1, keepdim=True).clamp(min=1.0)
        context = (attended * rows.unsqueeze(-1)).sum(dim=-2) / count

        # Mass received by each key, averaged over heads and real query rows
        received = (attention * rows.unsqueeze(-1).unsqueeze(-3)).sum(dim=-2).mean(dim=-2)
        weights = received / count
        return context, weights, attention


def path_set_attention(
    paths: Union[torch.Tensor, np.ndarray, Sequence[Sequence[float]]],
    block: SelfAttentionBlock,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Context vector and per-path weights for one transition's paths.

    Args:
        paths: (L, dim) path vectors, 1 <= L
        block: The attention unit

    Returns:
        (context of length dim, weights of length L summing to 1)

    Raises:
        AttentionShapeError: If there are no paths or the dim is wrong
    """
    dtype = block.query.weight.dtype
    if isinstance(paths, torch.Tensor):
        stacked = paths.to(dtype)
    else:
        stacked = torch.as_tensor(np.asarray(paths, dtype=np.float64), dtype=dtype)
    if stacked.ndim != 2 or stacked.shape[0] == 0:
        raise AttentionShapeError("path_set_attention needs a non-empty (paths, dim) matrix")
    context, weights, _ = block(stacked)
    return context, weights
