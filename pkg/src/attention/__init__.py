"""
Attention package: path-set self-attention and gated item updates.
"""
from .self_attention import AttentionShapeError, SelfAttentionBlock, path_set_attention, xavier_linear
from .item_update import ItemUpdateBlock, update_item, update_first_item, propagate_sequence

__all__ = [
    'AttentionShapeError',
    'SelfAttentionBlock',
    'path_set_attention',
    'xavier_linear',
    'ItemUpdateBlock',
    'update_item',
    'update_first_item',
    'propagate_sequence',
]
