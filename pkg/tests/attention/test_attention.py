"""
Tests for path-set self-attention and the gated item updates.
"""
import math
import unittest

import pytest
import torch

from src.attention import (
    AttentionShapeError,
    ItemUpdateBlock,
    SelfAttentionBlock,
    path_set_attention,
    propagate_sequence,
    update_first_item,
    update_item,
)


def identity_block(dim: int = 4, heads: int = 1) -> SelfAttentionBlock:
    block = SelfAttentionBlock(dim, heads, dtype=torch.float64)
    with torch.no_grad():
        for layer in (block.query, block.key, block.value, block.output):
            layer.weight.copy_(torch.eye(dim, dtype=torch.float64))
    return block


class TestPathSetAttention(unittest.TestCase):
    """Tests for context vectors and path weights."""

    def setUp(self):
        torch.manual_seed(0)
        self.block = SelfAttentionBlock(8, 2, dtype=torch.float64)

    def test_hand_computed_two_paths(self):
        block = identity_block()
        paths = torch.tensor([[1.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        context, weights = path_set_attention(paths, block)
        # logits q.k / sqrt(4): row one [0.5, 1], row two [1, 2]
        first = [math.exp(0.5), math.exp(1.0)]
        second = [math.exp(1.0), math.exp(2.0)]
        first = [value / sum(first) for value in first]
        second = [value / sum(second) for value in second]
        expected_weights = [(first[0] + second[0]) / 2, (first[1] + second[1]) / 2]
        expected_x = ((first[0] + 2 * first[1]) + (second[0] + 2 * second[1])) / 2
        torch.testing.assert_close(weights, torch.tensor(expected_weights, dtype=torch.float64))
        torch.testing.assert_close(context, torch.tensor([expected_x, 0.0, 0.0, 0.0], dtype=torch.float64))

    def test_single_path_gets_all_weight(self):
        path = torch.randn(1, 8, dtype=torch.float64)
        context, weights = path_set_attention(path, self.block)
        torch.testing.assert_close(weights, torch.ones(1, dtype=torch.float64))
        with torch.no_grad():
            expected = self.block.output(self.block.value(path))[0]
        torch.testing.assert_close(context, expected)

    def test_identical_paths_share_weight(self):
        path = torch.randn(1, 8, dtype=torch.float64)
        _, weights = path_set_attention(path.repeat(2, 1), self.block)
        torch.testing.assert_close(weights, torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_permutation_equivariance(self):
        paths = torch.randn(5, 8, dtype=torch.float64)
        order = torch.tensor([3, 0, 4, 1, 2])
        context, weights = path_set_attention(paths, self.block)
        permuted_context, permuted_weights = path_set_attention(paths[order], self.block)
        torch.testing.assert_close(permuted_context, context)
        torch.testing.assert_close(permuted_weights, weights[order])

    def test_weights_are_on_the_simplex(self):
        generator = torch.Generator().manual_seed(1)
        for size in range(1, 11):
            paths = 3.0 * torch.randn(size, 8, dtype=torch.float64, generator=generator)
            _, weights = path_set_attention(paths, self.block)
            self.assertTrue(bool((weights >= 0).all()))
            self.assertAlmostEqual(float(weights.sum()), 1.0, places=9)

    def test_accepts_plain_lists(self):
        context, weights = path_set_attention([[0.1] * 8, [0.2] * 8], self.block)
        self.assertEqual(tuple(context.shape), (8,))
        self.assertEqual(tuple(weights.shape), (2,))

    def test_empty_set_is_rejected(self):
        with self.assertRaises(AttentionShapeError):
            path_set_attention(torch.zeros(0, 8), self.block)

    def test_wrong_dim_is_rejected(self):
        with self.assertRaises(AttentionShapeError):
            path_set_attention(torch.zeros(2, 6), self.block)

    def test_heads_must_divide_dim(self):
        with self.assertRaises(AttentionShapeError):
            SelfAttentionBlock(10, 4)


class TestMaskedBatches(unittest.TestCase):
    """Tests for padded batches of path sets."""

    def setUp(self):
        torch.manual_seed(0)
        self.block = SelfAttentionBlock(8, 4, dtype=torch.float64)

    def test_padding_does_not_change_the_result(self):
        paths = torch.randn(3, 8, dtype=torch.float64)
        padded = torch.cat([paths, torch.randn(2, 8, dtype=torch.float64)]).unsqueeze(0)
        mask = torch.tensor([[True, True, True, False, False]])
        context, weights, _ = self.block(padded, mask)
        expected_context, expected_weights = path_set_attention(paths, self.block)
        torch.testing.assert_close(context[0], expected_context)
        torch.testing.assert_close(weights[0, :3], expected_weights)
        torch.testing.assert_close(weights[0, 3:], torch.zeros(2, dtype=torch.float64))

    def test_set_without_paths_is_zero(self):
        paths = torch.randn(2, 3, 8, dtype=torch.float64)
        mask = torch.tensor([[True, True, False], [False, False, False]])
        context, weights, _ = self.block(paths, mask)
        torch.testing.assert_close(context[1], torch.zeros(8, dtype=torch.float64))
        torch.testing.assert_close(weights[1], torch.zeros(3, dtype=torch.float64))
        self.assertTrue(bool(torch.isfinite(context).all()))

    def test_attention_rows_are_distributions(self):
        paths = torch.randn(4, 8, dtype=torch.float64)
        _, _, attention = self.block(paths)
        self.assertEqual(tuple(attention.shape), (4, 4, 4))
        torch.testing.assert_close(attention.sum(dim=-1), torch.ones(4, 4, dtype=torch.float64))

    def test_mask_shape_is_checked(self):
        with self.assertRaises(AttentionShapeError):
            self.block(torch.randn(2, 3, 8, dtype=torch.float64), torch.ones(2, 4, dtype=torch.bool))


def test_attention_gradients_match_finite_differences():
    torch.manual_seed(0)
    block = SelfAttentionBlock(4, 2, dtype=torch.float64)
    paths = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)

    def context_of(x):
        return block(x)[0]

    assert torch.autograd.gradcheck(context_of, (paths,), eps=1e-6, atol=1e-6)


def test_item_update_gradients_match_finite_differences():
    torch.manual_seed(0)
    block = ItemUpdateBlock(4, dtype=torch.float64)
    inputs = tuple(torch.randn(4, dtype=torch.float64, requires_grad=True) for _ in range(3))
    # relu kinks break finite differences; keep every pre-activation away from zero
    with torch.no_grad():
        for gate in (block.previous, block.current):
            gate.bias.fill_(5.0)
    assert torch.autograd.gradcheck(lambda p, c, x: update_item(p, c, x, block), inputs, eps=1e-6, atol=1e-6)


class TestItemUpdate(unittest.TestCase):
    """Tests for the gated updates."""

    def setUp(self):
        torch.manual_seed(0)
        self.block = ItemUpdateBlock(4, dtype=torch.float64)

    def _identity_gates(self):
        with torch.no_grad():
            for layer in (self.block.previous, self.block.current, self.block.first):
                layer.weight.copy_(torch.eye(4, dtype=torch.float64))
                layer.bias.zero_()
            for layer in (self.block.context_first, self.block.context_second, self.block.context_user):
                layer.weight.zero_()

    def test_hand_computed_update(self):
        self._identity_gates()
        previous = torch.tensor([1.0, -2.0, 3.0, 0.0], dtype=torch.float64)
        current = torch.tensor([-1.0, 2.0, 0.5, 4.0], dtype=torch.float64)
        h1, h2 = update_item(previous, current, torch.randn(4, dtype=torch.float64), self.block)
        torch.testing.assert_close(h1, torch.tensor([1.0, 0.0, 9.0, 0.0], dtype=torch.float64))
        torch.testing.assert_close(h2, torch.tensor([0.0, 4.0, 0.25, 16.0], dtype=torch.float64))

    def test_closed_gate_gives_zeros(self):
        with torch.no_grad():
            self.block.previous.weight.zero_()
            self.block.previous.bias.fill_(-1.0)
            self.block.context_first.weight.zero_()
        h1, _ = update_item(torch.randn(4, dtype=torch.float64), torch.randn(4, dtype=torch.float64),
                            torch.randn(4, dtype=torch.float64), self.block)
        torch.testing.assert_close(h1, torch.zeros(4, dtype=torch.float64))

    def test_context_opens_the_gate(self):
        self._identity_gates()
        with torch.no_grad():
            self.block.context_second.weight.copy_(torch.eye(4, dtype=torch.float64))
        current = torch.tensor([-1.0, -1.0, 1.0, 1.0], dtype=torch.float64)
        _, closed = update_item(current, current, torch.zeros(4, dtype=torch.float64), self.block)
        _, opened = update_item(current, current, torch.full((4,), 3.0, dtype=torch.float64), self.block)
        torch.testing.assert_close(closed, torch.tensor([0.0, 0.0, 1.0, 1.0], dtype=torch.float64))
        torch.testing.assert_close(opened, torch.tensor([-2.0, -2.0, 4.0, 4.0], dtype=torch.float64))

    def test_first_item_without_context_warns(self):
        self._identity_gates()
        item = torch.tensor([2.0, -1.0, 0.0, 1.0], dtype=torch.float64)
        with self.assertLogs('src.attention.item_update', level='WARNING'):
            updated = update_first_item(item, None, self.block)
        torch.testing.assert_close(updated, torch.tensor([4.0, 0.0, 0.0, 1.0], dtype=torch.float64))

    def test_wrong_dim_is_rejected(self):
        with self.assertRaises(AttentionShapeError):
            update_item(torch.zeros(3), torch.zeros(4), torch.zeros(4), self.block)


class TestPropagateSequence(unittest.TestCase):
    """Tests for running the updates along a sequence."""

    def setUp(self):
        torch.manual_seed(0)
        self.block = ItemUpdateBlock(4, dtype=torch.float64)
        self.items = torch.randn(5, 4, dtype=torch.float64)
        self.contexts = torch.randn(4, 4, dtype=torch.float64)
        self.user = torch.randn(4, dtype=torch.float64)

    def test_one_state_per_item(self):
        states = propagate_sequence(self.items, self.contexts, self.user, self.block)
        self.assertEqual(len(states), 5)
        torch.testing.assert_close(states[0][0], self.user)
        torch.testing.assert_close(states[0][1], update_first_item(self.items[0], self.user, self.block))

    def test_updated_predecessor_is_fed_forward(self):
        states = propagate_sequence(self.items, self.contexts, self.user, self.block)
        h1, h2 = update_item(states[1][1], self.items[2], self.contexts[1], self.block)
        torch.testing.assert_close(states[2][0], h1)
        torch.testing.assert_close(states[2][1], h2)

    def test_raw_predecessor_when_not_fed_forward(self):
        states = propagate_sequence(self.items, self.contexts, self.user, self.block, feed_updated_previous=False)
        h1, _ = update_item(self.items[2], self.items[3], self.contexts[2], self.block)
        torch.testing.assert_close(states[3][0], h1)

    def test_order_matters(self):
        with torch.no_grad():
            for gate in (self.block.previous, self.block.current, self.block.first):
                gate.bias.fill_(1.0)
        forward = propagate_sequence(self.items, self.contexts, self.user, self.block)
        reverse = propagate_sequence(self.items.flip(0), self.contexts, self.user, self.block)
        self.assertFalse(torch.allclose(forward[-1][1], reverse[-1][1]))

    def test_batched_sequences(self):
        items = self.items.unsqueeze(0).repeat(3, 1, 1)
        contexts = self.contexts.unsqueeze(0).repeat(3, 1, 1)
        user = self.user.unsqueeze(0).repeat(3, 1)
        batched = propagate_sequence(items, contexts, user, self.block)
        single = propagate_sequence(self.items, self.contexts, self.user, self.block)
        for (_, many), (_, one) in zip(batched, single):
            torch.testing.assert_close(many, one.unsqueeze(0).repeat(3, 1))

    def test_context_count_must_match(self):
        with self.assertRaises(AttentionShapeError):
            propagate_sequence(self.items, self.contexts[:2], self.user, self.block)

    def test_empty_sequence_is_rejected(self):
        with self.assertRaises(AttentionShapeError):
            propagate_sequence(torch.zeros(0, 4), torch.zeros(0, 4), torch.zeros(4), self.block)


def test_blocks_default_to_single_precision():
    assert SelfAttentionBlock(8).query.weight.dtype == torch.float32
    assert ItemUpdateBlock(8).first.weight.dtype == torch.float32
    with pytest.raises(AttentionShapeError):
        SelfAttentionBlock(8, 0)
