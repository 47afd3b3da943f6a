"""
Tests for fusion, scoring, the loss, training, checkpoints and inference.
"""
import math
import unittest
from unittest import mock

import numpy as np
import pytest
import torch

from src.core import NumericalError
from src.explorer import ActionTable, PathStore, PolicyModel
from src.hin import NodeKind
from src.recommender import (
    EPSILON,
    PathIndex,
    Recommender,
    RecommenderError,
    ScoringTower,
    TmerModel,
    TrainConfig,
    TrainingDiverged,
    batch_loss,
    build_training_data,
    fuse,
    load_checkpoint,
    loss,
    sample_negatives,
    save_checkpoint,
    score,
    train,
)
from src.recommender.training import _tensorize
from tests.toys import graph_of, i, random_table, sequence, u

SMALL_SPLIT = {'n_bridge': 1, 'n_train': 2, 'min_items': 4}


def small_world(seed: int = 0):
    """Three users with four purchases each over twelve items, plus a mined path store."""
    chains = {user: [(4 * user + step) % 12 for step in range(4)] for user in range(3)}
    graph = graph_of(
        (3, 12, 3, 2),
        buys=[(user, item) for user, items in chains.items() for item in items],
        brands=[(item, item % 3) for item in range(12)],
        categories=[(item, item % 2) for item in range(12)],
    )
    table = random_table(graph, seed=seed)
    actions = ActionTable.build(graph, PolicyModel(8, max_steps=4), table.matrix_for(graph))
    store = PathStore(graph, q=2, actions=actions, max_steps=4, episodes_per_pair=30, seed=seed)
    sequences = [sequence(user, items) for user, items in chains.items()]
    return graph, table, store, sequences


class TestFusionAndScoring(unittest.TestCase):
    """Tests for fuse, the tower and score."""

    def test_fuse_concatenates(self):
        fused = fuse(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0]), torch.tensor([5.0, 6.0]))
        self.assertEqual(fused.tolist(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

    def test_fuse_rejects_mismatched_dims(self):
        with self.assertRaises(RecommenderError):
            fuse(torch.zeros(2), torch.zeros(3), torch.zeros(2))

    def test_tower_widths_halve(self):
        self.assertEqual(ScoringTower(8).widths, (24, 12, 6, 1))
        self.assertEqual(ScoringTower(100).widths, (300, 150, 75, 1))

    def test_tower_needs_room_for_hidden_layers(self):
        with self.assertRaises(RecommenderError):
            ScoringTower(1)

    def test_zero_network_scores_one_half(self):
        tower = ScoringTower(4)
        with torch.no_grad():
            for param in tower.parameters():
                param.zero_()
        torch.testing.assert_close(score(torch.randn(5, 12), tower), torch.full((5,), 0.5))

    def test_scores_are_probabilities(self):
        torch.manual_seed(0)
        values = score(10.0 * torch.randn(50, 12), ScoringTower(4))
        self.assertTrue(bool(((values >= 0) & (values <= 1)).all()))

    def test_score_rejects_wrong_width(self):
        with self.assertRaises(RecommenderError):
            score(torch.zeros(10), ScoringTower(4))

    def test_score_rejects_non_finite_input(self):
        with self.assertRaises(NumericalError):
            score(torch.full((12,), float('nan')), ScoringTower(4))


class TestLoss(unittest.TestCase):
    """Tests for the negative-sampling loss."""

    def test_uninformed_scores(self):
        value = loss(torch.tensor(0.5, dtype=torch.float64), torch.tensor([0.5], dtype=torch.float64))
        self.assertAlmostEqual(float(value), 2.0 * math.log(2.0), places=12)

    def test_perfect_separation(self):
        value = loss(torch.tensor(1.0, dtype=torch.float64), torch.tensor([0.0, 0.0], dtype=torch.float64))
        self.assertLess(float(value), 1e-6)
        self.assertGreater(float(value), 0.0)

    def test_clipping_bounds_the_loss(self):
        value = loss(torch.tensor(0.0, dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64))
        self.assertAlmostEqual(float(value), -2.0 * math.log(EPSILON), places=6)

    def test_negative_only_variant(self):
        value = loss(torch.tensor(0.1), torch.tensor([0.5, 0.5]), variant='negative_only')
        self.assertAlmostEqual(float(value), math.log(2.0), places=6)

    def test_batched_instances(self):
        values = loss(torch.tensor([0.5, 0.9]), torch.tensor([[0.5, 0.5], [0.1, 0.1]]))
        self.assertEqual(tuple(values.shape), (2,))
        self.assertGreater(float(values[0]), float(values[1]))

    def test_needs_negatives(self):
        with self.assertRaises(RecommenderError):
            loss(torch.tensor(0.5), torch.zeros(0))

    def test_unknown_variant(self):
        with self.assertRaises(RecommenderError):
            loss(torch.tensor(0.5), torch.tensor([0.5]), variant='hinge')


def test_negatives_avoid_interacted_items():
    graph, _, _, _ = small_world()
    rng = np.random.default_rng(0)
    known = [i(0), i(1), i(2), u(0)]
    for _ in range(20):
        drawn = sample_negatives(known, graph, 4, rng)
        assert len(drawn) == len(set(drawn)) == 4
        assert all(node.kind == NodeKind.ITEM and node.local_id >= 3 for node in drawn)


def test_negatives_fall_back_to_every_remaining_item(caplog):
    graph, _, _, _ = small_world()
    with caplog.at_level('WARNING', logger='src.recommender.training'):
        drawn = sample_negatives([i(n) for n in range(9)], graph, 5, np.random.default_rng(0))
    assert sorted(drawn) == [i(9), i(10), i(11)]
    assert 'non-interacted' in caplog.text


class TestTrainingData(unittest.TestCase):
    """Tests for chains, fixed negatives and needed pairs."""

    def setUp(self):
        self.graph, _, _, self.sequences = small_world()
        self.config = TrainConfig(negatives_per_positive=2, **SMALL_SPLIT)

    def test_chains_hold_bridge_and_train_items(self):
        data = build_training_data(self.sequences, self.graph, self.config)
        self.assertEqual(len(data), 3)
        self.assertEqual(data.chains[0], [i(0), i(1), i(2)])
        self.assertEqual([len(group) for group in data.negatives[0]], [2, 2])

    def test_pairs_cover_chains_and_negatives(self):
        data = build_training_data(self.sequences, self.graph, self.config)
        pairs = data.pairs()
        self.assertIn((u(0), i(0)), pairs)
        self.assertIn((i(1), i(2)), pairs)
        for negative in data.negatives[0][1]:
            self.assertIn((i(1), negative), pairs)
        self.assertEqual(len(pairs), len(set(pairs)))

    def test_short_sequences_are_skipped(self):
        sequences = self.sequences + [sequence(2, [0, 1])]
        data = build_training_data(sequences, self.graph, self.config)
        self.assertEqual(len(data), 3)

    def test_no_usable_sequence(self):
        with self.assertRaises(RecommenderError):
            build_training_data([sequence(0, [0, 1])], self.graph, self.config)


class TestTraining(unittest.TestCase):
    """End-to-end training on the small world."""

    def setUp(self):
        torch.manual_seed(0)
        self.graph, self.table, self.store, self.sequences = small_world()
        self.index = PathIndex(self.store, self.graph, q=2, max_nodes=5)

    def _model(self, **options):
        return TmerModel.from_table(self.table, self.graph, heads=2, dtype=torch.float64, **options)

    def _config(self, **overrides):
        settings = dict(negatives_per_positive=2, batch_size=2, heads=2, **SMALL_SPLIT)
        settings.update(overrides)
        return TrainConfig(**settings)

    def test_zero_learning_rate_keeps_the_loss(self):
        config = self._config(lr=0.0, epochs=3)
        data = build_training_data(self.sequences, self.graph, config)
        losses = train(data, self._model(), self.index, self.graph, config)
        self.assertEqual(len(losses), 3)
        self.assertEqual(losses[1], pytest.approx(losses[0], rel=1e-9))
        self.assertEqual(losses[2], pytest.approx(losses[0], rel=1e-9))

    def test_loss_decreases(self):
        config = self._config(lr=0.01, epochs=40, optimizer='adam')
        data = build_training_data(self.sequences, self.graph, config)
        losses = train(data, self._model(), self.index, self.graph, config)
        self.assertLess(losses[-1], losses[0])

    def test_frozen_embeddings_stay_put(self):
        config = self._config(lr=0.01, epochs=2, optimizer='adam', freeze_embeddings=True)
        data = build_training_data(self.sequences, self.graph, config)
        model = self._model()
        before = model.embeddings.weight.detach().clone()
        train(data, model, self.index, self.graph, config)
        self.assertTrue(torch.equal(model.embeddings.weight.detach(), before))

    def test_gradients_match_finite_differences(self):
        config = self._config()
        data = build_training_data(self.sequences, self.graph, config)
        model = self._model()
        self.index.ensure(data.pairs())
        tensors = _tensorize(data, self.index, self.graph)
        rows = torch.arange(len(data))

        def evaluate():
            return batch_loss(model, tensors, rows, data.n_bridge, config.loss_variant)

        evaluate().backward()
        item_row = self.graph.index(data.chains[0][1])
        entries = [(model.embeddings.weight, (item_row, column)) for column in range(3)]
        entries += [(model.tower.hidden1.weight, (0, column)) for column in range(3)]
        entries += [(model.attention.value.weight, (1, column)) for column in range(2)]
        eps = 1e-6
        for param, position in entries:
            analytic = float(param.grad[position])
            with torch.no_grad():
                param[position] += eps
                plus = float(evaluate())
                param[position] -= 2 * eps
                minus = float(evaluate())
                param[position] += eps
            self.assertAlmostEqual((plus - minus) / (2 * eps), analytic, delta=1e-3)

    def test_item_path_ablation_ignores_item_paths(self):
        model = self._model(use_item_item_paths=False)
        items = torch.as_tensor([[self.graph.index(i(0)), self.graph.index(i(1)), self.graph.index(i(2))]])
        user_paths = self.index.tensor([(u(0), i(0))])
        mined = self.index.tensor([(i(0), i(1)), (i(1), i(2))], (1, 2))
        empty = torch.full_like(mined, -1)
        with torch.no_grad():
            torch.testing.assert_close(
                model.chain_states(items, mined, user_paths)[-1][1],
                model.chain_states(items, empty, user_paths)[-1][1],
            )

    def test_divergence_restores_the_last_finite_epoch(self):
        config = self._config(lr=0.01, epochs=3, optimizer='adam')
        data = build_training_data(self.sequences, self.graph, config)
        model = self._model()
        per_epoch = math.ceil(len(data) / config.batch_size)
        calls = []
        snapshot = {}

        def diverge_in_second_epoch(*args, **kwargs):
            calls.append(1)
            value = batch_loss(*args, **kwargs)
            if len(calls) <= per_epoch:
                return value
            snapshot.update({name: tensor.clone() for name, tensor in model.state_dict().items()})
            return value * float('nan')

        with mock.patch('src.recommender.training.batch_loss', side_effect=diverge_in_second_epoch):
            with self.assertRaises(TrainingDiverged) as raised:
                train(data, model, self.index, self.graph, config)
        self.assertIsInstance(raised.exception, NumericalError)
        self.assertEqual(raised.exception.exit_code, 3)
        self.assertEqual(len(raised.exception.losses), 1)
        self.assertTrue(math.isfinite(raised.exception.losses[0]))
        for name, tensor in model.state_dict().items():
            self.assertTrue(torch.equal(tensor, snapshot[name]), name)


def test_path_vectors_skip_padding():
    model = TmerModel(4, 2, heads=1, dtype=torch.float64)
    with torch.no_grad():
        model.embeddings.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [4.0, 0.0]]))
    vectors = model.path_vectors(torch.tensor([[0, 1, -1], [2, 2, 3], [-1, -1, -1]]))
    torch.testing.assert_close(vectors, torch.tensor([[0.5, 0.5], [8.0 / 3.0, 4.0 / 3.0], [0.0, 0.0]],
                                                     dtype=torch.float64))


def test_path_index_pads_and_caches():
    graph, _, store, _ = small_world()
    index = PathIndex(store, graph, q=2, max_nodes=5)
    block = index.pair_nodes(u(0), i(0))
    assert block.shape == (2, 5)
    assert block[0, 0] == graph.index(u(0))
    assert index.pair_nodes(u(0), i(0)) is block
    assert tuple(index.tensor([(u(0), i(0)), (i(0), i(1))], (1, 2)).shape) == (1, 2, 2, 5)
    assert tuple(index.tensor([]).shape) == (0, 2, 5)


def test_path_index_rejects_long_paths():
    graph, _, store, _ = small_world()
    index = PathIndex(store, graph, q=2, max_nodes=1)
    with pytest.raises(RecommenderError):
        index.pair_nodes(u(0), i(0))


def test_checkpoint_round_trip(tmp_path):
    graph, table, _, _ = small_world()
    model = TmerModel.from_table(table, graph, heads=2, use_user_item_paths=False)
    config = TrainConfig(lr=0.5, heads=2, use_user_item_paths=False)
    path = tmp_path / 'model.pt'
    save_checkpoint(path, model, config, [1.5, 1.25])
    loaded, loaded_config, losses = load_checkpoint(path)
    assert loaded_config == config
    assert losses == [1.5, 1.25]
    assert loaded.settings() == model.settings()
    for name, tensor in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor)


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / 'model.pt'
    torch.save({'format': 'something-else'}, str(path))
    with pytest.raises(RecommenderError):
        load_checkpoint(path)


class TestRecommender(unittest.TestCase):
    """Tests for inference on an untrained model."""

    def setUp(self):
        torch.manual_seed(0)
        self.graph, table, store, _ = small_world()
        model = TmerModel.from_table(table, self.graph, heads=2)
        self.recommender = Recommender(model, PathIndex(store, self.graph, q=2, max_nodes=5), self.graph)

    def test_scores_one_probability_per_candidate(self):
        candidates = [i(3), i(5), i(7), i(9)]
        scores = self.recommender.score_candidates(u(0), [i(0), i(1), i(2)], candidates)
        self.assertEqual(scores.shape, (4,))
        self.assertTrue(np.all((scores > 0) & (scores < 1)))
        repeated = self.recommender.score_candidates(u(0), [i(0), i(1), i(2)], candidates)
        np.testing.assert_array_equal(scores, repeated)

    def test_candidate_order_does_not_change_scores(self):
        history = [i(0), i(1)]
        forward = self.recommender.score_candidates(u(0), history, [i(3), i(6)])
        backward = self.recommender.score_candidates(u(0), history, [i(6), i(3)])
        np.testing.assert_allclose(forward, backward[::-1], rtol=1e-5)

    def test_empty_history(self):
        with self.assertRaises(RecommenderError):
            self.recommender.score_candidates(u(0), [], [i(3)])

    def test_transition_weights_sum_to_one(self):
        paths, weights = self.recommender.transition_weights(i(0), i(1))
        self.assertTrue(paths)
        self.assertEqual(len(weights), len(paths))
        self.assertAlmostEqual(float(weights.sum()), 1.0, places=5)

    def test_history_pairs(self):
        self.assertEqual(
            Recommender.history_pairs(u(0), [i(0), i(1), i(2)]),
            [(u(0), i(0)), (i(0), i(1)), (i(1), i(2))],
        )


def test_transition_without_paths():
    graph, table, _, _ = small_world()
    recommender = Recommender(TmerModel.from_table(table, graph, heads=2), PathIndex(PathStore(graph), graph, 2, 5),
                              graph)
    paths, weights = recommender.transition_weights(i(0), i(1))
    assert paths == []
    assert weights.shape == (0,)
