"""
Tests for the command-line surface and whole-pipeline runs.
"""
import json
import shutil
import unittest
from unittest import mock

import pytest
import torch
from click.testing import CliRunner

from src.cli import LOCK, MANIFEST, cli, parse_assignments, pipeline_stages, run_pipeline, run_stage
from src.cli.stages import LAST_GOOD_CHECKPOINT
from src.core import ConfigError, PipelineConfig
from src.recommender import batch_loss, load_checkpoint

SMALL_RUN = [
    'synth_users=40', 'synth_items=80', 'synth_brands=4',
    'dim=16', 'heads=2',
    'walks_per_node=4', 'walk_length=6', 'skipgram_epochs=2', 'path_skipgram_epochs=2',
    'policy_episodes=256', 'episodes_per_pair=10', 'eval_episodes_per_pair=5',
    'max_path_len=4', 'top_q=3',
    'epochs=3', 'optimizer=adam', 'lr=0.001',
    'n_negatives=20', 'ks=1,5,10',
]


def _set(assignments):
    args = []
    for assignment in assignments:
        args.extend(['--set', assignment])
    return args


def _report_rows(text):
    """Report rows keyed by metric name."""
    lines = text.splitlines()
    header = lines[0].split()[1:]
    rows = {}
    for line in lines[1:]:
        name, *values = line.split()
        rows[name] = dict(zip(header, (float(value) for value in values)))
    return rows


@pytest.fixture
def restore_torch():
    threads = torch.get_num_threads()
    yield
    torch.use_deterministic_algorithms(False)
    torch.set_num_threads(threads)


class TestCommands(unittest.TestCase):
    """Tests for single stages and usage errors."""

    @pytest.fixture(autouse=True)
    def _tmp(self, tmp_path):
        self.workdir = tmp_path / 'work'
        self.tmp_path = tmp_path
        self.runner = CliRunner()

    def invoke(self, *args):
        return self.runner.invoke(cli, ['--workdir', str(self.workdir), *args])

    def manifest(self):
        return json.loads((self.workdir / MANIFEST).read_text())

    def synth(self):
        result = self.invoke('synth', '--users', '5', '--items', '30', '--brands', '3')
        self.assertEqual(result.exit_code, 0, result.output)
        return result

    def test_synth_writes_planted_dataset(self):
        result = self.synth()
        self.assertIn('synth: interactions.tsv, metadata.tsv, planted.tsv', result.output)
        self.assertEqual(len((self.workdir / 'planted.tsv').read_text().splitlines()), 5)
        self.assertEqual(len((self.workdir / 'interactions.tsv').read_text().splitlines()), 5 * 12)
        entry = self.manifest()['stages']['synth']
        self.assertEqual(sorted(entry['artifacts']), ['interactions.tsv', 'metadata.tsv', 'planted.tsv'])
        self.assertFalse((self.workdir / LOCK).exists())

    def test_ingest_after_synth(self):
        self.synth()
        result = self.invoke('ingest')
        self.assertEqual(result.exit_code, 0, result.output)
        entry = self.manifest()['stages']['ingest']
        self.assertEqual(sorted(entry['artifacts']), ['graph.hin', 'idmap.tsv', 'sequences.tsv'])
        self.assertIn('interactions.tsv', entry['input_hashes'])

    def test_missing_prerequisite(self):
        self.synth()
        self.invoke('ingest')
        result = self.invoke('explore')
        self.assertEqual(result.exit_code, 1)
        self.assertIn("embedding table missing: run the 'embed' stage first", result.output)
        self.assertNotIn('explore', self.manifest()['stages'])
        self.assertFalse((self.workdir / 'paths.tsv').exists())

    def test_stage_before_ingest(self):
        result = self.invoke('embed')
        self.assertEqual(result.exit_code, 1)
        self.assertIn("graph missing: run the 'ingest' stage first", result.output)

    def test_locked_workdir(self):
        self.workdir.mkdir()
        (self.workdir / LOCK).write_text('123')
        result = self.invoke('synth')
        self.assertEqual(result.exit_code, 1)
        self.assertIn('locked', result.output)
        self.assertTrue((self.workdir / LOCK).exists())

    def test_unknown_override(self):
        result = self.invoke('run', 'all', '--set', 'bogus=1')
        self.assertEqual(result.exit_code, 1)

    def test_override_without_value(self):
        result = self.invoke('run', 'all', '--set', 'seed')
        self.assertEqual(result.exit_code, 1)
        self.assertIn('key=value', result.output)

    def test_bad_config_file(self):
        config = self.tmp_path / 'bad.conf'
        config.write_text('seed = soon\n')
        result = self.runner.invoke(cli, ['--config', str(config), '--workdir', str(self.workdir), 'synth'])
        self.assertEqual(result.exit_code, 1)

    def test_missing_interactions_file(self):
        result = self.invoke('ingest', '--interactions', str(self.tmp_path / 'nope.tsv'))
        self.assertEqual(result.exit_code, 1)

    def test_unknown_command(self):
        result = self.invoke('serve')
        self.assertEqual(result.exit_code, 1)


def test_parse_assignments():
    assert parse_assignments(['a=1', ' b = x=y ']) == {'a': '1', 'b': 'x=y'}
    assert parse_assignments([]) == {}
    with pytest.raises(ConfigError):
        parse_assignments(['a'])


def test_unknown_stage(tmp_path):
    with pytest.raises(ConfigError):
        run_stage('fit', PipelineConfig(workdir=str(tmp_path)))


def test_pipeline_stages_skip_synth_for_real_data():
    assert pipeline_stages(PipelineConfig())[0] == 'synth'
    stages = pipeline_stages(PipelineConfig(interactions_file='data/interactions.tsv'))
    assert stages == ['ingest', 'embed', 'explore', 'train', 'eval', 'explain']


@pytest.mark.slow
def test_deterministic_runs_match(tmp_path, restore_torch):
    runner = CliRunner()
    outputs = []
    for name in ('first', 'second'):
        workdir = tmp_path / name
        result = runner.invoke(cli, ['--workdir', str(workdir), '--deterministic', '--seed', '7',
                                     'run', 'all', *_set(SMALL_RUN)])
        assert result.exit_code == 0, result.output
        outputs.append({
            artifact: (workdir / artifact).read_bytes()
            for artifact in ('report.txt', 'ranks.tsv', 'explanations.json', 'paths.tsv')
        })
    assert outputs[0] == outputs[1]

    rows = _report_rows(outputs[0]['report.txt'].decode())
    for method in ('TMER-RL', 'Popularity'):
        assert rows['HR@1'][method] == rows['NDCG@1'][method]
        hrs = [rows[f'HR@{k}'][method] for k in (1, 5, 10)]
        assert hrs == sorted(hrs)
        assert all(0.0 <= value <= 1.0 for value in hrs)
        for k in (1, 5, 10):
            assert rows[f'NDCG@{k}'][method] <= rows[f'HR@{k}'][method]


PLANTED_RUN = [
    'synth_users=200', 'synth_items=400', 'synth_brands=10', 'synth_loyalty=0.9',
    'dim=32', 'heads=2',
    'walks_per_node=10', 'walk_length=8',
    'policy_episodes=1024', 'episodes_per_pair=20', 'eval_episodes_per_pair=10',
    'max_path_len=4', 'top_q=5',
    'epochs=25', 'optimizer=adam', 'lr=0.005',
    'n_negatives=50', 'ks=1,5,10',
]


@pytest.mark.slow
@pytest.mark.parametrize('seed', [7, 8, 9])
def test_planted_brands_are_recovered(tmp_path, restore_torch, seed):
    runner = CliRunner()
    full = tmp_path / 'full'
    result = runner.invoke(cli, ['--workdir', str(full), '--seed', str(seed), 'run', 'all', *_set(PLANTED_RUN)])
    assert result.exit_code == 0, result.output
    rows = _report_rows((full / 'report.txt').read_text())
    assert rows['HR@10']['TMER-RL'] >= 0.6
    assert rows['HR@10']['TMER-RL'] - rows['HR@10']['Popularity'] >= 0.15
    assert json.loads((full / 'explanations.json').read_text())

    # Same graph, embeddings and mined paths; only the item-item attention is removed
    ablation = tmp_path / 'ablation'
    shutil.copytree(full, ablation)
    for stage in ('train', 'eval'):
        result = runner.invoke(cli, ['--workdir', str(ablation), '--seed', str(seed), 'run', stage,
                                     *_set(PLANTED_RUN + ['use_item_item_paths=false'])])
        assert result.exit_code == 0, result.output
    ablated = _report_rows((ablation / 'report.txt').read_text())
    assert ablated['HR@1']['TMER-RL'] < rows['HR@1']['TMER-RL']


TINY_RUN = {
    'synth_users': 10, 'synth_items': 30, 'synth_brands': 3,
    'dim': 8, 'heads': 2,
    'walks_per_node': 2, 'walk_length': 4, 'skipgram_epochs': 1, 'path_skipgram_epochs': 1,
    'policy_episodes': 32, 'policy_batch_size': 16, 'episodes_per_pair': 4, 'eval_episodes_per_pair': 4,
    'max_path_len': 4, 'top_q': 2, 'epochs': 2,
}


def test_divergence_leaves_the_last_good_checkpoint(tmp_path):
    workdir = tmp_path / 'work'
    config = PipelineConfig.build({**TINY_RUN, 'workdir': str(workdir)})
    run_pipeline(config, ['synth', 'ingest', 'embed', 'explore'])

    def diverge(*args, **kwargs):
        return batch_loss(*args, **kwargs) * float('nan')

    assignments = [f'{key}={value}' for key, value in TINY_RUN.items()]
    with mock.patch('src.recommender.training.batch_loss', side_effect=diverge):
        result = CliRunner().invoke(cli, ['--workdir', str(workdir), 'run', 'train', *_set(assignments)])
    assert result.exit_code == 3, result.output
    assert not (workdir / 'model.pt').exists()
    assert 'train' not in json.loads((workdir / MANIFEST).read_text())['stages']

    model, train_config, losses = load_checkpoint(workdir / LAST_GOOD_CHECKPOINT)
    assert losses == []
    assert train_config.heads == 2
    assert all(bool(torch.isfinite(tensor).all()) for tensor in model.state_dict().values())
