"""
Command-line interface of the pipeline.

Every stage is a subcommand; `run all` chains them. Global options and
subcommand flags override the values of the `--config` file.
"""
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import click

from ..core.config import STAGES, PipelineConfig
from ..core.errors import ConfigError, PipelineError
from .stages import run_pipeline, run_stage

# Configure logging
logger = logging.getLogger(__name__)

EXIT_USAGE = 1


class PipelineGroup(click.Group):
    """Click group mapping usage errors to exit 1 and pipeline errors to their exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            result = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                                  standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.exceptions.Abort:
            click.echo('Aborted!', err=True)
            sys.exit(EXIT_USAGE)
        except PipelineError as e:
            logger.error(f"{type(e).__name__}: {str(e)}")
            click.echo(f"Error: {str(e)}", err=True)
            sys.exit(e.exit_code)
        sys.exit(result if isinstance(result, int) else 0)


def parse_assignments(assignments: Sequence[str]) -> Dict[str, str]:
    """
    Parse `key=value` overrides.

    Raises:
        ConfigError: If an assignment has no '='
    """
    values: Dict[str, str] = {}
    for assignment in assignments:
        if '=' not in assignment:
            raise ConfigError(f"Expected key=value, got '{assignment}'")
        key, value = assignment.split('=', 1)
        values[key.strip()] = value.strip()
    return values


def _execute(stage: str, config: PipelineConfig) -> None:
    entry = run_stage(stage, config)
    click.echo(f"{stage}: {', '.join(entry['artifacts'])}")
    if stage == 'eval':
        click.echo(report_path(config).read_text(encoding='utf-8'), nl=False)


def report_path(config: PipelineConfig) -> Path:
    return Path(config.workdir) / 'report.txt'


@click.group(cls=PipelineGroup)
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), default=None,
              help='Flat key = value config file')
@click.option('--seed', type=int, default=None, help='Global seed')
@click.option('--deterministic', is_flag=True, default=False, help='Single-threaded, deterministic kernels')
@click.option('--workdir', type=click.Path(file_okay=False), default=None, help='Work directory')
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[str], seed: Optional[int], deterministic: bool,
        workdir: Optional[str]) -> None:
    """TMER: explainable sequential recommendation over mined meta-paths."""
    config = PipelineConfig.from_file(config_file) if config_file else PipelineConfig()
    ctx.obj = config.with_overrides(seed=seed, deterministic=True if deterministic else None, workdir=workdir)


@cli.command()
@click.option('--users', type=int, default=None)
@click.option('--items', type=int, default=None)
@click.option('--brands', type=int, default=None)
@click.option('--categories', type=int, default=None)
@click.option('--loyalty', type=float, default=None)
@click.option('--length', type=int, default=None, help='Purchases per user')
@click.pass_obj
def synth(config: PipelineConfig, users, items, brands, categories, loyalty, length) -> None:
    """Generate a planted-brand dataset."""
    _execute('synth', config.with_overrides(
        synth_users=users, synth_items=items, synth_brands=brands, synth_categories=categories,
        synth_loyalty=loyalty, synth_sequence_length=length,
    ))


@cli.command()
@click.option('--interactions', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--metadata', type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def ingest(config: PipelineConfig, interactions, metadata) -> None:
    """Build the graph and the sequences."""
    _execute('ingest', config.with_overrides(interactions_file=interactions, metadata_file=metadata))


@cli.command()
@click.option('--dim', type=int, default=None)
@click.option('--walks', type=int, default=None, help='Walks per node')
@click.option('--walk-len', type=int, default=None)
@click.option('--window', type=int, default=None)
@click.option('--neg', type=int, default=None, help='Negatives per pair')
@click.option('--epochs', type=int, default=None)
@click.pass_obj
def embed(config: PipelineConfig, dim, walks, walk_len, window, neg, epochs) -> None:
    """Learn DeepWalk vectors of users and items."""
    _execute('embed', config.with_overrides(
        dim=dim, walks_per_node=walks, walk_length=walk_len, window=window,
        negatives_per_pair=neg, skipgram_epochs=epochs,
    ))


@cli.command()
@click.option('--max-len', type=int, default=None, help='Maximum path length')
@click.option('--k-actions', type=int, default=None)
@click.option('--episodes', type=int, default=None, help='Episodes per pair')
@click.option('--top-q', type=int, default=None)
@click.pass_obj
def explore(config: PipelineConfig, max_len, k_actions, episodes, top_q) -> None:
    """Train the walk policy and mine paths."""
    _execute('explore', config.with_overrides(
        max_path_len=max_len, k_actions=k_actions, episodes_per_pair=episodes, top_q=top_q,
    ))


@cli.command()
@click.option('--lr', type=float, default=None)
@click.option('--epochs', type=int, default=None)
@click.option('--neg', type=int, default=None, help='Negatives per positive')
@click.pass_obj
def train(config: PipelineConfig, lr, epochs, neg) -> None:
    """Train the recommender."""
    _execute('train', config.with_overrides(lr=lr, epochs=epochs, train_negatives=neg))


@cli.command(name='eval')
@click.option('--neg', type=int, default=None, help='Sampled negatives per instance')
@click.option('--k', 'ks', type=str, default=None, help='Comma-separated cut-offs, e.g. 1,5,10')
@click.option('--corrected', is_flag=True, default=False, help='Correct ranks to the full item universe')
@click.pass_obj
def evaluate(config: PipelineConfig, neg, ks, corrected) -> None:
    """Report HR@K and NDCG@K."""
    _execute('eval', config.with_overrides(n_negatives=neg, ks=ks, corrected=True if corrected else None))


@cli.command()
@click.option('--top-paths', type=int, default=None)
@click.pass_obj
def explain(config: PipelineConfig, top_paths) -> None:
    """Explain each user's first held-out transition."""
    _execute('explain', config.with_overrides(top_paths=top_paths))


@cli.command()
@click.argument('target', type=click.Choice(['all', *STAGES]))
@click.option('--set', 'assignments', multiple=True, metavar='KEY=VALUE', help='Override any config field')
@click.pass_obj
def run(config: PipelineConfig, target: str, assignments) -> None:
    """Run every stage (`all`) or a single one."""
    config = config.with_overrides(**parse_assignments(assignments))
    if target != 'all':
        _execute(target, config)
        return
    entries = run_pipeline(config)
    for entry in entries:
        click.echo(f"{entry['stage']}: {', '.join(entry['artifacts'])}")
    click.echo(report_path(config).read_text(encoding='utf-8'), nl=False)


def main() -> None:
    cli(prog_name='tmer')
