"""
Pipeline stages.

Each stage reads the artifacts of the stages before it from the work
directory, writes its own outputs into a staging directory and records a
manifest entry once the outputs are in place.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import torch

from ..core.config import STAGES, PipelineConfig
from ..core.errors import ConfigError, PipelineError
from ..embedding import (
    EmbeddingTable,
    SkipGramConfig,
    complete_attribute_vectors,
    generate_walks,
    train_path_embeddings,
    train_skipgram,
)
from ..evaluation import EvalConfig, PopularityScorer, build_instances, evaluate, format_report
from ..explain import explain_transition, render, summarize_schemes
from ..explorer import (
    ActionTable,
    ExplorerConfig,
    ExplorerError,
    PathStore,
    PolicyModel,
    explore,
    mining_pairs,
    reachable_pairs,
)
from ..hin import (
    InteractionSequence,
    NodeKind,
    SplitError,
    TypedGraph,
    generate_synthetic,
    ingest,
    load_sequences,
    save_sequences,
    split,
)
from ..recommender import (
    PathIndex,
    Recommender,
    TmerModel,
    TrainConfig,
    TrainingDiverged,
    build_training_data,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .workspace import Workspace

# Configure logging
logger = logging.getLogger(__name__)

# Offsets keep the lazy-mining streams of different stages independent
_TRAIN_MINING_SEED = 1
_EVAL_MINING_SEED = 3
_EXPLAIN_MINING_SEED = 4

# Lives in the work dir itself; staged outputs are dropped when a stage fails
LAST_GOOD_CHECKPOINT = 'model.last_good.pt'


@dataclass
class StageContext:
    """
    What a stage function works with.

    Attributes:
        workspace: The work directory
        config: Pipeline settings
        scratch: Staging directory receiving the stage's outputs
        inputs: Files the stage read, hashed into its manifest entry
    """
    workspace: Workspace
    config: PipelineConfig
    scratch: Path
    inputs: Dict[str, Path] = field(default_factory=dict)

    def require(self, artifact: str, description: str, producer: str) -> Path:
        path = self.workspace.require(artifact, description, producer)
        self.inputs[artifact] = path
        return path

    def output(self, name: str) -> Path:
        return self.scratch / name


def configure_determinism(config: PipelineConfig) -> None:
    """Seed torch; in deterministic mode also pin kernels and threads."""
    torch.manual_seed(config.seed)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')


def _load_graph(ctx: StageContext) -> TypedGraph:
    path = ctx.require('graph.hin', 'graph', 'ingest')
    return TypedGraph.from_text(path.read_text(encoding='utf-8'))


def _load_sequences(ctx: StageContext) -> List[InteractionSequence]:
    return load_sequences(ctx.require('sequences.tsv', 'interaction sequences', 'ingest'))


def _load_store(ctx: StageContext, graph: TypedGraph, paths_file: str, producer: str, seed_offset: int) -> PathStore:
    """Mined paths with the trained policy attached for lazy mining."""
    config = ctx.config
    policy = PolicyModel.load(ctx.require('policy.json', 'walk policy', 'explore'))
    table = EmbeddingTable.load(ctx.require('policy_embeddings.txt', 'policy embedding table', 'explore'))
    actions = ActionTable.build(graph, policy, table.matrix_for(graph))
    return PathStore.load(
        ctx.require(paths_file, 'mined paths', producer),
        graph,
        actions,
        q=config.top_q,
        max_steps=policy.max_steps,
        episodes_per_pair=config.eval_episodes_per_pair,
        seed=config.seed + seed_offset,
    )


def _load_recommender(ctx: StageContext, graph: TypedGraph, seed_offset: int) -> Recommender:
    model, _, _ = load_checkpoint(ctx.require('model.pt', 'trained model', 'train'))
    store = _load_store(ctx, graph, 'train_paths.tsv', 'train', seed_offset)
    return Recommender(model, PathIndex(store, graph, ctx.config.top_q, store.max_steps + 1), graph)


# Stages

def stage_synth(ctx: StageContext) -> None:
    """Planted-brand dataset: interactions.tsv, metadata.tsv, planted.tsv."""
    config = ctx.config
    planted = generate_synthetic(
        ctx.output('interactions.tsv'),
        ctx.output('metadata.tsv'),
        n_users=config.synth_users,
        n_items=config.synth_items,
        n_brands=config.synth_brands,
        n_categories=config.synth_categories,
        loyalty=config.synth_loyalty,
        sequence_length=config.synth_sequence_length,
        seed=config.seed,
    )
    _write_lines(ctx.output('planted.tsv'), [f"{user}\tbrand{brand}" for user, brand in planted.items()])


def stage_ingest(ctx: StageContext) -> None:
    """Graph, id map and sequences from the configured or synthesized files."""
    config = ctx.config
    if config.interactions_file is not None:
        interactions = Path(config.interactions_file)
        metadata = Path(config.metadata_file) if config.metadata_file else None
        if not interactions.exists():
            raise ConfigError(f"Interactions file '{interactions}' does not exist")
        ctx.inputs['interactions_file'] = interactions
        if metadata is not None:
            if not metadata.exists():
                raise ConfigError(f"Metadata file '{metadata}' does not exist")
            ctx.inputs['metadata_file'] = metadata
    else:
        interactions = ctx.require('interactions.tsv', 'interactions file', 'synth')
        metadata = ctx.require('metadata.tsv', 'metadata file', 'synth')

    result = ingest(
        interactions,
        metadata,
        min_interactions=config.min_interactions,
        max_sequence_length=config.max_sequence_length,
        train_fraction=config.train_fraction,
        seed=config.seed,
    )
    ctx.output('graph.hin').write_text(result.graph.to_text(), encoding='utf-8')
    result.id_map.save(ctx.output('idmap.tsv'))
    save_sequences(result.sequences, ctx.output('sequences.tsv'))


def stage_embed(ctx: StageContext) -> None:
    """DeepWalk vectors of users and items."""
    config = ctx.config
    graph = _load_graph(ctx)
    corpus = generate_walks(graph, config.walks_per_node, config.walk_length, config.seed)
    table = train_skipgram(corpus, SkipGramConfig.from_pipeline(config))
    table.save(ctx.output('walk_embeddings.txt'))


def stage_explore(ctx: StageContext) -> None:
    """Policy training, path mining and the second embedding stage."""
    config = ctx.config
    graph = _load_graph(ctx)
    walk_table = EmbeddingTable.load(ctx.require('walk_embeddings.txt', 'embedding table', 'embed'))
    sequences = _load_sequences(ctx)

    # The policy reads the table as persisted, so reloaded stores score paths identically
    completed = complete_attribute_vectors(walk_table, graph, seed=config.seed)
    completed.save(ctx.output('policy_embeddings.txt'))
    completed = EmbeddingTable.load(ctx.output('policy_embeddings.txt'))

    pairs = reachable_pairs(
        mining_pairs(sequences, config.n_bridge, config.n_train, config.min_interactions),
        graph,
        config.max_path_len,
    )
    if not pairs:
        raise ExplorerError("No mining pair is reachable within max_path_len")
    policy, store, curve = explore(pairs, completed, graph, ExplorerConfig.from_pipeline(config))
    policy.save(ctx.output('policy.json'))
    store.save(ctx.output('paths.tsv'))
    _write_lines(ctx.output('policy_rewards.tsv'),
                 [f"{batch}\t{value!r}" for batch, value in enumerate(curve, start=1)])

    final = train_path_embeddings(
        store.all_paths(), graph, completed,
        SkipGramConfig.from_pipeline(config, epochs=config.path_skipgram_epochs),
    )
    final.save(ctx.output('embeddings.txt'))


def stage_train(ctx: StageContext) -> None:
    """
    End-to-end recommender training.

    If the loss diverges, the last finite parameters go to model.last_good.pt
    before the stage fails.
    """
    config = ctx.config
    graph = _load_graph(ctx)
    sequences = _load_sequences(ctx)
    table = EmbeddingTable.load(ctx.require('embeddings.txt', 'final embedding table', 'explore'))
    store = _load_store(ctx, graph, 'paths.tsv', 'explore', _TRAIN_MINING_SEED)

    train_config = TrainConfig.from_pipeline(config)
    torch.manual_seed(config.seed)
    model = TmerModel.from_table(table, graph, **train_config.model_options())
    data = build_training_data(sequences, graph, train_config)
    index = PathIndex(store, graph, config.top_q, store.max_steps + 1)
    try:
        losses = train(data, model, index, graph, train_config)
    except TrainingDiverged as e:
        rescue = ctx.workspace.path(LAST_GOOD_CHECKPOINT)
        save_checkpoint(rescue, model, train_config, e.losses)
        logger.error(f"Saved the parameters of the last finite epoch to {rescue}")
        raise

    save_checkpoint(ctx.output('model.pt'), model, train_config, losses)
    _write_lines(ctx.output('losses.tsv'), [f"{epoch}\t{value!r}" for epoch, value in enumerate(losses, start=1)])
    store.save(ctx.output('train_paths.tsv'))


def stage_eval(ctx: StageContext) -> None:
    """HR@K and NDCG@K of the trained model next to a popularity baseline."""
    config = ctx.config
    graph = _load_graph(ctx)
    sequences = _load_sequences(ctx)
    recommender = _load_recommender(ctx, graph, _EVAL_MINING_SEED)

    eval_config = EvalConfig.from_pipeline(config)
    instances, skipped = build_instances(sequences, graph, eval_config)
    universe = graph.count(NodeKind.ITEM)
    report = evaluate(recommender, instances, eval_config, universe, 'TMER-RL', skipped)
    popularity = PopularityScorer.from_sequences(sequences, config.n_bridge, config.n_train, config.min_interactions)
    baseline = evaluate(popularity, instances, eval_config, universe, 'Popularity', skipped)

    ctx.output('report.txt').write_text(format_report([report, baseline]), encoding='utf-8')
    report.save_ranks(ctx.output('ranks.tsv'))
    baseline.save_ranks(ctx.output('popularity_ranks.tsv'))


def stage_explain(ctx: StageContext) -> None:
    """Path evidence of each user's first held-out transition."""
    config = ctx.config
    graph = _load_graph(ctx)
    sequences = _load_sequences(ctx)
    recommender = _load_recommender(ctx, graph, _EXPLAIN_MINING_SEED)

    transitions = []
    for seq in sequences:
        try:
            bridge, train_items, test = split(seq, config.n_bridge, config.n_train, 1, config.min_interactions)
        except SplitError as e:
            logger.warning(f"Skipping user in explanations: {str(e)}")
            continue
        transitions.append((seq.user, (bridge + train_items)[-1], test[0]))
    recommender.prepare([(previous, item) for _, previous, item in transitions])

    records = [
        explain_transition(user, previous, item, recommender, config.top_paths)
        for user, previous, item in transitions
    ]
    aliases = {NodeKind.BRAND.letter: config.brand_alias, NodeKind.CATEGORY.letter: config.category_alias}
    schemes = summarize_schemes(records)
    ctx.output('explanations.json').write_text(render(records, 'structured'), encoding='utf-8')
    ctx.output('explanations.txt').write_text(
        render(records, 'text', aliases) + '\n' + render(schemes, 'text', aliases), encoding='utf-8',
    )
    _write_lines(ctx.output('schemes.tsv'), [f"{scheme}\t{count}" for scheme, count in schemes.items()])


STAGE_FUNCTIONS: Dict[str, Callable[[StageContext], None]] = {
    'synth': stage_synth,
    'ingest': stage_ingest,
    'embed': stage_embed,
    'explore': stage_explore,
    'train': stage_train,
    'eval': stage_eval,
    'explain': stage_explain,
}


def _run(workspace: Workspace, stage: str, config: PipelineConfig) -> Dict:
    logger.info(f"Running stage '{stage}' in {workspace.root}")
    workspace.forget(stage)
    try:
        with workspace.staging(stage) as scratch:
            ctx = StageContext(workspace, config, scratch)
            STAGE_FUNCTIONS[stage](ctx)
            artifacts = sorted(path.name for path in scratch.iterdir())
    except PipelineError as e:
        logger.error(f"Stage '{stage}' failed: {str(e)}")
        raise
    entry = workspace.record(stage, artifacts, ctx.inputs, config.seed)
    logger.info(f"Stage '{stage}' wrote {', '.join(artifacts)}")
    return entry


def run_stage(stage: str, config: PipelineConfig) -> Dict:
    """
    Run one stage under the work directory's lock.

    Args:
        stage: One of synth, ingest, embed, explore, train, eval, explain
        config: Pipeline settings

    Returns:
        The stage's manifest entry

    Raises:
        ConfigError: If the stage is unknown
        StageError: If a prerequisite artifact is missing or the work dir is locked
    """
    if stage not in STAGE_FUNCTIONS:
        raise ConfigError(f"Unknown stage '{stage}'; expected one of {', '.join(STAGES)}")
    workspace = Workspace(config.workdir)
    configure_determinism(config)
    with workspace.locked():
        return _run(workspace, stage, config)


def pipeline_stages(config: PipelineConfig) -> List[str]:
    """Stages of a full run; synth only runs when no interactions file is configured."""
    return [stage for stage in STAGES if stage != 'synth' or config.interactions_file is None]


def run_pipeline(config: PipelineConfig, stages: Optional[Sequence[str]] = None) -> List[Dict]:
    """
    Run stages in order under a single lock.

    Returns:
        Manifest entries of the stages run
    """
    stages = list(stages) if stages is not None else pipeline_stages(config)
    unknown = [stage for stage in stages if stage not in STAGE_FUNCTIONS]
    if unknown:
        raise ConfigError(f"Unknown stages: {', '.join(unknown)}")
    workspace = Workspace(config.workdir)
    configure_determinism(config)
    with workspace.locked():
        return [_run(workspace, stage, config) for stage in stages]
