"""
Path exploration package.

Mines user->item and item->item path instances with a REINFORCE-trained
walk policy and ranks them by their mean step score.
"""
from .policy import (
    ExplorerError,
    PolicyState,
    PolicyModel,
    ActionTable,
    action_scores,
    candidate_nodes,
    pruned_distribution,
    step,
    reward,
)
from .episodes import (
    PathInstance,
    TrajectoryStep,
    EpisodeBatch,
    run_episode,
    sample_episodes,
    trajectory_log_prob,
    reinforce_update,
    reach_probability,
    train_policy,
)
from .mining import (
    ExplorerConfig,
    PathStore,
    rank_paths,
    mine_paths,
    mine_with_actions,
    mining_pairs,
    reachable_pairs,
    explore,
)

__all__ = [
    'ExplorerError',
    'PolicyState',
    'PolicyModel',
    'ActionTable',
    'action_scores',
    'candidate_nodes',
    'pruned_distribution',
    'step',
    'reward',
    'PathInstance',
    'TrajectoryStep',
    'EpisodeBatch',
    'run_episode',
    'sample_episodes',
    'trajectory_log_prob',
    'reinforce_update',
    'reach_probability',
    'train_policy',
    'ExplorerConfig',
    'PathStore',
    'rank_paths',
    'mine_paths',
    'mine_with_actions',
    'mining_pairs',
    'reachable_pairs',
    'explore',
]
