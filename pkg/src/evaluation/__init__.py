"""
Evaluation package: HR@K / NDCG@K with sampled negatives.
"""
from .metrics import EvaluationError, hr_at_k, ndcg_at_k, pessimistic_rank, corrected_rank
from .evaluator import (
    EvalConfig,
    EvalReport,
    InstanceResult,
    PopularityScorer,
    Scorer,
    EvalInstance,
    build_instances,
    evaluate,
    evaluate_sequences,
    format_report,
    rank_instance,
)

__all__ = [
    'EvaluationError',
    'hr_at_k',
    'ndcg_at_k',
    'pessimistic_rank',
    'corrected_rank',
    'EvalConfig',
    'EvalReport',
    'InstanceResult',
    'PopularityScorer',
    'Scorer',
    'EvalInstance',
    'build_instances',
    'evaluate',
    'evaluate_sequences',
    'format_report',
    'rank_instance',
]
