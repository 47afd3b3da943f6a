"""
Explanation package: attention-weighted path evidence and scheme summaries.
"""
from .records import (
    NO_EVIDENCE,
    ExplainError,
    PathEvidence,
    ExplanationRecord,
    scheme_of,
    explain_transition,
    summarize_schemes,
    render,
    parse_records,
)

__all__ = [
    'NO_EVIDENCE',
    'ExplainError',
    'PathEvidence',
    'ExplanationRecord',
    'scheme_of',
    'explain_transition',
    'summarize_schemes',
    'render',
    'parse_records',
]
