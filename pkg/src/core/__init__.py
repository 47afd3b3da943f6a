"""
Core package for the TMER pipeline: shared errors and configuration.
"""
from .errors import PipelineError, ConfigError, DataError, NumericalError
from .config import PipelineConfig, STAGES

__all__ = [
    'PipelineError',
    'ConfigError',
    'DataError',
    'NumericalError',
    'PipelineConfig',
    'STAGES',
]
