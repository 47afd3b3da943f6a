"""
Error hierarchy shared by every stage of the pipeline.

Each subpackage derives its own narrow exceptions from one of these classes.
The CLI maps the class to a process exit code; library code never exits.
"""


class PipelineError(Exception):
    """Base exception for all pipeline errors."""
    exit_code = 2


class ConfigError(PipelineError):
    """Raised for invalid configuration values or command-line usage."""
    exit_code = 1


class DataError(PipelineError):
    """Raised when input data or a persisted artifact cannot be used."""
    exit_code = 2


class NumericalError(PipelineError):
    """Raised when a computation produces non-finite values."""
    exit_code = 3
