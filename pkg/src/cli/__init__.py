"""
Command-line package of the TMER pipeline: stages, work directory and click app.
"""
import logging

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

from .workspace import LOCK, MANIFEST, VERSION, StageError, Workspace, atomic_write_text, file_hash
from .stages import (
    STAGE_FUNCTIONS,
    StageContext,
    configure_determinism,
    pipeline_stages,
    run_pipeline,
    run_stage,
)
from .app import cli, main, parse_assignments

__all__ = [
    'LOCK',
    'MANIFEST',
    'VERSION',
    'StageError',
    'Workspace',
    'atomic_write_text',
    'file_hash',
    'STAGE_FUNCTIONS',
    'StageContext',
    'configure_determinism',
    'pipeline_stages',
    'run_pipeline',
    'run_stage',
    'cli',
    'main',
    'parse_assignments',
]
