"""
Work directory bookkeeping: manifest, lock file and atomic stage outputs.
"""
import hashlib
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

from ..core.errors import PipelineError

# Configure logging
logger = logging.getLogger(__name__)

VERSION = '1.0.0'
MANIFEST = 'manifest.json'
LOCK = '.tmer.lock'


class StageError(PipelineError):
    """Raised when a stage cannot run: missing prerequisites or a locked work dir."""
    exit_code = 1


def file_hash(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    """Write a file through a temporary sibling and os.replace."""
    path = Path(path)
    handle, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(handle, 'w', encoding='utf-8') as stream:
            stream.write(text)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise


class Workspace:
    """
    A pipeline work directory.

    Stage outputs are written into a private staging directory and moved into
    place only when the stage succeeds; the manifest entry is written last.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.logger = logger

    def path(self, name: str) -> Path:
        return self.root / name

    # Manifest

    def manifest(self) -> Dict:
        path = self.path(MANIFEST)
        if not path.exists():
            return {'version': VERSION, 'stages': {}}
        try:
            return json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise StageError(f"Manifest '{path}' is corrupt: {str(e)}")

    def entry(self, stage: str) -> Optional[Dict]:
        return self.manifest()['stages'].get(stage)

    def record(self, stage: str, artifacts: List[str], inputs: Dict[str, Path], seed: int) -> Dict:
        """Add or replace a stage's manifest entry."""
        manifest = self.manifest()
        entry = {
            'stage': stage,
            'artifacts': {name: file_hash(self.path(name)) for name in sorted(artifacts)},
            'input_hashes': {name: file_hash(path) for name, path in sorted(inputs.items())},
            'seed': seed,
            'version': VERSION,
        }
        manifest['stages'][stage] = entry
        atomic_write_text(self.path(MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + '\n')
        return entry

    def forget(self, stage: str) -> None:
        """Drop a stage's manifest entry before its outputs are replaced."""
        manifest = self.manifest()
        if manifest['stages'].pop(stage, None) is not None:
            atomic_write_text(self.path(MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + '\n')

    def require(self, artifact: str, description: str, producer: str) -> Path:
        """
        Path of an artifact a stage depends on.

        Raises:
            StageError: If the artifact is absent or not recorded by its producer
        """
        path = self.path(artifact)
        entry = self.entry(producer)
        if not path.exists() or entry is None or artifact not in entry['artifacts']:
            raise StageError(f"{description} missing: run the '{producer}' stage first ({artifact})")
        return path

    # Lock and staging

    @contextmanager
    def locked(self) -> Iterator[None]:
        """
        Hold the work directory's lock file.

        Raises:
            StageError: If another pipeline holds the lock
        """
        lock = self.path(LOCK)
        try:
            handle = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError(f"Work directory '{self.root}' is locked by another run ({lock})")
        try:
            os.write(handle, str(os.getpid()).encode())
            os.close(handle)
            yield
        finally:
            if lock.exists():
                lock.unlink()

    @contextmanager
    def staging(self, stage: str) -> Iterator[Path]:
        """
        A scratch directory whose files are moved into the work dir on success.

        On failure the scratch directory is removed and nothing is moved.
        """
        scratch = Path(tempfile.mkdtemp(dir=self.root, prefix=f".stage-{stage}-"))
        try:
            yield scratch
            for produced in sorted(scratch.iterdir()):
                os.replace(produced, self.path(produced.name))
        finally:
            shutil.rmtree(scratch, ignore_errors=True)
