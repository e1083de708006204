"""
Run Artifact Store

Owns one run output directory: takes the single-instance lock and writes
every artifact (WAV, CSV, JSON) through one place so the manifest sees them.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from src.common.errors import RunLockedError
from src.dependency.dependency_map import write_matrix_csv
from src.filterbank.wav_io import write_wav

logger = logging.getLogger(__name__)

LOCK_NAME = ".run.lock"


class ArtifactStore:
    """Output directory of a single run, usable as a context manager"""

    def __init__(self, output_dir: Union[str, Path]):
        self.root = Path(output_dir)
        self.artifacts: List[Path] = []
        self._lock_fd: Optional[int] = None

    @property
    def lock_path(self) -> Path:
        return self.root / LOCK_NAME

    def open(self) -> "ArtifactStore":
        """Create the directory and take the run lock"""
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            self._lock_fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise RunLockedError(f"{self.root} is in use by another run ({self.lock_path} exists)") from exc
        os.write(self._lock_fd, str(os.getpid()).encode("ascii"))
        logger.info("Opened run directory %s", self.root)
        return self

    def close(self):
        """Release the run lock"""
        if self._lock_fd is None:
            return
        os.close(self._lock_fd)
        self._lock_fd = None
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            logger.warning("Run lock %s vanished before release", self.lock_path)

    def __enter__(self) -> "ArtifactStore":
        return self.open()

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False

    def health_check(self) -> str:
        """Store health check"""
        return "healthy" if self._lock_fd is not None and self.root.is_dir() else "unhealthy"

    def path(self, name: str) -> Path:
        return self.root / name

    def _record(self, path: Path) -> Path:
        if path not in self.artifacts:
            self.artifacts.append(path)
        logger.debug("Wrote artifact %s", path)
        return path

    def write_wav(self, name: str, samples: np.ndarray, sample_rate: int) -> Path:
        path = self.path(name)
        write_wav(path, samples, sample_rate)
        return self._record(path)

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return self._record(path)

    def write_matrix(self, name: str, matrix: np.ndarray) -> Path:
        path = self.path(name)
        write_matrix_csv(path, np.asarray(matrix))
        return self._record(path)

    def write_table(self, name: str, header: Sequence[str], rows) -> Path:
        """CSV with exact float repr so reruns compare byte for byte"""
        path = self.path(name)
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(",".join(header) + "\n")
            for row in rows:
                handle.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
        return self._record(path)

    def adopt(self, path: Union[str, Path]) -> Path:
        """Register a file written by another writer"""
        return self._record(Path(path))
