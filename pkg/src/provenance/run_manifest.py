"""
Run manifest

Records which artifacts a run produced with their size and SHA-256, so a
rerun can be checked against the original byte for byte.
"""

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List


@dataclass
class ManifestEntry:
    """One artifact file"""
    name: str
    size: int
    sha256: str


def file_digest(path: Path, chunk_size: int = 1 << 16) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(paths: Iterable[Path], command: str) -> Dict[str, Any]:
    entries: List[ManifestEntry] = []
    for path in sorted(Path(p) for p in paths):
        entries.append(ManifestEntry(name=path.name, size=path.stat().st_size, sha256=file_digest(path)))
    return {"command": command, "artifacts": [asdict(entry) for entry in entries]}


def verify_manifest(manifest: Dict[str, Any], directory: Path) -> List[str]:
    """Names of artifacts that are missing or changed"""
    mismatched = []
    for entry in manifest["artifacts"]:
        path = Path(directory) / entry["name"]
        if not path.exists() or file_digest(path) != entry["sha256"]:
            mismatched.append(entry["name"])
    return mismatched
