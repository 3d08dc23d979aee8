import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Union

from errors import SchemaError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_inputs(paths: Iterable[Union[str, Path]]) -> Dict[str, str]:
    """sha256 per input file; a directory contributes every file below it"""
    hashes: Dict[str, str] = {}
    for path in paths:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for file in files:
            hashes[file.as_posix()] = file_sha256(file)
    return dict(sorted(hashes.items()))


@dataclass
class RunManifest:
    """
    What a command ran on and what it produced.

    No timestamps or host details go in, so identical runs write identical
    manifests.
    """
    command: str
    config: dict
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
        }

    @classmethod
    def from_dict(cls, document: dict) -> "RunManifest":
        try:
            return cls(
                command=str(document["command"]),
                config=dict(document["config"]),
                seed=int(document["seed"]),
                inputs=dict(document.get("inputs", {})),
                outputs=list(document.get("outputs", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid run manifest: {type(e).__name__}: {e}") from e

    def save(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Wrote manifest for '{self.command}' with {len(self.outputs)} outputs to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path} is not a valid manifest: {e}") from e

    def changed_inputs(self) -> List[str]:
        """Recorded inputs that are missing or whose content hash differs now"""
        changed = []
        for path, digest in self.inputs.items():
            if not Path(path).is_file() or file_sha256(path) != digest:
                changed.append(path)
        return changed

    def is_input_changed(self) -> bool:
        return bool(self.changed_inputs())
