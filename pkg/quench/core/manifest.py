"""
Run output: CSV and JSON writers, checksums and the run manifest.

Numbers are written in their shortest round-trip decimal form and rows in
a fixed order, so the same configuration and seed give byte-identical
files. Files whose content carries wall-clock data are marked volatile and
left out of reproducibility checks.
"""
import csv
import hashlib
import io
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Union

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


class OutputError(IOError):
    """Raised when run output cannot be written; files written so far are rolled back."""
    pass


def format_number(value: Any) -> str:
    """Shortest round-trip text for a CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def jsonable(value: Any) -> Any:
    """numpy scalars, arrays and tuples to plain JSON values; non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else str(float(value))
    return value


def dumps_json(data: Any) -> str:
    return json.dumps(jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _rollback_outputs(created_dirs: List[Path], created_files: List[Path]) -> None:
    """
    Remove files written by a failed run, then the directories it created.

    Args:
        created_dirs: Directories created by the run, outermost first
        created_files: Files written by the run, in write order
    """
    for file_path in reversed(created_files):
        try:
            if file_path.exists():
                file_path.unlink()
                logger.debug(f"Rollback: Removed file {file_path}")
        except OSError as e:
            logger.error(f"Error during rollback when removing file {file_path}: {e}")

    for dir_path in reversed(created_dirs):
        try:
            if dir_path.is_dir() and not any(dir_path.iterdir()):
                dir_path.rmdir()
                logger.debug(f"Rollback: Removed directory {dir_path}")
        except OSError as e:
            logger.error(f"Error during rollback when removing directory {dir_path}: {e}")


class OutputWriter:
    """
    Writes the files of one run into an output directory.

    Used as a context manager: if the block raises, every file written so far
    and every directory the writer created is removed again.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.created_dirs: List[Path] = []
        self.created_files: List[Path] = []
        self.checksums: Dict[str, str] = {}
        self.volatile: Set[str] = set()

    def __enter__(self) -> "OutputWriter":
        self.open()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            logger.error(f"Run failed, rolling back output in {self.out_dir}: {exc}")
            self.rollback()
        return False

    def open(self) -> None:
        """
        Create the output directory.

        Raises:
            OutputError: If the directory cannot be created
        """
        missing = []
        probe = self.out_dir
        while not probe.exists():
            missing.append(probe)
            if probe.parent == probe:
                break
            probe = probe.parent
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"Cannot create output directory {self.out_dir}: {e}")
        self.created_dirs.extend(reversed(missing))

    def write_text(self, name: str, text: str, volatile: bool = False) -> Path:
        """
        Write one file and record its checksum.

        Raises:
            OutputError: If the file cannot be written
        """
        path = self.out_dir / name
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as e:
            raise OutputError(f"Cannot write {path}: {e}")
        self.created_files.append(path)
        self.checksums[name] = sha256_file(path)
        if volatile:
            self.volatile.add(name)
        logger.debug(f"Wrote {path}")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) for v in row])
        return self.write_text(name, buffer.getvalue())

    def write_json(self, name: str, data: Any, volatile: bool = False) -> Path:
        return self.write_text(name, dumps_json(data), volatile=volatile)

    def rollback(self) -> None:
        _rollback_outputs(self.created_dirs, self.created_files)
        self.checksums.clear()
        self.volatile.clear()


@contextmanager
def timed(timings: Dict[str, float], name: str) -> Iterator[None]:
    """Record the wall-clock seconds of a block under ``name``."""
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = time.perf_counter() - start


@dataclass
class RunManifest:
    """Configuration snapshot, version, seed, checksums and timings of one run."""

    command: str
    config: Dict[str, Any]
    version: str
    seed: int
    files: Dict[str, str]
    volatile: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def reproducible_files(self) -> Dict[str, str]:
        return {name: digest for name, digest in sorted(self.files.items()) if name not in self.volatile}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": jsonable(self.config),
            "version": self.version,
            "seed": int(self.seed),
            "files": dict(sorted(self.files.items())),
            "volatile": sorted(self.volatile),
            "timings": jsonable(self.timings),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(
                command=data["command"],
                config=data["config"],
                version=data["version"],
                seed=int(data["seed"]),
                files=dict(data["files"]),
                volatile=list(data.get("volatile", [])),
                timings=dict(data.get("timings", {})),
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"Manifest is missing the key {e}")

    def path(self, out_dir: Union[str, Path]) -> Path:
        return Path(out_dir) / f"{self.command}{MANIFEST_SUFFIX}"

    def save(self, out_dir: Union[str, Path]) -> Path:
        """
        Write the manifest next to the files it describes.

        Raises:
            OutputError: If unable to write the file
        """
        path = self.path(out_dir)
        try:
            path.write_text(dumps_json(self.to_dict()), encoding="utf-8")
        except OSError as e:
            raise OutputError(f"Error saving manifest: {e}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        """
        Load a manifest file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the file is not a valid manifest
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"Error parsing manifest: {e}")
        return cls.from_dict(data)

    def verify(self, other: "RunManifest") -> List[str]:
        """Names of reproducible files whose checksums differ between two runs."""
        mine, theirs = self.reproducible_files, other.reproducible_files
        return sorted(name for name in set(mine) | set(theirs) if mine.get(name) != theirs.get(name))

    def verify_directory(self, out_dir: Union[str, Path]) -> List[str]:
        """Names of recorded files that are missing or changed on disk."""
        out_dir = Path(out_dir)
        changed = []
        for name, digest in sorted(self.files.items()):
            path = out_dir / name
            if not path.exists() or sha256_file(path) != digest:
                changed.append(name)
        return changed


def build_manifest(command: str, config: Dict[str, Any], version: str, seed: int, writer: OutputWriter,
                   timings: Optional[Dict[str, float]] = None) -> RunManifest:
    return RunManifest(
        command=command,
        config=config,
        version=version,
        seed=seed,
        files=dict(writer.checksums),
        volatile=sorted(writer.volatile),
        timings=dict(timings or {}),
    )
