"""Run manifests, artifact digests, atomic writes, and output-dir locking."""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import tempfile
from pathlib import Path


class StaleArtifactError(RuntimeError):
    """An upstream artifact is missing or its digest no longer matches."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(directory: str | Path) -> str:
    """Digest of a directory artifact: file names and contents, sorted."""
    directory = Path(directory)
    h = hashlib.sha256()
    for path in sorted(directory.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(directory)).encode("utf-8"))
            h.update(path.read_bytes())
    return h.hexdigest()


def artifact_digest(path: str | Path) -> str:
    path = Path(path)
    return sha256_tree(path) if path.is_dir() else sha256_file(path)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file plus rename so a crash never leaves partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class Manifest:
    """Per-output-directory record of stage runs and artifact digests."""

    FILENAME = "manifest.json"

    def __init__(self, output_dir: str | Path, tool_version: str = ""):
        self.output_dir = Path(output_dir)
        self.data: dict = {"tool_version": tool_version, "stages": {}}
        path = self.output_dir / self.FILENAME
        if path.exists():
            self.data = json.loads(path.read_text(encoding="utf-8"))
            if tool_version:
                self.data["tool_version"] = tool_version

    def record_stage(
        self,
        stage: str,
        config_digest: str,
        inputs: dict[str, str],
        outputs: dict[str, str],
        wall_seconds: float,
    ) -> None:
        self.data.setdefault("stages", {})[stage] = {
            "config_digest": config_digest,
            "inputs": inputs,
            "outputs": outputs,
            "wall_seconds": round(wall_seconds, 3),
        }

    def save(self) -> None:
        atomic_write_text(
            self.output_dir / self.FILENAME,
            json.dumps(self.data, indent=2, sort_keys=True) + "\n",
        )

    def recorded_output(self, artifact: str) -> tuple[str, str] | None:
        """Return (producing stage, digest) for an artifact name, if recorded."""
        for stage, info in self.data.get("stages", {}).items():
            if artifact in info.get("outputs", {}):
                return stage, info["outputs"][artifact]
        return None

    def require(self, artifact: str, producing_stage: str, force: bool = False) -> Path:
        """Resolve an upstream artifact, checking existence and digest freshness."""
        path = self.output_dir / artifact
        if not path.exists():
            raise StaleArtifactError(
                f"missing artifact {artifact!r}; run the {producing_stage!r} stage first"
            )
        recorded = self.recorded_output(artifact)
        if recorded is None:
            if not force:
                raise StaleArtifactError(
                    f"artifact {artifact!r} is not recorded in the manifest; "
                    f"re-run the {producing_stage!r} stage (or pass --force)"
                )
            return path
        _, digest = recorded
        if not force and artifact_digest(path) != digest:
            raise StaleArtifactError(
                f"artifact {artifact!r} was modified after the {producing_stage!r} "
                f"stage produced it; re-run {producing_stage!r} (or pass --force)"
            )
        return path


@contextlib.contextmanager
def output_lock(output_dir: str | Path):
    """One command at a time per output directory."""
    lock_path = Path(output_dir) / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"output directory {output_dir} is locked by another command "
            f"(stale lock? remove {lock_path})"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.unlink(lock_path)
