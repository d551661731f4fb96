"""Run manifests: every CLI invocation records its command, resolved
parameters, master seed, version, and input content hashes next to its
outputs, so any artifact can be regenerated from its manifest alone."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

from . import __version__
from .tomlio import dump_toml

__all__ = ["file_sha256", "write_run_manifest"]


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    target: str | os.PathLike,
    command: str,
    params: dict,
    inputs: list[str | os.PathLike] | None = None,
    seed: int | None = None,
) -> Path:
    """Write the manifest next to ``target`` (inside it if a directory)."""
    target = Path(target)
    if target.is_dir():
        path = target / "run_manifest.toml"
    else:
        path = target.with_name(target.name + ".manifest.toml")
    hashes = {}
    for p in inputs or []:
        p = Path(p)
        if p.is_file():
            hashes[p.name] = file_sha256(p)
    doc: dict = {
        "command": command,
        "tool_version": __version__,
        "params": {k: v for k, v in sorted(params.items()) if v is not None},
    }
    if seed is not None:
        doc["master_seed"] = seed
    if hashes:
        doc["input_hashes"] = hashes
    dump_toml(path, doc)
    return path
