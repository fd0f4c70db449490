"""Run manifests: a JSON record of what a training run was made of.

The manifest pins the full configuration, sha256 fingerprints of every
input dataset, the paths of produced checkpoints and metric files, and
wall-clock timings, so a finished run directory is self-describing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .adversary import HeadSpec
from .errors import DataError
from .training import TrainConfig

MANIFEST_FORMAT = "pivotnet-run"
MANIFEST_VERSION = 1


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    config: TrainConfig
    dataset_fingerprints: dict[str, str] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    tool_version: str = __version__

    def add_dataset(self, path: str | Path) -> None:
        self.dataset_fingerprints[str(path)] = file_sha256(path)

    def add_artifact(self, name: str, path: str | Path) -> None:
        self.artifacts[name] = str(path)


def save_manifest(manifest: RunManifest, path: str | Path) -> None:
    config = asdict(manifest.config)
    config["head"] = {"kind": manifest.config.head.kind, "size": manifest.config.head.size}
    payload = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "tool_version": manifest.tool_version,
        "config": config,
        "dataset_fingerprints": manifest.dataset_fingerprints,
        "artifacts": manifest.artifacts,
        "timings": manifest.timings,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> RunManifest:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if payload.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a run manifest")
    if payload.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {payload.get('version')}")
    raw = dict(payload["config"])
    raw["head"] = HeadSpec(raw["head"]["kind"], raw["head"]["size"])
    config = TrainConfig(**raw)
    return RunManifest(
        config=config,
        dataset_fingerprints=dict(payload["dataset_fingerprints"]),
        artifacts=dict(payload["artifacts"]),
        timings=dict(payload["timings"]),
        tool_version=payload["tool_version"],
    )
