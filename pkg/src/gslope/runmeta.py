"""Run manifests: provenance for every CLI/experiment output directory."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__


def spec_hash(spec_dict: dict) -> str:
    """Stable hash of a spec: canonical JSON, sorted keys."""
    blob = json.dumps(spec_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir,
    spec_dict: dict,
    seed,
    outputs: list[str],
    wall_time_s: float,
    command: str = "",
) -> Path:
    """Write manifest.json; data outputs are hashed so reruns with the same
    spec and seed can be verified bitwise (wall time is the only volatile
    field)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "spec": spec_dict,
        "spec_hash": spec_hash(spec_dict),
        "seed": seed,
        "wall_time_s": round(wall_time_s, 3),
        "artifact_version": __version__,
        "outputs": sorted(outputs),
        "output_hashes": {
            name: file_sha256(out_dir / name)
            for name in sorted(outputs)
            if (out_dir / name).is_file()
        },
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path
