"""Persistence: trajectory bundles, CSV tables and JSON manifests.

A bundle is a directory holding ``manifest.json`` and one ``snap_#####.csv``
per snapshot with columns ``x,u``.  The manifest records the grid, the
snapshot times, file hashes and any metadata needed to rerun the producer.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .flow import Trajectory
from .profiles import Grid

__all__ = ["write_csv", "read_csv", "file_hash", "write_manifest", "save_bundle", "load_bundle", "versions"]

SCHEMA = 1


def versions() -> dict:
    return {"bubbletower": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_csv(path: Path, columns: list[str], rows) -> Path:
    """Header-first CSV; ``rows`` are dicts or sequences in column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in vals])
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        rows = [r for r in csv.reader(fh) if r]
    header, body = rows[0], rows[1:]
    return header, np.array(body, dtype=float).reshape(len(body), len(header))


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: Path, command: str, config: dict, outputs: list[Path], extra: dict | None = None) -> Path:
    """Manifest with the config echo, package versions and a hash per output."""
    directory = Path(directory)
    files = {Path(p).name: file_hash(p) for p in outputs}
    content = hashlib.sha256("".join(f"{k}:{v}" for k, v in sorted(files.items())).encode()).hexdigest()
    manifest = {"schema": SCHEMA, "command": command, "config": config, "versions": versions(),
                "files": files, "content_hash": content}
    if extra:
        manifest.update(extra)
    path = directory / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))
    return path


def save_bundle(traj: Trajectory, directory: Path, meta: dict | None = None) -> Path:
    """Write one CSV per snapshot plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    x = traj.grid.nodes
    files = {}
    for i, (t, v) in enumerate(zip(traj.times, traj.values)):
        name = f"snap_{i:05d}.csv"
        write_csv(directory / name, ["x", "u"], zip(x.tolist(), np.asarray(v).tolist()))
        files[name] = file_hash(directory / name)
    manifest = {
        "schema": SCHEMA,
        "kind": "bundle",
        "grid": {"L": traj.grid.L, "N": traj.grid.N},
        "times": [float(t) for t in traj.times],
        "files": files,
        "outcome": traj.outcome,
        "meta": meta or {},
        "versions": versions(),
        "content_hash": hashlib.sha256("".join(files[k] for k in sorted(files)).encode()).hexdigest(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))
    return directory


def load_bundle(directory: Path, verify: bool = True) -> tuple[Trajectory, dict]:
    """Read a bundle written by :func:`save_bundle`; raises ``FileNotFoundError`` if absent."""
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no bundle manifest in {directory}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("schema") != SCHEMA:
        raise ValueError(f"unsupported bundle schema {manifest.get('schema')!r}")
    grid = Grid(manifest["grid"]["L"], manifest["grid"]["N"])
    traj = Trajectory(grid, meta=manifest.get("meta", {}), outcome=manifest.get("outcome", "ok"))
    for i, t in enumerate(manifest["times"]):
        name = f"snap_{i:05d}.csv"
        if verify and file_hash(directory / name) != manifest["files"][name]:
            raise ValueError(f"hash mismatch for {name}")
        _, data = read_csv(directory / name)
        traj.append(t, data[:, 1])
    return traj, manifest
